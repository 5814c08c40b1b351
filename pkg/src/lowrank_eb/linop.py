"""Matrix-free linear operators and the two imaging forward models.

Vectors living on a :class:`GridGeometry` are flattened in C order from an
image array of shape ``(ny, nx)``, so the x-index varies fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ConfigError

__all__ = [
    "LinearOperator",
    "from_matrix",
    "identity",
    "zero",
    "dense_from_operator",
    "GridGeometry",
    "BlurSpec",
    "RadonSpec",
    "blur_operator",
    "radon_operator",
]

DENSE_CAPACITY = 10**7


class LinearOperator:
    """A real linear map ``R^cols -> R^rows`` given by its action and adjoint action.

    ``matmat`` and ``rmatmat`` receive 2-D blocks (one input vector per
    column). ``apply``/``apply_adjoint`` accept either a vector or a block.
    """

    def __init__(
        self,
        shape: tuple[int, int],
        matmat: Callable[[np.ndarray], np.ndarray],
        rmatmat: Callable[[np.ndarray], np.ndarray],
        name: str = "LinearOperator",
    ):
        rows, cols = (int(s) for s in shape)
        if rows < 0 or cols < 0:
            raise ConfigError(f"invalid operator shape {shape}")
        self.shape = (rows, cols)
        self._matmat = matmat
        self._rmatmat = rmatmat
        self.name = name

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    def _run(self, fn, x, n_in, n_out):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            if x.shape[0] != n_in:
                raise ValueError(f"{self.name}: expected length {n_in}, got {x.shape[0]}")
            return np.asarray(fn(x[:, None])).reshape(n_out)
        if x.ndim != 2 or x.shape[0] != n_in:
            raise ValueError(f"{self.name}: expected ({n_in}, k) block, got {x.shape}")
        return np.asarray(fn(x)).reshape(n_out, x.shape[1])

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self._run(self._matmat, x, self.cols, self.rows)

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        return self._run(self._rmatmat, y, self.rows, self.cols)

    def __matmul__(self, x):
        return self.apply(x)

    @property
    def T(self) -> "LinearOperator":
        return LinearOperator(
            (self.cols, self.rows), self._rmatmat, self._matmat, name=f"{self.name}.T"
        )

    def __repr__(self):
        return f"<{self.name} {self.rows}x{self.cols}>"


def from_matrix(M) -> LinearOperator:
    """Wrap a dense array or scipy sparse matrix."""
    if sp.issparse(M):
        M = M.tocsr()
        Mt = M.T.tocsr()
        return LinearOperator(M.shape, lambda X: M @ X, lambda Y: Mt @ Y, name="SparseMatrix")
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ConfigError("matrix operator needs a 2-D array")
    return LinearOperator(M.shape, lambda X: M @ X, lambda Y: M.T @ Y, name="Matrix")


def identity(n: int, scale: float = 1.0) -> LinearOperator:
    return LinearOperator((n, n), lambda X: scale * X, lambda Y: scale * Y, name="Identity")


def zero(rows: int, cols: int) -> LinearOperator:
    return LinearOperator(
        (rows, cols),
        lambda X: np.zeros((rows, X.shape[1])),
        lambda Y: np.zeros((cols, Y.shape[1])),
        name="Zero",
    )


def as_operator(A) -> LinearOperator:
    if isinstance(A, LinearOperator):
        return A
    return from_matrix(A)


def dense_from_operator(A: LinearOperator, max_entries: int = DENSE_CAPACITY, block: int = 512):
    """Materialize ``A`` column by column (applied to standard basis blocks)."""
    A = as_operator(A)
    if A.rows * A.cols > max_entries:
        raise CapacityError(
            f"dense materialization of {A.rows}x{A.cols} exceeds {max_entries} entries"
        )
    out = np.empty(A.shape)
    for start in range(0, A.cols, block):
        stop = min(start + block, A.cols)
        E = np.zeros((A.cols, stop - start))
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        out[:, start:stop] = A.apply(E)
    return out


@dataclass(frozen=True)
class GridGeometry:
    """Regular pixel grid on a rectangle ``(xmin, xmax, ymin, ymax)``.

    Points are pixel centers.
    """

    nx: int
    ny: int
    domain: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)

    def __post_init__(self):
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ConfigError(f"grid needs nx, ny >= 1, got {self.nx}x{self.ny}")
        xmin, xmax, ymin, ymax = self.domain
        if not (xmin < xmax and ymin < ymax):
            raise ConfigError(f"grid domain bounds not well ordered: {self.domain}")
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))

    @property
    def n(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return (self.domain[1] - self.domain[0]) / self.nx

    @property
    def hy(self) -> float:
        return (self.domain[3] - self.domain[2]) / self.ny

    @property
    def pixel_area(self) -> float:
        return self.hx * self.hy

    @property
    def x_centers(self) -> np.ndarray:
        return self.domain[0] + (np.arange(self.nx) + 0.5) * self.hx

    @property
    def y_centers(self) -> np.ndarray:
        return self.domain[2] + (np.arange(self.ny) + 0.5) * self.hy

    def points(self) -> np.ndarray:
        """Pixel centers as an ``(n, 2)`` array in flattening order."""
        X, Y = np.meshgrid(self.x_centers, self.y_centers)
        return np.column_stack([X.ravel(), Y.ravel()])

    def to_image(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v).reshape(self.ny, self.nx)


@dataclass(frozen=True)
class BlurSpec:
    t: float
    obs_grid: GridGeometry

    def __post_init__(self):
        if not self.t > 0:
            raise ConfigError(f"PSF width t must be > 0, got {self.t}")


def blur_operator(spec: BlurSpec, image_grid: GridGeometry) -> LinearOperator:
    """Gaussian point-spread blur, unnormalized, midpoint quadrature.

    Entry ``(obs i, pixel j)`` is ``exp(-|o_i - p_j|^2 / t) * pixel_area``.
    The kernel factorizes over the two axes, so the action is two small
    dense products per input column.
    """
    og = spec.obs_grid
    Ax = np.exp(-((og.x_centers[:, None] - image_grid.x_centers[None, :]) ** 2) / spec.t)
    Ay = np.exp(-((og.y_centers[:, None] - image_grid.y_centers[None, :]) ** 2) / spec.t)
    Ax *= image_grid.hx
    Ay *= image_grid.hy
    nx, ny, mx, my = image_grid.nx, image_grid.ny, og.nx, og.ny

    def matmat(X):
        k = X.shape[1]
        Xi = X.reshape(ny, nx, k)
        T = np.einsum("bj,ijk->ibk", Ax, Xi)  # (ny, mx, k)
        return np.einsum("ai,ibk->abk", Ay, T).reshape(my * mx, k)

    def rmatmat(Y):
        k = Y.shape[1]
        Yi = Y.reshape(my, mx, k)
        T = np.einsum("bj,abk->ajk", Ax, Yi)  # (my, nx, k)
        return np.einsum("ai,ajk->ijk", Ay, T).reshape(ny * nx, k)

    return LinearOperator((og.n, image_grid.n), matmat, rmatmat, name="Blur")


@dataclass(frozen=True)
class RadonSpec:
    """Parallel-beam geometry: projection angles and detector offsets in [-1, 1]."""

    n_angles: int
    n_offsets: int
    angles: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.n_angles < 1 or self.n_offsets < 1:
            raise ConfigError("RadonSpec needs n_angles, n_offsets >= 1")
        if self.angles is None:
            ang = tuple(math.pi * k / self.n_angles for k in range(self.n_angles))
            object.__setattr__(self, "angles", ang)
        else:
            ang = tuple(float(a) for a in self.angles)
            if len(ang) != self.n_angles:
                raise ConfigError("len(angles) must equal n_angles")
            a = np.asarray(ang)
            if np.any(a < 0) or np.any(a >= math.pi) or np.any(np.diff(a) <= 0):
                raise ConfigError("angles must be strictly increasing within [0, pi)")
            object.__setattr__(self, "angles", ang)

    @property
    def offsets(self) -> np.ndarray:
        # cell-centred, so no offset sits exactly on |s| = 1
        return -1.0 + (np.arange(self.n_offsets) + 0.5) * (2.0 / self.n_offsets)


def _bilinear_weights(px, py, grid: GridGeometry):
    """Column indices and weights for bilinear interpolation at (px, py).

    Coordinates beyond the outermost pixel centres are clamped (constant
    extension up to the grid edge).
    """
    fx = np.clip((px - grid.domain[0]) / grid.hx - 0.5, 0.0, grid.nx - 1)
    fy = np.clip((py - grid.domain[2]) / grid.hy - 0.5, 0.0, grid.ny - 1)
    ix = np.minimum(np.floor(fx).astype(np.int64), max(grid.nx - 2, 0))
    iy = np.minimum(np.floor(fy).astype(np.int64), max(grid.ny - 2, 0))
    wx = fx - ix
    wy = fy - iy
    ix1 = np.minimum(ix + 1, grid.nx - 1)
    iy1 = np.minimum(iy + 1, grid.ny - 1)
    cols = np.stack([iy * grid.nx + ix, iy * grid.nx + ix1, iy1 * grid.nx + ix, iy1 * grid.nx + ix1])
    w = np.stack([(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy])
    return cols, w


def radon_matrix(spec: RadonSpec, image_grid: GridGeometry) -> sp.csr_matrix:
    """Sparse discrete Radon transform (rows ordered angle-major)."""
    h = 0.5 * min(image_grid.hx, image_grid.hy)
    xmin, xmax, ymin, ymax = image_grid.domain
    s_all = spec.offsets
    rows_l, cols_l, vals_l = [], [], []
    for a_idx, phi in enumerate(spec.angles):
        c, s_ = math.cos(phi), math.sin(phi)
        for o_idx, s in enumerate(s_all):
            if abs(s) >= 1.0:
                continue
            half = math.sqrt(1.0 - s * s)
            nsamp = max(1, math.ceil(2 * half / h))
            step = 2 * half / nsamp
            t = -half + (np.arange(nsamp) + 0.5) * step
            px = s * c - t * s_
            py = s * s_ + t * c
            inside = (px >= xmin) & (px <= xmax) & (py >= ymin) & (py <= ymax)
            if not np.any(inside):
                continue
            cols, w = _bilinear_weights(px[inside], py[inside], image_grid)
            rows_l.append(np.full(cols.size, a_idx * spec.n_offsets + o_idx, dtype=np.int64))
            cols_l.append(cols.ravel())
            vals_l.append(w.ravel() * step)
    m = spec.n_angles * spec.n_offsets
    if not rows_l:
        return sp.csr_matrix((m, image_grid.n))
    R = sp.coo_matrix(
        (np.concatenate(vals_l), (np.concatenate(rows_l), np.concatenate(cols_l))),
        shape=(m, image_grid.n),
    )
    return R.tocsr()


def radon_operator(spec: RadonSpec, image_grid: GridGeometry) -> LinearOperator:
    """Parallel-beam Radon transform; the adjoint is the exact sparse transpose."""
    op = from_matrix(radon_matrix(spec, image_grid))
    op.name = "Radon"
    return op
