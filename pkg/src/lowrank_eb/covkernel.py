"""Matérn covariance kernels and dense prior assembly on pixel grids."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from .errors import CapacityError, ConditioningError, ConfigError
from .linop import GridGeometry

__all__ = [
    "HyperParams",
    "bessel_k",
    "matern_profile",
    "matern_iso",
    "matern_aniso",
    "assemble_prior",
    "JITTER",
]

JITTER = 1e-10
PRIOR_CAPACITY = 10**4  # max number of pixels for dense assembly

_FLOAT_MAX = np.finfo(float).max


@dataclass(frozen=True)
class HyperParams:
    """Matérn hyperparameters, optionally with a noise variance.

    Give either ``rho`` (isotropic) or both ``rho1`` and ``rho2``
    (anisotropic, per-axis lengths).
    """

    sigma: float
    nu: float
    rho: float | None = None
    rho1: float | None = None
    rho2: float | None = None
    noise_var: float | None = None

    def __post_init__(self):
        iso = self.rho is not None
        aniso = self.rho1 is not None or self.rho2 is not None
        if iso == aniso:
            raise ConfigError("give either rho or (rho1, rho2)")
        if aniso and (self.rho1 is None or self.rho2 is None):
            raise ConfigError("anisotropic kernel needs both rho1 and rho2")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"hyperparameter {f.name} must be > 0, got {v}")
            object.__setattr__(self, f.name, float(v))

    @property
    def isotropic(self) -> bool:
        return self.rho is not None

    def as_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown hyperparameters: {sorted(extra)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def replace(self, **kw) -> "HyperParams":
        return dataclasses.replace(self, **kw)


def bessel_k(nu, x, return_flag: bool = False):
    """Modified Bessel function of the second kind ``K_nu(x)`` for real order.

    ``K_{-nu} = K_nu``, so negative orders are accepted. Values that overflow
    double precision saturate at the largest finite float; with
    ``return_flag=True`` a boolean (array) marking saturation is returned too.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("bessel_k requires x > 0")
    nu = np.abs(np.asarray(nu, dtype=float))
    with np.errstate(over="ignore"):
        val = special.kv(nu, x)
        # kv flushes to zero well before the true value leaves the normal range
        val = np.where(val == 0, special.kve(nu, x) * np.exp(-x), val)
    saturated = ~np.isfinite(val)
    val = np.where(saturated, _FLOAT_MAX, val)
    if val.ndim == 0:
        val, saturated = float(val), bool(saturated)
    if return_flag:
        return val, saturated
    return val


def matern_profile(u, sigma: float, nu: float):
    """``sigma^2 2^(1-nu)/Gamma(nu) u^nu K_nu(u)`` for scaled distances ``u >= 0``.

    Evaluated in log space with the exponentially scaled Bessel function;
    ``u = 0`` returns ``sigma^2`` exactly.
    """
    u = np.asarray(u, dtype=float)
    s2 = float(sigma) ** 2
    out = np.full(u.shape, s2)
    pos = u > 0
    if np.any(pos):
        up = u[pos]
        with np.errstate(over="ignore", divide="ignore"):
            kve = special.kve(nu, up)
            logv = (1.0 - nu) * math.log(2.0) - special.gammaln(nu) + nu * np.log(up) + np.log(kve) - up
            v = s2 * np.exp(logv)
        # K_nu overflows only for u << 1, where u^nu K_nu(u) equals its limit to
        # double precision
        v = np.where(np.isfinite(kve), v, s2)
        out[pos] = np.minimum(v, s2)
    return out if out.ndim else float(out)


def matern_iso(d, hp: HyperParams):
    if not hp.isotropic:
        raise ConfigError("matern_iso needs an isotropic HyperParams")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be >= 0")
    return matern_profile(math.sqrt(2 * hp.nu) * d / hp.rho, hp.sigma, hp.nu)


def matern_aniso(dt1, dt2, hp: HyperParams):
    """Anisotropic Matérn; the per-axis lengths already nondimensionalize ``d``."""
    if hp.isotropic:
        raise ConfigError("matern_aniso needs rho1 and rho2")
    d = np.sqrt((np.asarray(dt1, float) / hp.rho1) ** 2 + (np.asarray(dt2, float) / hp.rho2) ** 2)
    return matern_profile(math.sqrt(2 * hp.nu) * d, hp.sigma, hp.nu)


def kernel(dt1, dt2, hp: HyperParams):
    """Kernel value for coordinate differences, dispatching on isotropy."""
    if hp.isotropic:
        return matern_iso(np.hypot(dt1, dt2), hp)
    return matern_aniso(dt1, dt2, hp)


def assemble_prior(grid: GridGeometry, hp: HyperParams, check: bool = True) -> np.ndarray:
    """Dense prior covariance over the pixel centres of ``grid``.

    On a regular grid the kernel depends only on the index offsets, so the
    kernel is evaluated once per offset and scattered. A jitter of
    ``1e-10 * sigma^2`` is added to the diagonal.
    """
    n = grid.n
    if n > PRIOR_CAPACITY:
        raise CapacityError(f"dense prior for {n} pixels exceeds capacity {PRIOR_CAPACITY}")
    dx = np.arange(grid.nx) * grid.hx
    dy = np.arange(grid.ny) * grid.hy
    table = kernel(dx[None, :], dy[:, None], hp)  # (ny, nx) over |offsets|
    iy, ix = np.divmod(np.arange(n), grid.nx)
    C = table[np.abs(iy[:, None] - iy[None, :]), np.abs(ix[:, None] - ix[None, :])]
    C[np.diag_indices(n)] += JITTER * hp.sigma**2
    if check:
        try:
            linalg.cholesky(C, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise ConditioningError(f"prior covariance not SPD for {hp}") from exc
    return C
