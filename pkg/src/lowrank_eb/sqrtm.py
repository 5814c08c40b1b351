"""Chebyshev approximation of ``sqrt(D) @ Omega`` for symmetric positive definite D.

Only products with ``D`` are needed. The spectral interval is taken from the
caller or estimated with a short Lanczos run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError
from .linop import LinearOperator, as_operator

__all__ = [
    "ChebConfig",
    "ChebCoefficients",
    "ChebyshevSqrt",
    "estimate_spectral_bounds",
    "cheb_coefficients",
    "sqrt_apply",
]


@dataclass(frozen=True)
class ChebConfig:
    k: int = 60
    lambda_min: float | None = None
    lambda_max: float | None = None
    safety: float = 1.05
    lanczos_steps: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError("Chebyshev degree must be >= 0")
        if (self.lambda_min is None) != (self.lambda_max is None):
            raise ConfigError("give both spectral bounds or neither")
        if self.lambda_min is not None and not (0 < self.lambda_min <= self.lambda_max):
            raise ConfigError("need 0 < lambda_min <= lambda_max")
        if self.safety < 1:
            raise ConfigError("safety factor must be >= 1")


def _gershgorin(D: np.ndarray) -> tuple[float, float]:
    d = np.diag(D)
    radius = np.abs(D).sum(axis=1) - np.abs(d)
    return float(np.min(d - radius)), float(np.max(d + radius))


def estimate_spectral_bounds(D, steps: int = 30, safety: float = 1.05, seed: int = 0):
    """Lanczos bracket ``(lo, hi)`` of the spectrum of an SPD matrix or operator.

    Extremal Ritz values are widened by the safety factor and by their
    residual norms. The lower end, which converges slowest, is also widened
    by the spacing to the next Ritz value. ``lo`` is floored at ``1e-14 * hi``.
    On early breakdown a dense ``D`` falls back to Gershgorin discs.
    """
    A = as_operator(D)
    n = A.rows
    if A.rows != A.cols:
        raise ConfigError("spectral bounds need a square operator")
    steps = max(1, min(steps, n))
    rng = np.random.default_rng(seed)
    V = np.zeros((n, steps + 1))
    alpha = np.zeros(steps)
    beta = np.zeros(steps)
    v = rng.standard_normal(n)
    V[:, 0] = v / np.linalg.norm(v)
    m = steps
    broke = False
    for j in range(steps):
        w = A.apply(V[:, j])
        alpha[j] = V[:, j] @ w
        w = w - alpha[j] * V[:, j]
        if j > 0:
            w -= beta[j - 1] * V[:, j - 1]
        for _ in range(2):  # full reorthogonalization
            w -= V[:, : j + 1] @ (V[:, : j + 1].T @ w)
        beta[j] = np.linalg.norm(w)
        scale = max(abs(alpha[: j + 1]).max(), np.finfo(float).tiny)
        if beta[j] <= 1e-12 * scale:
            m = j + 1
            broke = True
            break
        V[:, j + 1] = w / beta[j]
    if not np.all(np.isfinite(alpha[:m])):
        raise NumericalError("non-finite values in Lanczos iteration")
    theta, Z = linalg.eigh_tridiagonal(alpha[:m], beta[: m - 1])
    res = np.abs(beta[m - 1] * Z[-1, :])
    tmin, tmax = theta[0], theta[-1]
    if broke and m < n and isinstance(D, np.ndarray):
        lo, hi = _gershgorin(D)
        hi = max(hi, tmax)
        lo = min(lo, tmin)
    elif broke:
        lo, hi = tmin / safety, tmax * safety
    else:
        # the small end of a covariance spectrum converges slowly and can hide
        # an eigenvalue below the extremal Ritz value; widen by the local spacing.
        # The large end converges fast and an isolated top eigenvalue would
        # make spacing-based widening far too loose there
        # (geometric spacing, so the lower end stays positive)
        ratio_lo = theta[1] / tmin if m > 1 and tmin > 0 else 1.0
        lo = min(tmin / safety, tmin / ratio_lo)
        if res[0] < 0.5 * tmin:  # a larger residual says nothing useful about the bottom
            lo = min(lo, tmin - res[0])
        hi = max(tmax * safety, tmax + res[-1])
    if not hi > 0:
        raise NumericalError("operator does not look positive definite (upper bound <= 0)")
    lo = max(lo, 1e-14 * hi)
    return float(lo), float(hi)


@dataclass(frozen=True)
class ChebCoefficients:
    """Coefficients of the degree-k interpolant of sqrt on ``[lo, hi]``.

    ``p(x) = sum_i c_i T_i(ta*x + tb) - c_0/2``. When ``lo == hi`` the
    interpolant is the constant ``sqrt(lo)`` and ``ta = 0``.
    """

    c: np.ndarray
    ta: float
    tb: float
    lo: float
    hi: float

    @property
    def degree(self) -> int:
        return len(self.c) - 1

    def __call__(self, x):
        """Evaluate the interpolant with the same three-term recurrence."""
        x = np.asarray(x, dtype=float)
        u = self.ta * x + self.tb
        t_prev, t_cur = np.ones_like(u), u
        out = 0.5 * self.c[0] * t_prev
        if self.degree >= 1:
            out = out + self.c[1] * t_cur
        for i in range(1, self.degree):
            t_prev, t_cur = t_cur, 2 * u * t_cur - t_prev
            out = out + self.c[i + 1] * t_cur
        return out


def cheb_coefficients(k: int, lambda_min: float, lambda_max: float) -> ChebCoefficients:
    if not (0 < lambda_min <= lambda_max):
        raise ConfigError(f"invalid spectral interval [{lambda_min}, {lambda_max}]")
    if lambda_max == lambda_min or k == 0:
        mid = 0.5 * (lambda_max + lambda_min)
        return ChebCoefficients(np.array([2 * math.sqrt(mid)]), 0.0, 0.0, lambda_min, lambda_max)
    j = np.arange(k + 1)
    angles = (2 * j + 1) * math.pi / (2 * k + 2)
    nodes = 0.5 * (lambda_max + lambda_min) + 0.5 * (lambda_max - lambda_min) * np.cos(angles)
    i = np.arange(k + 1)[:, None]
    c = (2.0 / (k + 1)) * (np.sqrt(nodes)[None, :] * np.cos(i * angles[None, :])).sum(axis=1)
    width = lambda_max - lambda_min
    ta = 2.0 / width
    tb = -(lambda_max + lambda_min) / width  # maps lambda_min -> -1, lambda_max -> +1
    return ChebCoefficients(c, ta, tb, lambda_min, lambda_max)


class ChebyshevSqrt:
    """Reusable ``Omega -> p_k(D) Omega`` with bounds and coefficients fixed once."""

    def __init__(self, D, cfg: ChebConfig | None = None):
        cfg = cfg or ChebConfig()
        self.cfg = cfg
        self._dense = D if isinstance(D, np.ndarray) else None
        self.D = as_operator(D)
        if self.D.rows != self.D.cols:
            raise ConfigError("sqrt_apply needs a square operator")
        if cfg.lambda_min is not None:
            lo, hi = cfg.lambda_min, cfg.lambda_max
        else:
            lo, hi = estimate_spectral_bounds(D, cfg.lanczos_steps, cfg.safety, cfg.seed)
        self.coef = cheb_coefficients(cfg.k, lo, hi)

    @property
    def n(self) -> int:
        return self.D.rows

    def _mul(self, X):
        if self._dense is not None:
            return self._dense @ X
        return self.D.apply(X)

    def __call__(self, Omega: np.ndarray) -> np.ndarray:
        Omega = np.asarray(Omega, dtype=float)
        vec = Omega.ndim == 1
        W0 = Omega[:, None] if vec else Omega
        if W0.shape[0] != self.n:
            raise ValueError(f"Omega has {W0.shape[0]} rows, operator is {self.n}x{self.n}")
        c, ta, tb = self.coef.c, self.coef.ta, self.coef.tb
        B = 0.5 * c[0] * W0
        if self.coef.degree >= 1:
            W1 = ta * self._mul(W0) + tb * W0
            B = B + c[1] * W1
            for i in range(1, self.coef.degree):
                W2 = 2.0 * (ta * self._mul(W1) + tb * W1) - W0
                if not np.all(np.isfinite(W2)):
                    raise NumericalError(f"non-finite values at Chebyshev step {i + 1}")
                B += c[i + 1] * W2
                W0, W1 = W1, W2
        if not np.all(np.isfinite(B)):
            raise NumericalError("non-finite values in Chebyshev sum")
        return B[:, 0] if vec else B

    def as_operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), self, self, name="ChebyshevSqrt")


def sqrt_apply(D, Omega: np.ndarray, cfg: ChebConfig | None = None) -> np.ndarray:
    """Approximate ``sqrt(D) @ Omega`` with a degree-``cfg.k`` Chebyshev polynomial."""
    return ChebyshevSqrt(D, cfg)(Omega)
