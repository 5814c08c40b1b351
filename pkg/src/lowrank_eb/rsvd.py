"""Randomized truncated eigendecomposition of symmetric PSD operators."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError
from .linop import LinearOperator, as_operator, dense_from_operator

__all__ = ["RsvdConfig", "EigenPairs", "randomized_eig", "rsvd_error_bound_check", "range_finder"]


@dataclass(frozen=True)
class RsvdConfig:
    r: int
    seed: int
    oversample: int = 10
    power_iters: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError("target rank r must be >= 1")
        if self.oversample < 0 or self.power_iters < 0:
            raise ConfigError("oversample and power_iters must be >= 0")

    @property
    def r_prime(self) -> int:
        return self.r + self.oversample


@dataclass
class EigenPairs:
    values: np.ndarray  # descending, >= 0
    vectors: np.ndarray  # (n, r), orthonormal columns

    @property
    def rank(self) -> int:
        return len(self.values)


def _orthonormalize(Y: np.ndarray) -> np.ndarray:
    Q, R = linalg.qr(Y, mode="economic", check_finite=False)
    d = np.abs(np.diag(R))
    keep = d > max(d.max(initial=0.0), np.finfo(float).tiny) * Y.shape[0] * np.finfo(float).eps
    if not np.all(keep):
        warnings.warn(
            f"sample matrix is rank deficient; using {int(keep.sum())} of {Y.shape[1]} columns",
            RuntimeWarning,
            stacklevel=3,
        )
        Q = Q[:, keep]
    if Q.shape[1] and np.linalg.norm(Q.T @ Q - np.eye(Q.shape[1])) > 1e-10:
        Q, _ = linalg.qr(Q, mode="economic", check_finite=False)
    return Q


def range_finder(H: LinearOperator, cfg: RsvdConfig, n_cols: int | None = None) -> np.ndarray:
    """Orthonormal basis ``Q`` for the range of ``H @ Omega`` (Gaussian ``Omega``)."""
    n = H.cols
    k = cfg.r_prime if n_cols is None else n_cols
    rng = np.random.default_rng(cfg.seed)
    Omega = rng.standard_normal((n, k))
    Q = _orthonormalize(H.apply(Omega))
    for _ in range(cfg.power_iters):
        Q = _orthonormalize(H.apply(H.apply_adjoint(Q)))
    return Q


def randomized_eig(Hhat, cfg: RsvdConfig) -> EigenPairs:
    """Leading ``cfg.r`` eigenpairs of a symmetric PSD operator.

    Sample ``Y = H Omega``, orthonormalize to ``Q``, form ``B = Q^T H`` and
    take its SVD ``B = U S V^T``. For symmetric PSD ``H`` the singular values
    estimate eigenvalues and the right singular vectors the eigenvectors.
    """
    H = as_operator(Hhat)
    n = H.cols
    if H.rows != n:
        raise ConfigError("randomized_eig needs a square operator")
    if cfg.r_prime > n:
        raise ConfigError(f"r + oversample = {cfg.r_prime} exceeds dimension {n}")
    Q = range_finder(H, cfg)
    if Q.shape[1] == 0:
        return EigenPairs(np.zeros(min(cfg.r, n)), np.eye(n, min(cfg.r, n)))
    B = H.apply(Q).T  # Q^T H, using symmetry of H
    if not np.all(np.isfinite(B)):
        raise NumericalError("non-finite values in projected matrix")
    _, s, Vt = linalg.svd(B, full_matrices=False, check_finite=False)
    r = min(cfg.r, len(s))
    values = np.maximum(s[:r], 0.0)
    vectors = Vt[:r].T
    if r < cfg.r:
        # pad with orthonormal directions carrying zero eigenvalue
        extra = linalg.null_space(vectors.T)[:, : cfg.r - r]
        vectors = np.hstack([vectors, extra])
        values = np.concatenate([values, np.zeros(extra.shape[1])])
    return EigenPairs(values, vectors)


def rsvd_error_bound_check(Hhat, cfg: RsvdConfig, trials: int) -> float:
    """Fraction of trials in which ``||H - Q B||_2 <= (1 + 11 sqrt(r' n)) s_{r+1}``.

    ``s_{r+1}`` is the (r+1)-th singular value of ``H`` (its eigenvalue,
    since ``H`` is PSD). Trial ``t`` uses seed ``cfg.seed + t``.
    """
    Hd = dense_from_operator(as_operator(Hhat))
    n = Hd.shape[0]
    s = linalg.svdvals(Hd)
    tail = s[cfg.r] if cfg.r < n else 0.0
    rhs = (1.0 + 11.0 * math.sqrt(cfg.r_prime * n)) * tail
    H = as_operator(Hd)
    hits = 0
    for t in range(trials):
        trial_cfg = RsvdConfig(cfg.r, cfg.seed + t, cfg.oversample, cfg.power_iters)
        Q = range_finder(H, trial_cfg)
        err = np.linalg.norm(Hd - Q @ (Q.T @ Hd), 2)
        # exact-rank case: the bound reads 0 <= 0, allow for rounding
        if err <= rhs + 1e-12 * max(s[0], 1.0):
            hits += 1
    return hits / trials
