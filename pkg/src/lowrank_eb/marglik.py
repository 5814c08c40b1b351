"""Negative log marginal likelihood: dense reference and low-rank approximation.

Notation: ``Gamma_pr`` prior covariance, ``Gamma_obs`` noise covariance,
``H = G^T Gamma_obs^{-1} G``, ``S`` a symmetric square root of ``Gamma_pr``,
``Hhat = S H S`` with eigenpairs ``(delta_i^2, w_i)`` and ``what_i = S w_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg

from .errors import ConditioningError, ConfigError
from .linop import LinearOperator, as_operator, dense_from_operator
from .rsvd import RsvdConfig, randomized_eig
from .sqrtm import ChebConfig, ChebyshevSqrt

__all__ = [
    "GaussLinModel",
    "LowRankUpdate",
    "MargLikValue",
    "compute_z",
    "noise_terms",
    "precond_hessian_operator",
    "lowrank_update",
    "dense_update",
    "marglik_lowrank",
    "marglik_dense",
    "marglik_marginal_form",
    "logdet_identity",
    "posterior_cov_dense",
    "lowrank_posterior_cov",
]


def _cholesky(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise ConditioningError(f"{what} is not numerically SPD") from exc


def _logdet_spd(A: np.ndarray, what: str) -> float:
    L = _cholesky(A, what)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


@dataclass
class GaussLinModel:
    """``y | x ~ N(G x, Gamma_obs)``, ``x ~ N(0, Gamma_pr)``.

    ``noise`` is either a vector of per-observation variances (diagonal
    ``Gamma_obs``) or a dense SPD matrix.
    """

    G: LinearOperator
    prior: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        self.G = as_operator(self.G)
        self.prior = np.asarray(self.prior, dtype=float)
        self.noise = np.asarray(self.noise, dtype=float)
        m, n = self.G.shape
        if self.prior.shape != (n, n):
            raise ConfigError(f"prior shape {self.prior.shape} does not match G with {n} columns")
        if self.noise.ndim == 1:
            if self.noise.shape != (m,):
                raise ConfigError(f"noise variances have length {self.noise.size}, G has {m} rows")
            if np.any(~(self.noise > 0)):
                raise ConditioningError("noise variances must be > 0")
        elif self.noise.shape != (m, m):
            raise ConfigError(f"noise covariance shape {self.noise.shape} does not match m={m}")
        self._noise_chol = None

    @property
    def n(self) -> int:
        return self.G.cols

    @property
    def m(self) -> int:
        return self.G.rows

    @property
    def diagonal_noise(self) -> bool:
        return self.noise.ndim == 1

    def noise_solve(self, v: np.ndarray) -> np.ndarray:
        if self.diagonal_noise:
            return v / (self.noise if v.ndim == 1 else self.noise[:, None])
        if self._noise_chol is None:
            self._noise_chol = _cholesky(self.noise, "noise covariance")
        return linalg.cho_solve((self._noise_chol, True), v, check_finite=False)

    def noise_logdet(self) -> float:
        if self.diagonal_noise:
            return float(np.sum(np.log(self.noise)))
        return _logdet_spd(self.noise, "noise covariance")

    def noise_dense(self) -> np.ndarray:
        return np.diag(self.noise) if self.diagonal_noise else self.noise

    def G_dense(self) -> np.ndarray:
        return dense_from_operator(self.G)

    def hessian_dense(self) -> np.ndarray:
        Gd = self.G_dense()
        H = Gd.T @ self.noise_solve(Gd)
        return 0.5 * (H + H.T)


@dataclass
class LowRankUpdate:
    """Pairs ``(delta_i^2, what_i)`` defining ``Gamma_pr - sum_i d_i what_i what_i^T``
    with ``d_i = delta_i^2 / (1 + delta_i^2)``.

    ``sqrt`` is the square-root map ``S`` the pairs were built with, when it is
    only approximate. The objective then takes ``z^T Gamma_pr z`` as
    ``||S z||^2`` so the truncated sum cancels against the same ``S``.
    """

    deltas_sq: np.ndarray
    what_vectors: np.ndarray
    sqrt: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.deltas_sq = np.asarray(self.deltas_sq, dtype=float).reshape(-1)
        self.what_vectors = np.asarray(self.what_vectors, dtype=float)
        if self.what_vectors.ndim != 2 or self.what_vectors.shape[1] != self.deltas_sq.size:
            raise ConfigError("what_vectors must be (n, r) with r = len(deltas_sq)")

    @property
    def rank(self) -> int:
        return self.deltas_sq.size

    @property
    def weights(self) -> np.ndarray:
        return self.deltas_sq / (1.0 + self.deltas_sq)

    def truncate(self, r: int) -> "LowRankUpdate":
        return LowRankUpdate(self.deltas_sq[:r], self.what_vectors[:, :r], self.sqrt)

    @classmethod
    def empty(cls, n: int) -> "LowRankUpdate":
        return cls(np.zeros(0), np.zeros((n, 0)))


@dataclass
class MargLikValue:
    value: float
    breakdown: dict = field(default_factory=dict)
    rank_used: int | None = None

    @property
    def prior_part(self) -> float:
        """The prior-dependent part ``quad_term + logdet_term``."""
        return self.breakdown["quad_term"] + self.breakdown["logdet_term"]


def compute_z(model: GaussLinModel, y: np.ndarray) -> np.ndarray:
    """``z = G^T Gamma_obs^{-1} y``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (model.m,):
        raise ConfigError(f"data vector has shape {y.shape}, expected ({model.m},)")
    return model.G.apply_adjoint(model.noise_solve(y))


def noise_terms(model: GaussLinModel, y: np.ndarray) -> dict:
    """``1/2 y^T Gamma_obs^{-1} y`` and ``1/2 log|Gamma_obs|``."""
    y = np.asarray(y, dtype=float)
    return {
        "noise_quad_term": 0.5 * float(y @ model.noise_solve(y)),
        "noise_logdet_term": 0.5 * model.noise_logdet(),
    }


def precond_hessian_operator(
    model: GaussLinModel, cheb: ChebConfig | None = None, sqrt: ChebyshevSqrt | None = None
) -> LinearOperator:
    """Matrix-free ``v -> S G^T Gamma_obs^{-1} G S v`` with Chebyshev ``S``."""
    S = sqrt if sqrt is not None else ChebyshevSqrt(model.prior, cheb)
    G = model.G

    def matmat(V):
        return S(G.apply_adjoint(model.noise_solve(G.apply(S(V)))))

    return LinearOperator((model.n, model.n), matmat, matmat, name="PrecondHessian")


def lowrank_update(model: GaussLinModel, cfg: RsvdConfig, cheb: ChebConfig | None = None) -> LowRankUpdate:
    """Randomized eigenpairs of ``Hhat`` mapped back through ``S``."""
    S = ChebyshevSqrt(model.prior, cheb)
    Hhat = precond_hessian_operator(model, sqrt=S)
    pairs = randomized_eig(Hhat, cfg)
    return LowRankUpdate(pairs.values, S(pairs.vectors), S)


def _sym_sqrt(A: np.ndarray) -> np.ndarray:
    lam, V = linalg.eigh(A, check_finite=False)
    if lam[0] <= 0:
        raise ConditioningError("prior covariance has a non-positive eigenvalue")
    S = (V * np.sqrt(lam)) @ V.T
    return 0.5 * (S + S.T)


def dense_update(model: GaussLinModel, r: int | None = None) -> LowRankUpdate:
    """Exact eigenpairs of ``Hhat`` from dense symmetric square root and eigensolver."""
    S = _sym_sqrt(model.prior)
    Hhat = S @ model.hessian_dense() @ S
    lam, W = linalg.eigh(0.5 * (Hhat + Hhat.T), check_finite=False)
    lam, W = np.maximum(lam[::-1], 0.0), W[:, ::-1]
    r = model.n if r is None else r
    return LowRankUpdate(lam[:r], S @ W[:, :r])


def marglik_lowrank(
    update: LowRankUpdate, prior: np.ndarray, z: np.ndarray, noise: dict | None = None
) -> MargLikValue:
    """Approximate objective from a low-rank update.

    ``-1/2 [z^T Gamma_pr z - sum_i d_i (what_i^T z)^2] + 1/2 sum_i log(1 + delta_i^2)``,
    plus the noise terms from :func:`noise_terms` when given.
    """
    z = np.asarray(z, dtype=float)
    proj = update.what_vectors.T @ z
    if update.sqrt is not None:
        # with Gamma_pr ~ S S only approximately, z^T Gamma_pr z and the sum
        # over what_i = S w_i would not cancel once z is large (small noise)
        prior_quad = float(np.sum(update.sqrt(z) ** 2))
    else:
        prior_quad = float(z @ (prior @ z))
    quad = prior_quad - float(np.sum(update.weights * proj**2))
    breakdown = {
        "quad_term": -0.5 * quad,
        "logdet_term": 0.5 * float(np.sum(np.log1p(update.deltas_sq))),
    }
    if noise:
        breakdown.update(noise)
    return MargLikValue(sum(breakdown.values()), breakdown, update.rank)


def marglik_dense(model: GaussLinModel, y: np.ndarray, full: bool = True) -> MargLikValue:
    """Exact negative log marginal likelihood by dense Cholesky factorizations.

    With ``Gamma_pr = L L^T`` and ``M = I + L^T H L``:
    ``log(|Gamma_pr| / |Gamma_pos|) = log|M|`` and
    ``z^T Gamma_pos z = |M^{-1/2} L^T z|^2``.
    """
    z = compute_z(model, y)
    L = _cholesky(model.prior, "prior covariance")
    H = model.hessian_dense()
    M = np.eye(model.n) + L.T @ H @ L
    Mc = _cholesky(0.5 * (M + M.T), "whitened posterior precision")
    u = linalg.solve_triangular(Mc, L.T @ z, lower=True, check_finite=False)
    breakdown = {
        "quad_term": -0.5 * float(u @ u),
        "logdet_term": float(np.sum(np.log(np.diag(Mc)))),
    }
    if full:
        breakdown.update(noise_terms(model, y))
    return MargLikValue(sum(breakdown.values()), breakdown, model.n)


def marglik_marginal_form(model: GaussLinModel, y: np.ndarray) -> float:
    """``1/2 y^T Gamma_y^{-1} y + 1/2 log|Gamma_y|`` with ``Gamma_y = Gamma_obs + G Gamma_pr G^T``."""
    Gd = model.G_dense()
    Gy = model.noise_dense() + Gd @ model.prior @ Gd.T
    C = _cholesky(0.5 * (Gy + Gy.T), "marginal data covariance")
    u = linalg.solve_triangular(C, y, lower=True, check_finite=False)
    return 0.5 * float(u @ u) + float(np.sum(np.log(np.diag(C))))


def posterior_cov_dense(model: GaussLinModel) -> np.ndarray:
    """``Gamma_pos = L (I + L^T H L)^{-1} L^T``."""
    L = _cholesky(model.prior, "prior covariance")
    M = np.eye(model.n) + L.T @ model.hessian_dense() @ L
    Mc = _cholesky(0.5 * (M + M.T), "whitened posterior precision")
    X = linalg.solve_triangular(Mc, L.T, lower=True, check_finite=False)
    P = X.T @ X
    return 0.5 * (P + P.T)


def lowrank_posterior_cov(update: LowRankUpdate, prior: np.ndarray) -> np.ndarray:
    W = update.what_vectors
    P = prior - (W * update.weights) @ W.T
    return 0.5 * (P + P.T)


class LogdetSides(NamedTuple):
    approx_dense: float  # log(|Gamma_pr| / |Gamma_pos_hat|) by determinants
    approx_spectral: float  # sum_{i<=r} log(1 + delta_i^2)
    error_dense: float  # log(|Gamma_pos_hat| / |Gamma_pos|) by determinants
    error_spectral: float  # sum_{i>r} log(1 + delta_i^2)


def logdet_identity(update: LowRankUpdate, model: GaussLinModel) -> LogdetSides:
    """Both sides of the log-determinant approximation/error identity."""
    r = update.rank
    full = dense_update(model)
    logdet_pr = _logdet_spd(model.prior, "prior covariance")
    logdet_hat = _logdet_spd(lowrank_posterior_cov(update, model.prior), "approximate posterior")
    logdet_pos = _logdet_spd(posterior_cov_dense(model), "posterior covariance")
    return LogdetSides(
        approx_dense=logdet_pr - logdet_hat,
        approx_spectral=float(np.sum(np.log1p(update.deltas_sq))),
        error_dense=logdet_hat - logdet_pos,
        error_spectral=float(np.sum(np.log1p(full.deltas_sq[r:]))),
    )
