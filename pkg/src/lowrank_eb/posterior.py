"""Posterior mean and pointwise variance, exact and low-rank."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .marglik import GaussLinModel, LowRankUpdate, _cholesky, compute_z

__all__ = ["PosteriorSummary", "posterior_dense", "posterior_lowrank", "psnr"]


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    variance: np.ndarray  # clamped at 0
    method: str
    raw_variance: np.ndarray | None = field(default=None, repr=False)


def _clamped(var: np.ndarray) -> np.ndarray:
    return np.maximum(var, 0.0)


def posterior_dense(model: GaussLinModel, y: np.ndarray) -> PosteriorSummary:
    """Exact posterior moments via ``Gamma_pr = L L^T`` and ``M = I + L^T H L``.

    ``Gamma_pos = L M^{-1} L^T``; only triangular solves, no explicit inverse.
    """
    z = compute_z(model, y)
    L = _cholesky(model.prior, "prior covariance")
    M = np.eye(model.n) + L.T @ model.hessian_dense() @ L
    Mc = _cholesky(0.5 * (M + M.T), "whitened posterior precision")
    X = linalg.solve_triangular(Mc, L.T, lower=True, check_finite=False)  # Gamma_pos = X^T X
    mean = X.T @ (X @ z)
    var = np.einsum("ij,ij->j", X, X)
    return PosteriorSummary(mean, _clamped(var), "dense", raw_variance=var)


def posterior_lowrank(update: LowRankUpdate, prior: np.ndarray, z: np.ndarray) -> PosteriorSummary:
    W = update.what_vectors
    d = update.weights
    mean = prior @ z - W @ (d * (W.T @ z))
    var = np.diag(prior) - (W**2) @ d
    return PosteriorSummary(mean, _clamped(var), f"lowrank({update.rank})", raw_variance=var)


def psnr(reference, candidate) -> float:
    """Peak signal-to-noise ratio in dB, peak = dynamic range of ``reference``.

    Returns ``inf`` when the two images are identical.
    """
    ref = np.asarray(reference, dtype=float).ravel()
    cand = np.asarray(candidate, dtype=float).ravel()
    if ref.shape != cand.shape:
        raise ValueError("reference and candidate differ in size")
    peak = float(ref.max() - ref.min())
    if peak == 0:
        raise ValueError("reference image is constant; PSNR undefined")
    mse = float(np.mean((ref - cand) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)
