"""Quick oracle checks that run from an installed package (``lowrank-eb selftest``)."""

from __future__ import annotations

import math

import numpy as np

from .covkernel import HyperParams, assemble_prior, bessel_k, matern_iso
from .linop import BlurSpec, GridGeometry, RadonSpec, blur_operator, from_matrix, radon_operator
from .marglik import (
    GaussLinModel,
    compute_z,
    dense_update,
    logdet_identity,
    lowrank_posterior_cov,
    marglik_dense,
    marglik_lowrank,
    marglik_marginal_form,
    posterior_cov_dense,
)
from .rsvd import RsvdConfig, randomized_eig
from .sqrtm import ChebConfig, sqrt_apply


def _spd(n, cond, rng):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


def _model(n, m, rng):
    return GaussLinModel(from_matrix(rng.standard_normal((m, n)) / math.sqrt(n)), _spd(n, 100.0, rng) / 10, rng.uniform(0.05, 0.5, m))


def _adjoint(rng):
    worst = 0.0
    for A in (
        blur_operator(BlurSpec(0.02, GridGeometry(6, 7)), GridGeometry(9, 8)),
        radon_operator(RadonSpec(7, 11), GridGeometry(12, 10)),
    ):
        for _ in range(20):
            u, v = rng.standard_normal(A.cols), rng.standard_normal(A.rows)
            a, b = (A @ u) @ v, u @ A.apply_adjoint(v)
            worst = max(worst, abs(a - b) / max(abs(a), abs(b)))
    return worst <= 1e-10, f"worst relative gap {worst:.1e}"


def _bessel(rng):
    x = np.array([1e-3, 0.5, 1.0, 10.0, 300.0])
    err = np.max(np.abs(bessel_k(0.5, x) / (np.sqrt(np.pi / (2 * x)) * np.exp(-x)) - 1))
    return err <= 1e-12, f"K_1/2 closed form rel err {err:.1e}"


def _matern(rng):
    v = matern_iso(1.0, HyperParams(sigma=1.0, nu=0.5, rho=1.0))
    C = assemble_prior(GridGeometry(6, 6), HyperParams(sigma=1.0, nu=2.0, rho=0.4))
    lam = np.linalg.eigvalsh(C).min()
    return abs(v - math.exp(-1)) <= 1e-13 and lam > 0, f"exponential case {v:.15f}, min eig {lam:.1e}"


def _chebyshev(rng):
    D = _spd(60, 100.0, rng)
    lam, V = np.linalg.eigh(D)
    Om = rng.standard_normal((60, 5))
    ref = (V * np.sqrt(lam)) @ V.T @ Om
    err = np.linalg.norm(sqrt_apply(D, Om, ChebConfig(k=50)) - ref) / np.linalg.norm(ref)
    return err <= 1e-6, f"rel Frobenius err {err:.1e}"


def _rsvd(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((80, 80)))
    lam = np.concatenate([np.linspace(10, 5, 5), 1e-6 * rng.uniform(size=75)])
    pairs = randomized_eig((Q * lam) @ Q.T, RsvdConfig(5, seed=0))
    err = np.max(np.abs(pairs.values / lam[:5] - 1))
    return err <= 1e-6, f"leading eigenvalue rel err {err:.1e}"


def _marglik(rng):
    worst_w = worst_l = 0.0
    for _ in range(10):
        model = _model(20, 15, rng)
        y = rng.standard_normal(15)
        d = marglik_dense(model, y).value
        worst_w = max(worst_w, abs(d - marglik_marginal_form(model, y)) / abs(d))
        r = marglik_dense(model, y, full=False).value
        lr = marglik_lowrank(dense_update(model), model.prior, compute_z(model, y)).value
        worst_l = max(worst_l, abs(lr - r) / (1 + abs(r)))
    return worst_w <= 1e-9 and worst_l <= 1e-8, f"marginal form {worst_w:.1e}, full rank {worst_l:.1e}"


def _logdet(rng):
    model = _model(24, 20, rng)
    full = dense_update(model)
    worst = 0.0
    for r in (0, 6, 12, 24):
        s = logdet_identity(full.truncate(r), model)
        worst = max(worst, abs(s.approx_dense - s.approx_spectral), abs(s.error_dense - s.error_spectral))
    return worst <= 1e-8, f"max abs mismatch {worst:.1e}"


def _membership(rng):
    worst = 0.0
    for _ in range(10):
        model = _model(16, 12, rng)
        pos = posterior_cov_dense(model)
        hat = lowrank_posterior_cov(dense_update(model, 4), model.prior)
        worst = min(worst, np.linalg.eigvalsh(hat - pos).min(), np.linalg.eigvalsh(model.prior - hat).min())
    return worst >= -1e-10, f"min eigenvalue {worst:.1e}"


CHECKS = {
    "adjoint consistency": _adjoint,
    "bessel closed form": _bessel,
    "matern kernel": _matern,
    "chebyshev square root": _chebyshev,
    "randomized eigensolver": _rsvd,
    "marginal likelihood oracles": _marglik,
    "log-determinant identity": _logdet,
    "update ordering": _membership,
}


def run(seed: int = 0, out=print) -> bool:
    rng = np.random.default_rng(seed)
    ok_all = True
    for name, fn in CHECKS.items():
        ok, detail = fn(rng)
        ok_all &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok_all
