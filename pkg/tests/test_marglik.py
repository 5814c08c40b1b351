import math

import numpy as np
import pytest

from lowrank_eb.linop import from_matrix, zero
from lowrank_eb.marglik import (
    GaussLinModel,
    LowRankUpdate,
    _sym_sqrt,
    compute_z,
    dense_update,
    logdet_identity,
    lowrank_posterior_cov,
    lowrank_update,
    marglik_dense,
    marglik_lowrank,
    marglik_marginal_form,
    noise_terms,
    posterior_cov_dense,
    precond_hessian_operator,
)
from lowrank_eb.errors import ConditioningError, ConfigError
from lowrank_eb.rsvd import RsvdConfig
from lowrank_eb.sqrtm import ChebConfig
from helpers import random_model, random_spd


def _identity_model(n):
    return GaussLinModel(from_matrix(np.eye(n)), np.eye(n), np.ones(n))


def test_compute_z_cases():
    rng = np.random.default_rng(0)
    m = GaussLinModel(from_matrix(np.eye(4)), np.eye(4), np.full(4, 0.25))
    y = rng.standard_normal(4)
    np.testing.assert_allclose(compute_z(m, y), y / 0.25)
    np.testing.assert_array_equal(compute_z(m, np.zeros(4)), 0.0)
    model = random_model(10, 7, rng, diagonal_noise=False)
    y = rng.standard_normal(7)
    want = model.G_dense().T @ np.linalg.solve(model.noise, y)
    np.testing.assert_allclose(compute_z(model, y), want, rtol=1e-12)


def test_singular_noise_rejected():
    with pytest.raises(ConditioningError):
        GaussLinModel(from_matrix(np.eye(2)), np.eye(2), np.array([1.0, 0.0]))
    m = GaussLinModel(from_matrix(np.eye(2)), np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ConditioningError):
        compute_z(m, np.ones(2))


def test_model_shape_validation():
    with pytest.raises(ConfigError):
        GaussLinModel(from_matrix(np.ones((3, 2))), np.eye(3), np.ones(3))
    with pytest.raises(ConfigError):
        GaussLinModel(from_matrix(np.ones((3, 2))), np.eye(2), np.ones(2))


def test_precond_hessian_zero_and_identity():
    rng = np.random.default_rng(1)
    m0 = GaussLinModel(zero(3, 5), random_spd(5, 10, rng), np.ones(3))
    v = rng.standard_normal((5, 2))
    np.testing.assert_array_equal(precond_hessian_operator(m0).apply(v), 0.0)
    Hhat = precond_hessian_operator(_identity_model(6), ChebConfig(k=10))
    np.testing.assert_allclose(Hhat.apply(v[:, :1].repeat(6, 0)[:6]), v[:, :1].repeat(6, 0)[:6], atol=1e-8)


def test_precond_hessian_matches_dense():
    rng = np.random.default_rng(2)
    model = random_model(40, 25, rng, cond=100)
    S = _sym_sqrt(model.prior)
    dense = S @ model.hessian_dense() @ S
    V = rng.standard_normal((40, 6))
    got = precond_hessian_operator(model, ChebConfig(k=60)).apply(V)
    assert np.linalg.norm(got - dense @ V) <= 1e-6 * np.linalg.norm(dense @ V)


def test_update_no_data():
    rng = np.random.default_rng(3)
    model = GaussLinModel(zero(4, 12), random_spd(12, 10, rng), np.ones(4))
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        up = lowrank_update(model, RsvdConfig(2, seed=0))
    assert np.all(up.deltas_sq == 0)
    np.testing.assert_allclose(lowrank_posterior_cov(up, model.prior), model.prior)


@pytest.mark.filterwarnings("ignore:sample matrix is rank deficient")
def test_update_single_observation():
    rng = np.random.default_rng(4)
    model = random_model(20, 1, rng, cond=50)
    up = lowrank_update(model, RsvdConfig(3, seed=1, oversample=5), ChebConfig(k=60))
    ref = dense_update(model)
    assert up.deltas_sq[0] == pytest.approx(ref.deltas_sq[0], rel=1e-6)
    assert np.all(up.deltas_sq[1:] <= 1e-10 * up.deltas_sq[0])


@pytest.mark.filterwarnings("ignore:sample matrix is rank deficient")
def test_full_rank_update_reproduces_spectrum():
    rng = np.random.default_rng(5)
    model = random_model(40, 30, rng, cond=50)
    up = lowrank_update(model, RsvdConfig(40, seed=2, oversample=0), ChebConfig(k=80))
    ref = dense_update(model)
    np.testing.assert_allclose(up.deltas_sq, ref.deltas_sq, rtol=1e-6, atol=1e-6 * ref.deltas_sq[0])


def test_what_vectors_prior_orthonormal():
    rng = np.random.default_rng(6)
    model = random_model(30, 20, rng, cond=100)
    W = lowrank_update(model, RsvdConfig(8, seed=0), ChebConfig(k=80)).what_vectors
    G = W.T @ np.linalg.solve(model.prior, W)
    assert np.abs(G - np.eye(8)).max() <= 1e-6


@pytest.mark.filterwarnings("ignore:sample matrix is rank deficient")
def test_chebyshev_objective_is_exact_for_effective_prior():
    # a crude polynomial S still gives the exact objective of the prior S S,
    # even with small noise where z is large
    from lowrank_eb.sqrtm import ChebyshevSqrt

    rng = np.random.default_rng(9)
    model = random_model(30, 30, rng, cond=1e4)
    model = GaussLinModel(model.G, model.prior, np.full(30, 1e-6))
    y = model.G.apply(rng.standard_normal(30))
    cheb = ChebConfig(k=6)
    S = ChebyshevSqrt(model.prior, cheb)(np.eye(30))
    effective = GaussLinModel(model.G, 0.5 * (S @ S + (S @ S).T), model.noise)
    ref = marglik_dense(effective, y, full=False).value
    up = lowrank_update(model, RsvdConfig(30, seed=0, oversample=0), cheb)
    got = marglik_lowrank(up, model.prior, compute_z(model, y)).value
    assert got == pytest.approx(ref, rel=1e-7)
    # the exact-prior quadratic would not cancel here
    naive = marglik_lowrank(LowRankUpdate(up.deltas_sq, up.what_vectors), model.prior, compute_z(model, y)).value
    assert abs(naive - ref) > 1e3 * abs(got - ref)


def test_lowrank_objective_special_cases():
    rng = np.random.default_rng(7)
    P = random_spd(6, 10, rng)
    z = rng.standard_normal(6)
    empty = LowRankUpdate.empty(6)
    assert marglik_lowrank(empty, P, z).value == pytest.approx(-0.5 * z @ P @ z, rel=1e-14)
    up = LowRankUpdate(np.array([3.0, 0.5]), rng.standard_normal((6, 2)))
    got = marglik_lowrank(up, P, np.zeros(6))
    assert got.value == pytest.approx(0.5 * (math.log(4.0) + math.log(1.5)), rel=1e-14)
    assert got.value == sum(got.breakdown.values())


def test_identity_model_closed_form():
    n = 7
    val = marglik_dense(_identity_model(n), np.zeros(n))
    assert val.value == pytest.approx(0.5 * n * math.log(2.0), rel=1e-14)


def test_noise_scaling_shifts_logdet_term():
    rng = np.random.default_rng(8)
    model = random_model(10, 6, rng)
    y = rng.standard_normal(6)
    scaled = GaussLinModel(model.G, model.prior, 4 * model.noise)
    d = noise_terms(scaled, y)["noise_logdet_term"] - noise_terms(model, y)["noise_logdet_term"]
    assert d == pytest.approx(3 * math.log(4.0), rel=1e-12)


@pytest.mark.parametrize("diag", [True, False])
def test_objective_equals_marginal_gaussian_form(diag):
    rng = np.random.default_rng(9)
    for _ in range(50):
        n, m = rng.integers(2, 30, size=2)
        model = random_model(int(n), int(m), rng, diagonal_noise=diag)
        y = rng.standard_normal(int(m))
        a = marglik_dense(model, y).value
        b = marglik_marginal_form(model, y)
        assert abs(a - b) <= 1e-9 * abs(b)


def test_full_rank_lowrank_equals_dense():
    rng = np.random.default_rng(10)
    for _ in range(20):
        n = int(rng.integers(2, 64))
        model = random_model(n, int(rng.integers(1, 64)), rng, cond=1e4)
        y = rng.standard_normal(model.m)
        ref = marglik_dense(model, y, full=False).value
        got = marglik_lowrank(dense_update(model), model.prior, compute_z(model, y)).value
        assert abs(got - ref) <= 1e-8 * (1 + abs(ref))


def test_full_objective_adds_noise_terms_only():
    rng = np.random.default_rng(11)
    model = random_model(12, 9, rng)
    y = rng.standard_normal(9)
    full = marglik_dense(model, y, full=True)
    red = marglik_dense(model, y, full=False)
    nt = noise_terms(model, y)
    assert full.value == pytest.approx(red.value + sum(nt.values()), rel=1e-13)
    lr = marglik_lowrank(dense_update(model), model.prior, compute_z(model, y), nt)
    assert lr.value == pytest.approx(full.value, rel=1e-9)


def test_logdet_identity_sides():
    rng = np.random.default_rng(12)
    model = random_model(40, 30, rng, cond=100)
    full = dense_update(model)
    for r in (0, 10, 40):
        sides = logdet_identity(full.truncate(r), model)
        assert sides.approx_dense == pytest.approx(sides.approx_spectral, rel=1e-8, abs=1e-8)
        assert sides.error_dense == pytest.approx(sides.error_spectral, rel=1e-8, abs=1e-8)
    assert logdet_identity(full, model).error_spectral == 0.0
    s0 = logdet_identity(full.truncate(0), model)
    lp = np.linalg.slogdet(model.prior)[1] - np.linalg.slogdet(posterior_cov_dense(model))[1]
    assert s0.error_dense == pytest.approx(lp, rel=1e-10)


def test_errors_decrease_with_rank():
    rng = np.random.default_rng(13)
    for _ in range(20):
        model = random_model(30, 20, rng, cond=100)
        y = rng.standard_normal(20)
        full = dense_update(model)
        z = compute_z(model, y)
        ref = marglik_dense(model, y, full=False).value
        logdet_err = [np.sum(np.log1p(full.deltas_sq[r:])) for r in range(31)]
        total_err = [abs(marglik_lowrank(full.truncate(r), model.prior, z).value - ref) for r in range(31)]
        assert np.all(np.diff(logdet_err) <= 0)
        assert np.all(np.diff(total_err) <= 1e-10 * (1 + abs(ref)))


@pytest.mark.filterwarnings("ignore:sample matrix is rank deficient")
def test_randomized_errors_decrease_with_rank():
    rng = np.random.default_rng(14)
    model = random_model(40, 30, rng, cond=50)
    y = rng.standard_normal(30)
    z = compute_z(model, y)
    ref = marglik_dense(model, y, full=False).value
    errs = []
    for r in (2, 5, 10, 20, 30):
        up = lowrank_update(model, RsvdConfig(r, seed=0), ChebConfig(k=80))
        errs.append(abs(marglik_lowrank(up, model.prior, z).value - ref))
    assert np.all(np.diff(errs) <= 1e-6)


def test_quadratic_error_tail_form():
    rng = np.random.default_rng(15)
    model = random_model(25, 20, rng, cond=100)
    z = compute_z(model, rng.standard_normal(20))
    full = dense_update(model)
    exact = z @ posterior_cov_dense(model) @ z
    for r in (0, 5, 12, 25):
        approx = z @ lowrank_posterior_cov(full.truncate(r), model.prior) @ z
        tail = full.truncate(model.n)
        d = tail.weights[r:] * (tail.what_vectors[:, r:].T @ z) ** 2
        assert approx - exact == pytest.approx(d.sum(), rel=1e-8, abs=1e-8 * abs(exact))


def test_update_lies_between_posterior_and_prior():
    rng = np.random.default_rng(16)
    for _ in range(10):
        model = random_model(20, 15, rng, cond=100)
        pos = posterior_cov_dense(model)
        for r in (0, 3, 10, 20):
            hat = lowrank_posterior_cov(dense_update(model, r), model.prior)
            assert np.linalg.eigvalsh(hat - pos).min() >= -1e-10
            assert np.linalg.eigvalsh(model.prior - hat).min() >= -1e-10


def _psd_sqrt(A):
    lam, V = np.linalg.eigh(A)
    return (V * np.sqrt(np.maximum(lam, 0))) @ V.T


def _admissible_competitor(K, r, rng):
    """Random ``B`` with rank <= r and ``B B^T <= K K^T``."""
    n = K.shape[0]
    C = rng.standard_normal((n, r))
    C *= rng.uniform() ** 0.25 / np.linalg.norm(C, 2)
    return K @ C


def test_whitened_minimax_optimality():
    # in the prior-whitened norm the prescribed update has the smallest
    # worst-case error among admissible rank-r updates
    rng = np.random.default_rng(17)
    for _ in range(20):
        n = int(rng.integers(4, 13))
        model = random_model(n, int(rng.integers(2, 13)), rng, cond=100)
        r = int(rng.integers(1, n))
        pos = posterior_cov_dense(model)
        Linv = np.linalg.inv(np.linalg.cholesky(model.prior))
        K = _psd_sqrt(model.prior - pos)

        def whitened_err(hat):
            return np.abs(np.linalg.eigvalsh(Linv @ (hat - pos) @ Linv.T)).max()

        mine = whitened_err(lowrank_posterior_cov(dense_update(model, r), model.prior))
        for _ in range(200):
            B = _admissible_competitor(K, r, rng)
            assert mine <= whitened_err(model.prior - B @ B.T) + 1e-10


def test_logdet_optimality_against_competitors():
    rng = np.random.default_rng(18)
    for _ in range(10):
        n = int(rng.integers(4, 13))
        model = random_model(n, int(rng.integers(2, 13)), rng, cond=100)
        r = int(rng.integers(1, n))
        pos = posterior_cov_dense(model)
        lp = np.linalg.slogdet(pos)[1]
        K = _psd_sqrt(model.prior - pos)
        mine = np.linalg.slogdet(lowrank_posterior_cov(dense_update(model, r), model.prior))[1] - lp
        for _ in range(200):
            B = _admissible_competitor(K, r, rng)
            assert mine <= np.linalg.slogdet(model.prior - B @ B.T)[1] - lp + 1e-10
