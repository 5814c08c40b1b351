import numpy as np
import pytest

from lowrank_eb.errors import ConfigError, NumericalError
from lowrank_eb.linop import LinearOperator, from_matrix
from lowrank_eb.sqrtm import (
    ChebConfig,
    ChebyshevSqrt,
    cheb_coefficients,
    estimate_spectral_bounds,
    sqrt_apply,
)
from helpers import random_spd

# max |p_20(x) - sqrt(x)| over [1, 100], from a 1e4-point evaluation of the
# interpolant against numpy sqrt; the 1e-4 figure quoted for this case is not
# reachable at degree 20
CHEB20_MAXERR_1_100 = 2.2596e-3


def _sqrtm(D):
    lam, V = np.linalg.eigh(D)
    return (V * np.sqrt(lam)) @ V.T


def test_bounds_identity():
    lo, hi = estimate_spectral_bounds(np.eye(10))
    assert 1 / 1.05 - 1e-12 <= lo <= 1.0 <= hi <= 1.05 + 1e-12


def test_bounds_known_spectrum():
    lo, hi = estimate_spectral_bounds(np.diag([1.0, 4.0, 9.0]))
    assert lo <= 1.0 and hi >= 9.0


def test_bounds_matrix_free_breakdown():
    A = from_matrix(2.0 * np.eye(6))
    lo, hi = estimate_spectral_bounds(LinearOperator(A.shape, A.apply, A.apply_adjoint))
    assert lo <= 2.0 <= hi


def test_bounds_bracket_random_spd():
    rng = np.random.default_rng(0)
    hits = 0
    for t in range(100):
        D = random_spd(50, rng.uniform(2, 1e3), rng)
        lam = np.linalg.eigvalsh(D)
        lo, hi = estimate_spectral_bounds(D, seed=t)
        hits += lo <= lam[0] and hi >= lam[-1]
    assert hits >= 99


def test_degree_zero_scalar_root():
    coef = cheb_coefficients(0, 4.0, 4.0)
    np.testing.assert_allclose(coef(np.array([4.0, 1.0, 9.0])), 2.0)
    np.testing.assert_allclose(sqrt_apply(4 * np.eye(3), np.ones((3, 2)), ChebConfig(k=5, lambda_min=4, lambda_max=4)), 2.0)


def test_interpolation_at_nodes():
    k, lo, hi = 15, 0.3, 7.0
    coef = cheb_coefficients(k, lo, hi)
    j = np.arange(k + 1)
    nodes = 0.5 * (hi + lo) + 0.5 * (hi - lo) * np.cos((2 * j + 1) * np.pi / (2 * k + 2))
    np.testing.assert_allclose(coef(nodes), np.sqrt(nodes), rtol=1e-12, atol=1e-12)


def test_degree20_error_on_1_100():
    coef = cheb_coefficients(20, 1.0, 100.0)
    x = np.linspace(1.0, 100.0, 10**4)
    err = np.max(np.abs(coef(x) - np.sqrt(x)))
    assert err == pytest.approx(CHEB20_MAXERR_1_100, rel=1e-3)


def test_interpolant_error_decreases_with_degree():
    x = np.linspace(1.0, 100.0, 10**4)
    errs = [np.max(np.abs(cheb_coefficients(k, 1.0, 100.0)(x) - np.sqrt(x))) for k in (20, 40, 60, 80)]
    assert errs == sorted(errs, reverse=True)
    assert errs[-1] < 1e-8


def test_identity_and_scalar_operators():
    rng = np.random.default_rng(1)
    Om = rng.standard_normal((7, 3))
    np.testing.assert_allclose(sqrt_apply(np.eye(7), Om, ChebConfig(k=3)), Om, atol=1e-10)
    np.testing.assert_allclose(sqrt_apply(4 * np.eye(7), Om, ChebConfig(k=3)), 2 * Om, atol=1e-10)


def test_random_spd_against_dense_root():
    rng = np.random.default_rng(2)
    D = random_spd(60, 100.0, rng)
    Om = rng.standard_normal((60, 8))
    ref = _sqrtm(D) @ Om
    B = sqrt_apply(D, Om, ChebConfig(k=50))
    assert np.linalg.norm(B - ref) / np.linalg.norm(ref) <= 1e-6


def test_error_monotone_in_degree():
    rng = np.random.default_rng(3)
    D = random_spd(60, 1e3, rng)
    Om = rng.standard_normal((60, 5))
    ref = _sqrtm(D) @ Om
    errs = [np.linalg.norm(sqrt_apply(D, Om, ChebConfig(k=k)) - ref) for k in (20, 40, 80)]
    assert errs[0] >= errs[1] >= errs[2]


def test_polynomial_operator_symmetric():
    rng = np.random.default_rng(4)
    D = random_spd(30, 50.0, rng)
    S = ChebyshevSqrt(D, ChebConfig(k=40))
    for _ in range(10):
        u, v = rng.standard_normal(30), rng.standard_normal(30)
        a, b = S(u) @ v, u @ S(v)
        assert abs(a - b) <= 1e-10 * max(abs(a), 1.0)


def test_square_root_consistency():
    rng = np.random.default_rng(5)
    D = random_spd(60, 100.0, rng)
    B = sqrt_apply(D, np.eye(60), ChebConfig(k=50))
    assert np.linalg.norm(B @ B - D) / np.linalg.norm(D) <= 1e-5


def test_vector_input_and_shape_check():
    D = np.diag([1.0, 2.0, 3.0])
    v = sqrt_apply(D, np.ones(3), ChebConfig(k=30))
    np.testing.assert_allclose(v, np.sqrt([1, 2, 3]), rtol=1e-6)
    with pytest.raises(ValueError):
        sqrt_apply(D, np.ones(4))


def test_non_finite_recurrence_names_step():
    D = np.diag([1.0, 1e300])
    cfg = ChebConfig(k=10, lambda_min=1.0, lambda_max=2.0)
    with pytest.raises(NumericalError, match="step"):
        sqrt_apply(D, np.ones((2, 1)), cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        ChebConfig(lambda_min=1.0)
    with pytest.raises(ConfigError):
        ChebConfig(lambda_min=2.0, lambda_max=1.0)
    with pytest.raises(ConfigError):
        ChebConfig(k=-1)
    with pytest.raises(ConfigError):
        cheb_coefficients(5, 0.0, 1.0)
