import math

import numpy as np
import pytest
from scipy.stats import norm

from bellbox.errors import ConfigError, DomainError, InsufficientSamplesError
from bellbox.gaussian import (
    ZETA_STAR,
    build_inv_cdf_table,
    estimate_zeta_star,
    gradient_descent_zeta,
    phi,
    phi_inv,
    zeta_moments,
)


def test_phi_matches_reference():
    v = np.linspace(-6, 6, 101)
    np.testing.assert_allclose(phi(v), norm.cdf(v), atol=1e-12)
    assert phi(0.0) == 0.5


def test_phi_inv_matches_reference():
    p = np.concatenate([[1e-10, 1e-4, 0.02], np.linspace(0.05, 0.95, 19), [0.98, 1 - 1e-6]])
    np.testing.assert_allclose(phi_inv(p), norm.ppf(p), rtol=1e-9, atol=1e-12)


def test_phi_inv_is_scalar_for_scalars():
    assert isinstance(phi_inv(0.5), float)
    assert phi_inv(0.5) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_phi_inv_domain(p):
    with pytest.raises(DomainError):
        phi_inv(p)


def test_inv_cdf_table_three_bits():
    table = build_inv_cdf_table(3)
    expected = (
        -1.1503493803760079,
        -0.6744897501960817,
        -0.3186393639643752,
        0.0,
        0.3186393639643752,
        0.6744897501960817,
        1.1503493803760079,
    )
    assert table.boundaries[0] == -math.inf
    for got, want in zip(table.boundaries[1:], expected):
        assert got == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("b", [1, 2, 3, 4])
def test_inv_cdf_table_shape(b):
    table = build_inv_cdf_table(b)
    finite = table.boundaries[1:]
    assert len(table.boundaries) == table.num_bins == 1 << b
    assert all(lo < hi for lo, hi in zip(finite, finite[1:]))
    assert finite == tuple(-x for x in reversed(finite))


def test_inv_cdf_table_one_bit():
    assert build_inv_cdf_table(1).boundaries == (-math.inf, 0.0)


@pytest.mark.parametrize("b", [0, 5])
def test_inv_cdf_table_rejects_precision(b):
    with pytest.raises(ConfigError):
        build_inv_cdf_table(b)


def test_zeta_star_estimate():
    est = estimate_zeta_star(10**6, seed=7)
    assert est.zeta_star == pytest.approx(1.694, abs=0.01)
    assert est.as_row()["num_samples"] == 10**6


def test_zeta_star_is_deterministic():
    assert estimate_zeta_star(10**6, seed=1) == estimate_zeta_star(10**6, seed=1)


def test_zeta_star_gradient_descent_agrees():
    closed = estimate_zeta_star(10**6, seed=2)
    walked = estimate_zeta_star(10**6, seed=2, method="gradient-descent")
    assert walked.zeta_star == pytest.approx(closed.zeta_star, abs=1e-6)
    assert walked.method == "gradient-descent"


def test_gradient_descent_minimises_mse():
    moments = zeta_moments(10**5, seed=0)
    zeta = gradient_descent_zeta(moments)
    assert moments.mse(zeta) <= moments.mse(zeta + 0.01)
    assert moments.mse(zeta) <= moments.mse(zeta - 0.01)


def test_zeta_star_needs_samples():
    with pytest.raises(InsufficientSamplesError):
        estimate_zeta_star(999_999)


def test_zeta_star_unknown_method():
    with pytest.raises(ConfigError):
        estimate_zeta_star(10**6, method="bisection")


@pytest.mark.slow
def test_zeta_star_reproduction():
    est = estimate_zeta_star(10**7, seed=0)
    assert abs(est.zeta_star - ZETA_STAR) <= 0.01


def test_phi_is_monotone():
    grid = np.sort(np.random.default_rng(3).uniform(-8.0, 8.0, size=10_000))
    assert np.all(np.diff(phi(grid)) >= 0.0)


def test_phi_inverts_phi_inv():
    p = np.linspace(1e-6, 1.0 - 1e-6, 100_001)
    assert np.max(np.abs(phi(phi_inv(p)) - p)) <= 1e-9
