import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shellrg.analysis import (
    FitError,
    NoBlowupDetected,
    RHO_DYADIC,
    detect_blowup,
    fit_double_exponential,
    fit_geometric,
    shape_distance,
    stationary_dyadic_exact,
    stationary_eigvec,
    stationary_limit,
)
from shellrg.core import CanonicalCutoff, ContractViolation, ShellSystem
from shellrg.integrator import integrate


# --------------------------------------------------------------------------- #
# Closed-form stationary states
# --------------------------------------------------------------------------- #

def test_stationary_limit_shell_three():
    assert stationary_limit(3) == pytest.approx(0.5, abs=1e-15)


def test_stationary_level_zero_is_one():
    assert stationary_dyadic_exact(0, 1) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("N", [0, 3, 7])
def test_stationary_vanishes_beyond_cutoff(N):
    assert stationary_dyadic_exact(N, N + 2) == 0.0
    assert stationary_eigvec(N, N + 2) == 0.0


def test_stationary_vectorized_matches_scalar():
    n = np.arange(1, 9)
    vec = stationary_dyadic_exact(6, n)
    assert np.allclose(vec, [stationary_dyadic_exact(6, int(k)) for k in n], rtol=1e-15, atol=0)


@pytest.mark.parametrize("N", range(0, 13))
def test_stationary_state_is_a_zero_of_the_rhs(N):
    system = ShellSystem("dyadic", CanonicalCutoff(N, 1), "const(1)")
    u = stationary_dyadic_exact(N, np.arange(1, N + 2))
    r = system(0.0, u)
    assert np.max(np.abs(r)) < 64 * np.finfo(float).eps * 2.0 ** (N + 1)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_stationary_first_order_remainder_ratio(n):
    # remainders u^(N) - u^inf - rho^N v shrink by rho^2 per level
    rem = [stationary_dyadic_exact(N, n) - stationary_limit(n) - RHO_DYADIC ** N * stationary_eigvec(N, n)
           for N in range(12, 17)]
    ratios = np.array(rem[1:]) / np.array(rem[:-1])
    assert np.allclose(ratios, RHO_DYADIC ** 2, rtol=0.02)


# --------------------------------------------------------------------------- #
# Geometric fits
# --------------------------------------------------------------------------- #

def test_fit_geometric_exact_alternating():
    fit = fit_geometric([1.0, -0.5, 0.25, -0.125])
    assert fit["ratio"] == pytest.approx(-0.5, abs=1e-14)
    assert fit["prefactor"] == pytest.approx(1.0, abs=1e-14)
    assert fit.r2 == pytest.approx(1.0, abs=1e-14)
    assert fit.confident


def test_fit_geometric_auxiliary_rate():
    N = np.arange(10, 20)
    fit = fit_geometric(dict(zip(N.tolist(), 3.0 * 0.4 ** N)))
    assert fit["ratio"] == pytest.approx(0.4, rel=1e-12)
    assert fit["prefactor"] == pytest.approx(3.0, rel=1e-10)


def test_fit_geometric_noisy_within_two_percent(rng):
    N = np.arange(8, 20)
    vals = 2.0 * (-0.5) ** N * (1 + 0.01 * rng.standard_normal(N.size))
    fit = fit_geometric(vals, index=N)
    assert fit["ratio"] == pytest.approx(-0.5, rel=0.02)


def test_fit_geometric_flags_mixed_signs():
    assert not fit_geometric([1.0, 0.5, -0.25, -0.125, 0.06]).confident


@pytest.mark.parametrize("bad", [[1.0, 2.0], [1.0, 0.0, 2.0], [1.0, np.nan, 0.5]])
def test_fit_geometric_rejects_bad_input(bad):
    with pytest.raises(FitError):
        fit_geometric(bad)


@given(c=st.floats(0.01, 100) | st.floats(-100, -0.01),
       r=st.floats(0.1, 0.95) | st.floats(-0.95, -0.1),
       n0=st.integers(0, 10), m=st.integers(3, 12))
def test_fit_geometric_is_exact_on_geometric_input(c, r, n0, m):
    N = np.arange(n0, n0 + m)
    fit = fit_geometric(c * r ** N.astype(float), index=N)
    assert fit["ratio"] == pytest.approx(r, rel=1e-9)
    assert fit["prefactor"] == pytest.approx(c, rel=1e-8)
    assert fit.r2 == pytest.approx(1.0, abs=1e-9)


# --------------------------------------------------------------------------- #
# Double-exponential fits
# --------------------------------------------------------------------------- #

def test_double_exponential_exact():
    eps = 1e-13
    N = np.arange(1, 9)
    fit = fit_double_exponential(3 * eps * np.exp(np.exp(0.5 * N)), eps, index=N)
    assert fit["slope"] == pytest.approx(0.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_double_exponential_discards_points_below_floor():
    eps = 1e-9
    norms = {1: 1e-9, 2: 2.9e-9, 3: 1e-8, 4: 1e-6, 5: 1e-3}
    fit = fit_double_exponential(norms, eps)
    assert fit.discarded == (1.0, 2.0)
    assert fit.n == 3


def test_double_exponential_separates_exponential_growth():
    eps = 1e-9
    N = np.arange(1, 11)
    single = fit_double_exponential(3 * eps * np.exp(1.2 * N), eps, index=N)
    double = fit_double_exponential(3 * eps * np.exp(np.exp(0.3 * N)), eps, index=N)
    assert single.r2 < 0.95 < double.r2


def test_double_exponential_too_few_points():
    with pytest.raises(FitError):
        fit_double_exponential([1e-10, 1e-9, 1.0, 2.0], 1e-9)


# --------------------------------------------------------------------------- #
# Blowup detection
# --------------------------------------------------------------------------- #

@pytest.fixture(scope="module")
def dyadic_ic1_run():
    return integrate("dyadic", CanonicalCutoff(14, 1), "dyadic-default", "IC1", 1.5)


def test_detect_blowup_brackets_estimate(dyadic_ic1_run):
    est = detect_blowup(dyadic_ic1_run)
    lo, hi = est.bracket
    assert lo <= est.t_b <= hi
    assert est.n_star == 14
    assert 0.4 < est.t_b < 0.8


def test_detect_blowup_monotone_in_horizon(dyadic_ic1_run):
    t_short = detect_blowup(dyadic_ic1_run, horizon=1.0).t_b
    assert detect_blowup(dyadic_ic1_run, horizon=1.5).t_b == t_short


def test_detect_blowup_none_for_decaying_run():
    a = [1e-6] + [0.0] * 6
    tr = integrate("dyadic", CanonicalCutoff(6, 1), "const(0)", a, 2.0)
    with pytest.raises(NoBlowupDetected):
        detect_blowup(tr)


def test_detect_blowup_rejects_bad_theta(dyadic_ic1_run):
    with pytest.raises(ContractViolation):
        detect_blowup(dyadic_ic1_run, theta=1.5)


# --------------------------------------------------------------------------- #
# Shape distance
# --------------------------------------------------------------------------- #

def test_shape_distance_scale_and_sign_invariant():
    a = np.sin(np.linspace(0, 3, 50))
    assert shape_distance(a, -7.0 * a) == pytest.approx(0.0, abs=1e-15)


def test_shape_distance_detects_different_shapes():
    x = np.linspace(0, 3, 200)
    assert shape_distance(np.sin(x), np.exp(-x)) > 0.1


def test_shape_distance_zero_series():
    with pytest.raises(FitError):
        shape_distance(np.zeros(3), np.ones(3))
