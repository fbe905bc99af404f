import math
import warnings

import numpy as np
import pytest

from mdplab._rng import CH_REFERENCE, RngKey, make_stream
from mdplab.functionals import (
    SATURATED,
    Observable,
    ScalingFunction,
    VarianceEstimate,
    additive_functional,
    asymptotic_variance,
    autocovariance,
    check_observable_class,
    cramer_functional,
    legendre_transform,
    make_observable,
    moderate_functional,
    rate_function,
    scaling_check,
)
from mdplab.integrator import Path, estimate_invariant, simulate_reference
from mdplab.measures import from_samples
from mdplab.models import make_mean_field_ou


def linear_path(T=1.0, dt=1e-3):
    times = dt * np.arange(round(T / dt) + 1)
    return Path(times=times, states=times[:, None], dt=dt)


# ----------------------------------------------------------------- catalogue

def test_catalogue_identity_is_first_coordinate():
    A = make_observable("identity")
    assert A.eval(np.array([3.0, 9.0])) == 3.0
    assert A.reg_class == "lipschitz" and A.lip_const == 1.0


def test_catalogue_parenthesized_forms():
    A = make_observable("constant(2.5)")
    assert float(A.eval(np.zeros(3))) == 2.5
    B = make_observable("coordinate(1)")
    assert B.eval(np.array([[1.0, 7.0], [0.0, 4.0]])).tolist() == [7.0, 4.0]


def test_catalogue_norm2_class_declaration():
    A = make_observable("norm2")
    assert A.reg_class == "hoelder" and A.alpha == 0.5 and A.class_const == 1.0
    assert A.eval(np.array([3.0, 4.0])) == 25.0


def test_observable_validation():
    with pytest.raises(ValueError, match="lip_const"):
        Observable(eval=lambda x: x[..., 0], reg_class="lipschitz", class_const=1.0)
    with pytest.raises(ValueError, match="hoelder"):
        Observable(eval=lambda x: x[..., 0], reg_class="hoelder", class_const=1.0, alpha=1.5)
    with pytest.raises(ValueError, match="log_modulus"):
        Observable(eval=lambda x: x[..., 0], reg_class="log_modulus", class_const=1.0, p=1.0)
    with pytest.raises(ValueError, match="unknown"):
        make_observable("cube")


# ---------------------------------------------------------------- class check

def test_class_check_identity_boundary():
    # in dim 1 the Lipschitz ratio of the identity is exactly 1 at every pair
    rep = check_observable_class(make_observable("identity"), seed=0, n_trials=500)
    assert rep.passed
    assert rep.worst_margin == pytest.approx(1.0, abs=1e-12)


def test_class_check_square_declared_lipschitz_fails():
    A = Observable(
        eval=lambda x: np.asarray(x)[..., 0] ** 2,
        reg_class="lipschitz", lip_const=1.0, class_const=1.0, name="square",
    )
    rep = check_observable_class(A, seed=0, n_trials=2_000)
    assert not rep.passed
    w = rep.witness
    x, y = np.array(w["x"]), np.array(w["y"])
    # the witness pair genuinely violates: |x^2-y^2|/|x-y| = |x+y| > 1
    assert abs(x[0] + y[0]) > 1.0
    assert w["ratio"] == rep.worst_margin > 1.0


def test_class_check_constant_always_passes():
    A = make_observable("constant(3.0)")
    for cls_kwargs in (
        dict(reg_class="lipschitz", lip_const=1.0),
        dict(reg_class="hoelder", alpha=0.3),
        dict(reg_class="log_modulus", p=2.0),
    ):
        B = Observable(eval=A.eval, class_const=1.0, name="const", **cls_kwargs)
        rep = check_observable_class(B, seed=1, n_trials=300)
        assert rep.passed and rep.worst_margin == 0.0


def test_class_check_norm2_hoelder_pass():
    rep = check_observable_class(make_observable("norm2"), seed=3, n_trials=5_000, dim=3)
    assert rep.passed
    assert rep.worst_margin <= 1.0


# ------------------------------------------------------------------- scaling

def test_scaling_check_truth_table():
    assert scaling_check(0.75)
    assert not scaling_check(0.5)
    assert not scaling_check(1.0)


def test_scaling_function_window_strict():
    with pytest.raises(ValueError, match="kappa"):
        ScalingFunction(0.5)
    a = ScalingFunction(0.75)
    assert a.a(16.0) == pytest.approx(8.0)
    assert a.tail_scale(100.0) == pytest.approx(100**0.25)
    assert a.speed(100.0) == pytest.approx(100**-0.5)


def test_moderate_functional_arithmetic_and_antisymmetry():
    a = ScalingFunction(0.75)
    assert moderate_functional(0.1, 0.0, 100.0, a) == pytest.approx(0.316228, abs=1e-6)
    assert moderate_functional(0.3, 0.7, 9.0, a) == -moderate_functional(0.7, 0.3, 9.0, a)
    assert moderate_functional(0.4, 0.4, 50.0, a) == 0.0


# ---------------------------------------------------------------- additive

def test_additive_constant():
    got = additive_functional(linear_path(), make_observable("constant(4.0)"))
    assert got == pytest.approx(4.0, abs=1e-12)


def test_additive_linear_ramp():
    got = additive_functional(linear_path(T=1.0, dt=1e-3), make_observable("identity"))
    assert got == pytest.approx(0.5, abs=1e-6)


def test_additive_linearity_and_reversal():
    p = linear_path(T=2.0, dt=0.01)
    A = make_observable("identity")
    double = Observable(eval=lambda x: 2.0 * np.asarray(x)[..., 0],
                        reg_class="lipschitz", lip_const=2.0, class_const=2.0)
    assert additive_functional(p, double) == pytest.approx(
        2 * additive_functional(p, A), abs=1e-12)
    rev = Path(times=p.times, states=p.states[::-1], dt=p.dt)
    assert additive_functional(rev, A) == pytest.approx(
        additive_functional(p, A), abs=1e-12)


def test_additive_single_point():
    p = Path(times=np.array([0.0]), states=np.array([[7.0]]), dt=0.1)
    assert additive_functional(p, make_observable("identity")) == 7.0


# ------------------------------------------------------------ autocovariance

def test_autocov_zero_lag_is_variance():
    rng = np.random.default_rng(0)
    states = rng.standard_normal((500, 1))
    p = Path(times=0.1 * np.arange(500), states=states, dt=0.1)
    lags, c = autocovariance(p, make_observable("identity"), max_lag=2.0)
    assert c[0] == pytest.approx(float(states.var()), rel=1e-12)
    assert lags[0] == 0.0 and lags[1] == pytest.approx(0.1)


def test_autocov_constant_observable_is_zero():
    p = linear_path(T=10.0, dt=0.01)
    _, c = autocovariance(p, make_observable("constant(3.0)"), max_lag=1.0)
    assert np.abs(c).max() == 0.0


def test_autocov_shuffled_path_has_no_memory():
    rng = np.random.default_rng(5)
    states = rng.standard_normal((20_000, 1))
    p = Path(times=0.01 * np.arange(20_000), states=states, dt=0.01)
    lags, c = autocovariance(p, make_observable("identity"), max_lag=0.1)
    stderr = c[0] / math.sqrt(len(states))
    assert (np.abs(c[1:]) <= 3.0 * stderr).all()


def test_autocov_rejects_long_lag():
    p = linear_path(T=1.0, dt=0.01)
    with pytest.raises(ValueError, match="max_lag"):
        autocovariance(p, make_observable("identity"), max_lag=0.5)


def test_autocov_ou_matches_closed_form():
    # stationary OU: C(s) = (sigma^2 / 2 theta) e^{-theta s} = 0.5 e^{-s}
    m = make_mean_field_ou(1.0, 0.0, 1.0)
    frozen = from_samples(np.zeros((1, 1)))
    key = RngKey(0, make_stream(CH_REFERENCE, 0))
    path = simulate_reference(m, frozen, [0.1], 2000.0, 0.01, key)
    lags, c = autocovariance(path, make_observable("identity"), max_lag=3.0)
    expect = 0.5 * np.exp(-lags)
    # tolerance is 10% of the lag-0 value; per-lag relative error at s=3
    # would sit below the single-path noise floor
    assert np.abs(c - expect).max() <= 0.05


def test_ar1_trapezoid_integral_is_dt_free():
    # Euler chain autocovariance C_k = C0 rho^k with rho = 1 - theta dt and
    # C0 = sigma^2/(theta (2 - theta dt)); its trapezoid integral telescopes
    # to sigma^2/(2 theta^2) for every dt — the estimator convention has no
    # dt bias on the linear model
    for dt in (0.25, 0.1, 0.01):
        theta = sigma = 1.0
        rho = 1 - theta * dt
        c0 = sigma**2 / (theta * (2 - theta * dt))
        k = np.arange(int(120 / dt))
        ck = c0 * rho**k
        integral = np.trapezoid(ck, dx=dt)
        assert integral == pytest.approx(sigma**2 / (2 * theta**2), abs=1e-12)


# --------------------------------------------------------- asymptotic variance

def test_asymptotic_variance_ou_green_kubo():
    m = make_mean_field_ou(1.0, 0.0, 1.0)
    mu_bar, _ = estimate_invariant(m, 2000, T_burn=10.0, T_avg=10.0, dt=0.01, seed=8)
    est = asymptotic_variance(m, make_observable("identity"), mu_bar,
                              T=2000.0, dt=0.01, tau=20.0, n_replicas=8, seed=8)
    assert est.vbar == pytest.approx(0.5, abs=0.05)
    assert 0 < est.stderr < 0.05
    assert est.truncation_tau == 20.0 and est.dt == 0.01
    assert len(est.replica_values) == 8


def test_asymptotic_variance_constant_is_zero():
    m = make_mean_field_ou(1.0, 0.0, 1.0)
    mu_bar = from_samples(np.zeros((10, 1)))
    est = asymptotic_variance(m, make_observable("constant(1.0)"), mu_bar,
                              T=50.0, dt=0.01, tau=2.0, n_replicas=2, seed=0)
    assert est.vbar == 0.0


def test_asymptotic_variance_quadratic_scaling_exact():
    # c*A scales every replica value by c^2 on the same noise
    m = make_mean_field_ou(1.0, 0.0, 1.0)
    mu_bar = from_samples(np.array([[0.1], [-0.2], [0.3]]))
    A = make_observable("identity")
    cA = Observable(eval=lambda x: 3.0 * np.asarray(x)[..., 0],
                    reg_class="lipschitz", lip_const=3.0, class_const=3.0)
    a1 = asymptotic_variance(m, A, mu_bar, T=100.0, dt=0.01, tau=5.0, n_replicas=2, seed=3)
    a9 = asymptotic_variance(m, cA, mu_bar, T=100.0, dt=0.01, tau=5.0, n_replicas=2, seed=3)
    assert a9.vbar == pytest.approx(9.0 * a1.vbar, rel=1e-12)


def test_asymptotic_variance_guards():
    m = make_mean_field_ou(1.0, 0.0, 1.0)
    mu_bar = from_samples(np.zeros((2, 1)))
    with pytest.raises(ValueError, match="tau"):
        asymptotic_variance(m, make_observable("identity"), mu_bar,
                            T=10.0, dt=0.01, tau=5.0)
    with pytest.raises(ValueError, match="nonnegative"):
        VarianceEstimate(vbar=-0.1, stderr=0.0, truncation_tau=1.0, dt=0.1)


# ------------------------------------------------------------- rate function

def test_rate_function_values():
    assert rate_function(0.0, 0.5) == 0.0
    assert rate_function(1.0, 0.5) == 0.25
    assert rate_function(-1.0, 0.5) == rate_function(1.0, 0.5)
    with pytest.raises(ValueError):
        rate_function(1.0, 0.0)


def test_rate_function_strictly_convex():
    ys = np.linspace(-2, 2, 9)
    vals = [rate_function(y, 0.5) for y in ys]
    mids = [rate_function(0.5 * (a + b), 0.5) for a, b in zip(ys[:-2], ys[2:])]
    for lo, mid, hi in zip(vals[:-2], mids, vals[2:]):
        assert mid < 0.5 * (lo + hi)
    assert all(v > 0 for y, v in zip(ys, vals) if y != 0)


# ----------------------------------------------------------------- cramer

def test_cramer_zero_argument_exact():
    a = ScalingFunction(0.75)
    assert cramer_functional([0.3, -0.2, 1.0], 0.0, 50.0, a) == 0.0


def test_cramer_degenerate_samples_linear():
    a = ScalingFunction(0.6)
    got = cramer_functional(np.full(100, 2.5), 1.3, 7.0, a)
    assert got == pytest.approx(1.3 * 2.5, rel=1e-12)


def test_cramer_gaussian_mgf_oracle():
    # at t=1 the scaling prefactors cancel; log E exp(z l) = z^2/2 for N(0,1)
    a = ScalingFunction(0.75)
    l = np.random.default_rng(7).standard_normal(100_000)
    got = cramer_functional(l, 0.7, 1.0, a)
    assert got == pytest.approx(0.7**2 / 2, abs=0.01)


def test_cramer_saturation_sentinel():
    a = ScalingFunction(0.75)
    out = cramer_functional([1e6], 5.0, 2.0, a)
    assert out is SATURATED
    assert repr(out) == "SATURATED"


def test_cramer_monotone_for_nonnegative_samples():
    a = ScalingFunction(0.8)
    l = np.abs(np.random.default_rng(1).standard_normal(500))
    zs = [0.0, 0.3, 0.9, 2.0]
    vals = [cramer_functional(l, z, 10.0, a) for z in zs]
    assert all(b >= a_ for a_, b in zip(vals, vals[1:]))


# ----------------------------------------------------------------- legendre

def test_legendre_quadratic_conjugate():
    z = np.linspace(-5, 5, 1001)
    grid = np.column_stack([z, z**2 / 2])
    assert legendre_transform(grid, 1.0) == pytest.approx(0.5, abs=1e-4)
    assert legendre_transform(grid, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_legendre_scaled_conjugate():
    s2 = 4.0
    z = np.linspace(-10, 10, 4001)
    grid = np.column_stack([z, s2 * z**2 / 2])
    for y in (0.5, 1.0, 2.0):
        assert legendre_transform(grid, y) == pytest.approx(y**2 / (2 * s2), abs=1e-4)


def test_legendre_convex_in_y():
    z = np.linspace(-3, 3, 301)
    grid = np.column_stack([z, np.abs(z) ** 1.5])
    ys = np.linspace(-2, 2, 11)
    f = [legendre_transform(grid, y) for y in ys]
    for lo, mid, hi in zip(f[:-2], f[1:-1], f[2:]):
        assert mid <= 0.5 * (lo + hi) + 1e-10


def test_legendre_flags_nonconvex_and_rejects_tiny():
    z = np.linspace(-2, 2, 41)
    grid = np.column_stack([z, -(z**2)])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        legendre_transform(grid, 0.3)
    assert any("convex" in str(w.message) for w in rec)
    with pytest.raises(ValueError, match="3 grid points"):
        legendre_transform(np.array([[0.0, 0.0], [1.0, 1.0]]), 0.5)
