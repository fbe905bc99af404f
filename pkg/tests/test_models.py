import dataclasses

import numpy as np
import pytest

from mdplab.measures import from_samples
from mdplab.models import (
    DDSDEModel,
    HypothesisReport,
    SHSModel,
    certify_shs,
    check_D3,
    check_H1,
    check_H2,
    kalman_rank,
    make_mean_field_ou,
    make_shs_linear,
    psi_equivalence_constant,
)


# ----------------------------------------------------------------- catalogue

def test_ou_declared_constants():
    m = make_mean_field_ou(theta=1.0, eta=0.5, sigma0=1.0, dim=1)
    assert m.lambda1 == 1.5
    assert m.lambda2 == 0.5
    assert m.lambda1 - m.lambda2 == 1.0
    assert m.kappa1 == m.kappa2 == 1.0
    assert m.sigma_class == "constant"


def test_ou_no_interaction_is_plain_ou():
    m = make_mean_field_ou(theta=2.0, eta=0.0, sigma0=1.0)
    assert m.lambda1 == 4.0 and m.lambda2 == 0.0


def test_ou_rejects_weak_damping():
    with pytest.raises(ValueError, match="theta > eta"):
        make_mean_field_ou(theta=0.1, eta=0.5, sigma0=1.0)


def test_ou_drift_is_vectorized():
    m = make_mean_field_ou(1.0, 0.5, 1.0, dim=2)
    mu = from_samples(np.array([[2.0, 0.0], [0.0, 2.0]]))  # mean (1, 1)
    x = np.array([[1.0, 0.0], [0.0, 0.0], [3.0, -1.0]])
    b = m.drift(x, mu)
    assert b.shape == (3, 2)
    np.testing.assert_allclose(b, -x + 0.5 * np.array([1.0, 1.0]))


def test_shs_full_drift_and_diffusion():
    s = make_shs_linear(gamma=1.0, k=1.0, eps_int=0.0, sigma0=1.0)
    mu = from_samples(np.zeros((4, 2)))
    x = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(s.drift(x, mu), [[2.0, -3.0]])
    np.testing.assert_allclose(s.diffusion(), [[0.0, 0.0], [0.0, 1.0]])


def test_shs_linear_kernel_matches_callable():
    s = make_shs_linear(gamma=1.3, k=0.7, eps_int=0.2, sigma0=0.9)
    F, G, S = s.linear_kernel()
    rng = np.random.default_rng(3)
    pts = rng.standard_normal((6, 2))
    mu = from_samples(pts)
    x = rng.standard_normal((5, 2))
    expect = s.drift(x, mu)
    got = x @ F.T + pts.mean(axis=0) @ G.T
    np.testing.assert_allclose(got, expect, atol=1e-14)


def test_report_consistency_enforced():
    with pytest.raises(ValueError, match="passed"):
        HypothesisReport(name="x", trials=1, worst_margin=1.0, tolerance=0.0, passed=True)


# ------------------------------------------------------------------ check_H1

def test_h1_ou_passes_with_tiny_margin():
    m = make_mean_field_ou(1.0, 0.5, 1.0)
    rep = check_H1(m, seed=11, n_trials=2_000)
    assert rep.passed
    # identity-level bound: the margin is <= 0 analytically, not statistically
    assert rep.worst_margin <= 1e-9


def test_h1_analytic_margin_formula_ou():
    # for the OU drift: margin = -eta*(|dx|^2 - 2 dm.dx + W2^2) <= -eta*(|dx|-W2)^2
    m = make_mean_field_ou(1.0, 0.5, 1.0, dim=2)
    mu = from_samples(np.array([[1.0, 0.0], [3.0, 0.0]]))
    nu = from_samples(np.array([[0.0, 0.0], [0.0, 0.0]]))
    x = np.array([1.0, 1.0])
    y = np.array([0.0, 0.0])
    db = m.drift(x, mu) - m.drift(y, nu)
    dx = x - y
    w2sq = (1.0 + 9.0) / 2.0
    margin = 2 * float(db @ dx) - m.lambda2 * w2sq + m.lambda1 * float(dx @ dx)
    # dm=(2,0), dm.dx=2: margin = -0.5*(2 - 2*2 + 5) = -1.5
    assert margin == pytest.approx(-1.5, abs=1e-12)


def test_h1_misdeclared_fails_with_witness():
    m = make_mean_field_ou(1.0, 0.5, 1.0)
    bad = dataclasses.replace(m, lambda1=m.lambda1 + 1.0)
    rep = check_H1(bad, seed=11, n_trials=500)
    assert not rep.passed
    assert rep.worst_margin > 0
    w = rep.witness
    assert w is not None and w["margin"] == rep.worst_margin
    # witness really violates: recompute its margin from scratch
    x, y = np.array(w["x"]), np.array(w["y"])
    mu, nu = from_samples(np.array(w["mu"])), from_samples(np.array(w["nu"]))
    db = bad.drift(x, mu) - bad.drift(y, nu)
    dx = x - y
    redo = 2 * float(db @ dx) - bad.lambda2 * w["w2"] ** 2 + bad.lambda1 * float(dx @ dx)
    assert redo == pytest.approx(w["margin"], rel=1e-12)


def test_h1_deterministic_in_seed():
    m = make_mean_field_ou(1.0, 0.5, 1.0)
    a = check_H1(m, seed=5, n_trials=200)
    b = check_H1(m, seed=5, n_trials=200)
    assert a.worst_margin == b.worst_margin


# ------------------------------------------------------------------ check_H2

def test_h2_identity_diffusion():
    m = make_mean_field_ou(1.0, 0.5, 1.0, dim=2)
    mu = from_samples(np.zeros((3, 2)))
    k1, k2, ok = check_H2(m, [np.zeros(2), np.ones(2)], [mu])
    assert (k1, k2) == (1.0, 1.0)
    assert ok


def test_h2_anisotropic_and_monotone():
    sig = np.diag([1.0, 2.0])
    m = DDSDEModel(
        dim=2,
        drift=lambda x, mu: -np.asarray(x),
        diffusion=lambda x=None, mu=None: sig,
        sigma_class="constant",
        lambda1=2.0, lambda2=0.0, kappa1=1.0, kappa2=2.0,
    )
    mu = from_samples(np.zeros((3, 2)))
    k1, k2, ok = check_H2(m, [np.zeros(2)], [mu])
    assert (k1, k2) == (1.0, 2.0) and ok
    # adding probes never shrinks the sampled range
    k1b, k2b, _ = check_H2(m, [np.zeros(2), np.ones(2)], [mu, mu])
    assert k1b <= k1 and k2b >= k2


def test_h2_zero_diffusion_fails():
    m = DDSDEModel(
        dim=1,
        drift=lambda x, mu: -np.asarray(x),
        diffusion=lambda x=None, mu=None: np.zeros((1, 1)),
        sigma_class="constant",
        lambda1=2.0, lambda2=0.0, kappa1=0.5, kappa2=1.0,
    )
    mu = from_samples(np.zeros((2, 1)))
    k1, k2, ok = check_H2(m, [np.zeros(1)], [mu])
    assert k1 == 0.0 and not ok


# --------------------------------------------------------------- kalman_rank

def test_kalman_scalar():
    assert kalman_rank([[0.0]], [[1.0]]) == (1, True)


def test_kalman_chain_two_blocks():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    assert kalman_rank(A, B) == (2, True)


def test_kalman_zero_b_fails():
    assert kalman_rank(np.eye(3), np.zeros((3, 1))) == (0, False)


def test_kalman_similarity_invariant():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((4, 4))
    B = rng.standard_normal((4, 2))
    base = kalman_rank(A, B)
    for _ in range(5):
        T = rng.standard_normal((4, 4)) + 4 * np.eye(4)  # well-conditioned
        assert kalman_rank(T @ A @ np.linalg.inv(T), T @ B) == base


# ------------------------------------------------------------------ check_D3

def test_d3_certifies_weak_interaction():
    s = make_shs_linear(gamma=1.0, k=1.0, eps_int=0.1, sigma0=1.0)
    rep = check_D3(s, seed=2, n_trials=400)
    assert rep.passed
    e = rep.extra
    assert e["certified"] and e["theta1"] > e["theta2"] > 0
    assert e["rate"] > 0
    assert rep.worst_margin <= rep.tolerance


def test_d3_explicit_r_matches_schur_threshold():
    # at r=1, r0=0.5 the exact feasibility threshold for theta2 given
    # theta1 < 0.25 follows from a 2x2 Schur complement; the certified grid
    # point must sit above it
    s = make_shs_linear(gamma=1.0, k=1.0, eps_int=0.1, sigma0=1.0)
    rep = check_D3(s, r=1.0, r0=0.5, seed=2, n_trials=200)
    assert rep.passed
    t1, t2 = rep.extra["theta1"], rep.extra["theta2"]
    assert t1 < 0.25  # block (u,v) eigenvalue theta1 - 0.25 must stay <= 0
    M = np.array([[0.3 - (t1 - 0.2), -0.25], [-0.25, 0.3 - (t1 - 0.2)]])
    # recompute threshold at this theta1: M = -(uv block) = [[0.5-t1,0.25],[0.25,0.5-t1]]
    M = np.array([[0.5 - t1, 0.25], [0.25, 0.5 - t1]])
    c = np.array([0.025, 0.05])
    threshold = float(c @ np.linalg.solve(M, c))
    assert t2 >= threshold - 1e-12


def test_d3_refuses_dominant_interaction():
    s = make_shs_linear(gamma=1.0, k=1.0, eps_int=10.0, sigma0=1.0)
    rep = check_D3(s, seed=2)
    assert not rep.passed
    assert not rep.extra["certified"]
    assert rep.worst_margin > 0  # least-violating grid pair still positive
    assert "direction" in rep.witness


def test_d3_degenerate_pair_margin_zero():
    s = certify_shs(make_shs_linear(1.0, 1.0, 0.1, 1.0))
    x = np.array([0.7, -0.3])
    mu = from_samples(np.array([[1.0, 2.0], [0.0, -1.0]]))
    from mdplab.models import _d3_lhs

    du, dv = s.split(x - x)
    dz = np.asarray(s.zfield(x, mu)) - np.asarray(s.zfield(x, mu))
    assert _d3_lhs(s, du, dv, dz, s.r, s.r0) == 0.0


def test_certify_shs_bakes_constants():
    s = certify_shs(make_shs_linear(1.0, 1.0, 0.1, 1.0))
    assert s.theta1 > s.theta2 > 0
    assert s.r is not None and s.r0 is not None
    with pytest.raises(ValueError, match="refused"):
        certify_shs(make_shs_linear(1.0, 1.0, 10.0, 1.0))


def test_psi_equivalence_frozen_value():
    # r=1, r0=0.5, B=[[1]]: P=[[.5,.25],[.25,.5]], eigs .25/.75 -> C = 4
    assert psi_equivalence_constant(1.0, 0.5, [[1.0]]) == pytest.approx(4.0, abs=1e-12)
    with pytest.raises(ValueError, match="positive definite"):
        psi_equivalence_constant(1.0, 1.0, [[1.0]])


def test_shs_constructor_contracts():
    with pytest.raises(ValueError, match="invertible"):
        SHSModel(m=1, d=1, matA=[[0.0]], matB=[[1.0]], matM=[[0.0]],
                 zfield=lambda x, mu: -x[..., 1:2])
    with pytest.raises(ValueError, match="theta1 > theta2"):
        make_shs_linear(1.0, 1.0, 0.0, 1.0).__class__(
            m=1, d=1, matA=[[0.0]], matB=[[1.0]], matM=[[1.0]],
            zfield=lambda x, mu: -x[..., 1:2], theta1=0.1, theta2=0.2)
