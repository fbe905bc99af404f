import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdplab.measures import (
    ASSIGNMENT_MAX,
    EmpiricalMeasure,
    EntropicW2,
    from_samples,
    optimal_pairing,
    read_measure_csv,
    wasserstein2,
    wasserstein2_brute,
    write_measure_csv,
)


def clouds(rng, n, dim, scale=1.0):
    return (
        from_samples(scale * rng.standard_normal((n, dim))),
        from_samples(scale * rng.standard_normal((n, dim))),
    )


# ---------------------------------------------------------------- frozen values

def test_frozen_two_atom_shift():
    # atoms {0, 2} vs {1, 3}: monotone matching moves each atom by 1
    mu = from_samples([0.0, 2.0])
    nu = from_samples([3.0, 1.0])
    assert wasserstein2(mu, nu) == pytest.approx(1.0, abs=1e-15)
    assert wasserstein2_brute(mu, nu) == pytest.approx(1.0, abs=1e-15)


def test_frozen_dim2_four_points():
    # hand-checked: identity matching is optimal, squared costs 0.25, 1, 0.25, 1
    mu = from_samples([[0, 0], [1, 0], [0, 1], [2, 2]])
    nu = from_samples([[0.5, 0], [1, 1], [0, 0.5], [2, 1]])
    expect = np.sqrt((0.25 + 1.0 + 0.25 + 1.0) / 4.0)
    assert wasserstein2_brute(mu, nu) == pytest.approx(expect, abs=1e-15)
    assert wasserstein2(mu, nu, method="assignment") == pytest.approx(expect, abs=1e-15)


def test_point_mass_distance_is_euclidean():
    mu = from_samples([[1.0, 2.0]])
    nu = from_samples([[4.0, 6.0]])
    assert wasserstein2(mu, nu) == pytest.approx(5.0, abs=1e-14)


# ------------------------------------------------------- brute oracle agreement

def test_brute_matches_assignment_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        dim = int(rng.integers(1, 4))
        mu, nu = clouds(rng, n, dim, scale=3.0)
        assert wasserstein2(mu, nu, method="assignment") == pytest.approx(
            wasserstein2_brute(mu, nu), abs=1e-9
        )


def test_sorted1d_matches_assignment_dim1():
    rng = np.random.default_rng(8)
    for _ in range(20):
        mu, nu = clouds(rng, 60, 1)
        assert wasserstein2(mu, nu, method="sorted1d") == pytest.approx(
            wasserstein2(mu, nu, method="assignment"), abs=1e-12
        )


# ------------------------------------------------------------ metric properties

def test_symmetry_and_identity():
    rng = np.random.default_rng(9)
    mu, nu = clouds(rng, 40, 2)
    assert wasserstein2(mu, nu) == pytest.approx(wasserstein2(nu, mu), abs=1e-12)
    assert wasserstein2(mu, mu) == pytest.approx(0.0, abs=1e-12)


def test_triangle_inequality():
    rng = np.random.default_rng(10)
    for _ in range(10):
        mu, nu = clouds(rng, 25, 3)
        rho = from_samples(rng.standard_normal((25, 3)))
        d = lambda a, b: wasserstein2(a, b)
        assert d(mu, nu) <= d(mu, rho) + d(rho, nu) + 1e-10


def test_translation_and_scaling():
    rng = np.random.default_rng(11)
    mu, nu = clouds(rng, 30, 2)
    base = wasserstein2(mu, nu)
    shift = np.array([3.0, -1.0])
    mu_s = from_samples(mu.points + shift)
    nu_s = from_samples(nu.points + shift)
    assert wasserstein2(mu_s, nu_s) == pytest.approx(base, abs=1e-10)
    mu_c = from_samples(2.5 * mu.points)
    nu_c = from_samples(2.5 * nu.points)
    assert wasserstein2(mu_c, nu_c) == pytest.approx(2.5 * base, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=2, max_size=6),
    st.integers(0, 2**31 - 1),
)
def test_property_matching_never_beats_brute(xs, seed):
    rng = np.random.default_rng(seed)
    mu = from_samples(np.asarray(xs))
    nu = from_samples(rng.uniform(-50, 50, size=len(xs)))
    assert wasserstein2(mu, nu) == pytest.approx(wasserstein2_brute(mu, nu), abs=1e-9)


# -------------------------------------------------------------- optimal pairing

def test_pairing_achieves_reported_distance():
    rng = np.random.default_rng(12)
    for dim in (1, 2, 3):
        mu, nu = clouds(rng, 35, dim)
        match = optimal_pairing(mu, nu)
        assert sorted(match.tolist()) == list(range(35))  # a permutation
        realized = np.sqrt(np.mean(np.sum((mu.points - nu.points[match]) ** 2, axis=1)))
        assert realized == pytest.approx(wasserstein2(mu, nu), abs=1e-12)


# -------------------------------------------------------------------- entropic

def test_entropic_is_labeled_and_near_exact():
    rng = np.random.default_rng(13)
    mu, nu = clouds(rng, 50, 2)
    val = wasserstein2(mu, nu, method="entropic", eps=0.005)
    assert isinstance(val, EntropicW2)
    assert val.exact is False
    assert val.eps == 0.005
    exact = wasserstein2(mu, nu, method="assignment")
    assert abs(val**2 - exact**2) <= val.bias_bound + 0.05


def test_auto_never_returns_entropic():
    rng = np.random.default_rng(14)
    big = from_samples(rng.standard_normal((ASSIGNMENT_MAX + 1, 2)))
    big2 = from_samples(rng.standard_normal((ASSIGNMENT_MAX + 1, 2)))
    with pytest.raises(ValueError, match="entropic"):
        wasserstein2(big, big2)


# ------------------------------------------------------------------- csv round

def test_csv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(15)
    mu = from_samples(rng.standard_normal((17, 3)) * 1e3)
    p = tmp_path / "cloud.csv"
    write_measure_csv(mu, p)
    header = p.read_text().splitlines()[0]
    assert header == "x0,x1,x2"
    back = read_measure_csv(p)
    assert np.array_equal(back.points, mu.points)


def test_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_measure_csv(p)


# ----------------------------------------------------------------- error cases

def test_nan_atom_names_row():
    pts = np.ones((5, 2))
    pts[3, 1] = np.nan
    with pytest.raises(ValueError, match="row 3"):
        from_samples(pts)


def test_empty_support_rejected():
    with pytest.raises(ValueError, match="empty"):
        from_samples(np.empty((0, 2)))


def test_dim_mismatch_rejected():
    mu = from_samples(np.ones((4, 2)))
    nu = from_samples(np.ones((4, 3)))
    with pytest.raises(ValueError, match="dimension mismatch"):
        wasserstein2(mu, nu)


def test_unequal_sizes_rejected_for_exact():
    mu = from_samples(np.ones((4, 2)))
    nu = from_samples(np.ones((5, 2)))
    with pytest.raises(ValueError, match="equal-size"):
        wasserstein2(mu, nu, method="assignment")


def test_points_are_immutable():
    mu = from_samples([1.0, 2.0])
    with pytest.raises(ValueError):
        mu.points[0] = 9.0
