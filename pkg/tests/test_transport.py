import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import erf

from chaoslab.particles import ParticleState
from chaoslab.transport import (EmpiricalMeasure, QuantileMeasure, empirical, generalized_geodesic,
                                quantile_from_cdf, quantile_from_density, quantile_from_empirical,
                                w2_assignment, w2_distance, w2_quantile, w2_sliced, wp_discrete_1d)

points = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=7)


def brute_force_dp(x, y, p):
    """Normalized d_(p) by exhaustive minimization over permutations."""
    n = len(x)
    best = min(sum(abs(x[i] - y[s[i]]) ** p for i in range(n)) for s in permutations(range(n)))
    return (best / n) ** (1.0 / p)


# ---- empirical


def test_empirical_examples():
    a = empirical(ParticleState(np.array([3.0])))
    assert a.n == 1 and a.positions[0, 0] == 3.0 and a.weights[0] == 1.0
    b = empirical(ParticleState(np.array([0.0, 0.0, 1.0])))
    assert np.allclose(b.weights, 1 / 3)
    m = b.merged()
    assert np.allclose(m.positions[:, 0], [0.0, 1.0]) and np.allclose(m.weights, [2 / 3, 1 / 3])
    c = empirical(ParticleState(np.array([0.0, 1.0]), masses=np.array([0.75, 0.25])))
    assert np.array_equal(c.weights, [0.75, 0.25])


def test_empirical_weight_validation():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([0.0, np.inf]), np.array([0.5, 0.5]))


# ---- wp_discrete_1d


def test_wp_examples():
    a = EmpiricalMeasure.uniform([0.0, 1.0])
    b = EmpiricalMeasure.uniform([1.0, 2.0])
    assert wp_discrete_1d(a, b, 2) == pytest.approx(1.0, abs=1e-15)
    assert wp_discrete_1d(a, a, 1) == 0.0 and wp_discrete_1d(a, a, 3) == 0.0
    c = EmpiricalMeasure(np.array([0.0, 3.0]), np.array([2 / 3, 1 / 3]))
    d = EmpiricalMeasure(np.array([1.0]), np.array([1.0]))
    assert wp_discrete_1d(c, d, 1) == pytest.approx(4 / 3, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 7).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n),
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n))),
    st.sampled_from([1.0, 2.0, 3.0]))
def test_isometry_against_permutations(pair, p):
    x, y = pair
    got = wp_discrete_1d(EmpiricalMeasure.uniform(x), EmpiricalMeasure.uniform(y), p)
    assert got == pytest.approx(brute_force_dp(x, y, p), rel=1e-10, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(points, points, points)
def test_metric_axioms(x, y, z):
    a, b, c = (EmpiricalMeasure.uniform(v) for v in (x, y, z))
    assert wp_discrete_1d(a, b) == wp_discrete_1d(b, a)
    assert wp_discrete_1d(a, c) <= wp_discrete_1d(a, b) + wp_discrete_1d(b, c) + 1e-12
    assert wp_discrete_1d(a, a) == 0.0


def test_quantile_limit_converges_to_exact():
    # Q_M and Q differ only on level cells holding a CDF breakpoint, so
    # |W2_M^2 - W2^2| <= K * diam^2 / M with K the total number of atoms
    rng = np.random.default_rng(0)
    a = EmpiricalMeasure(rng.normal(size=7), rng.dirichlet(np.ones(7)))
    b = EmpiricalMeasure(rng.normal(size=5) + 1, rng.dirichlet(np.ones(5)))
    exact = wp_discrete_1d(a, b, 2) ** 2
    allx = np.concatenate([a.positions[:, 0], b.positions[:, 0]])
    K, diam2 = 12, float(np.ptp(allx)) ** 2
    Ms = 2 ** np.arange(6, 13)
    errors = np.array([abs(w2_quantile(quantile_from_empirical(a, M), quantile_from_empirical(b, M)) ** 2
                           - exact) for M in Ms])
    bound = K * diam2 / Ms
    assert np.all(errors <= bound)
    assert np.all(np.diff(bound) < 0)
    assert errors[-1] < errors[0]


# ---- w2_quantile


def test_w2_quantile_examples():
    U = QuantileMeasure(np.linspace(-1, 1, 9))
    assert w2_quantile(U, U) == 0.0
    assert w2_quantile(U, QuantileMeasure(U.U + 0.3)) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValueError):
        w2_quantile(U, QuantileMeasure(np.zeros(4)))


def test_gaussian_w2_closed_form():
    from scipy.stats import norm

    errs = [abs(w2_quantile(quantile_from_density(norm(0, 1), M),
                            quantile_from_density(norm(0, 2), M)) - 1.0) for M in (512, 4096)]
    assert errs[0] <= 1e-2
    assert errs[1] < errs[0]


def test_quantile_measure_requires_order():
    with pytest.raises(ValueError):
        QuantileMeasure(np.array([1.0, 0.0]))


# ---- w2_assignment


def test_assignment_examples():
    a = EmpiricalMeasure.uniform(np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert w2_assignment(a, a) == 0.0
    b = EmpiricalMeasure.uniform(a.positions + np.array([0.0, 1.0]))
    assert w2_assignment(a, b) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_assignment_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    best = min(sum(np.sum((x[i] - y[s[i]]) ** 2) for i in range(6)) for s in permutations(range(6)))
    got = w2_assignment(EmpiricalMeasure.uniform(x), EmpiricalMeasure.uniform(y))
    assert got == pytest.approx(math.sqrt(best / 6), rel=1e-14)


def test_assignment_errors():
    a = EmpiricalMeasure.uniform(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        w2_assignment(a, EmpiricalMeasure.uniform(np.zeros((3, 2))))
    with pytest.raises(ValueError, match="cap"):
        w2_assignment(a, a, cap=3)


def test_w2_distance_dispatch():
    rng = np.random.default_rng(1)
    big = EmpiricalMeasure.uniform(rng.normal(size=(600, 2)))
    val, exact = w2_distance(big, big)
    assert not exact and val == pytest.approx(0.0, abs=1e-12)
    small = EmpiricalMeasure.uniform(rng.normal(size=(10, 2)))
    assert w2_distance(small, small)[1]
    # sliced W2 never exceeds the exact value
    x, y = (EmpiricalMeasure.uniform(rng.normal(size=(40, 2))) for _ in range(2))
    assert w2_sliced(x, y) <= w2_assignment(x, y) + 1e-12


# ---- quantile constructors


def test_quantile_constructor_examples():
    a = quantile_from_empirical(EmpiricalMeasure.uniform([0.0]), 7)
    assert np.array_equal(a.U, np.zeros(7))
    u = quantile_from_density(lambda s: s, 4)
    assert np.allclose(u.U, [0.125, 0.375, 0.625, 0.875])
    # independent root-find of the normal CDF written through erf
    z = brentq(lambda x: 0.5 * (1 + erf(x / math.sqrt(2))) - 0.75, 0, 5, xtol=1e-15)
    g = quantile_from_cdf(lambda x: 0.5 * (1 + erf(x / math.sqrt(2))), 2)
    assert np.allclose(g.U, [-z, z], atol=1e-12)
    assert z == pytest.approx(0.674490, abs=1e-6)


# ---- generalized_geodesic


def test_geodesic_examples():
    rng = np.random.default_rng(2)
    mu0 = QuantileMeasure(np.sort(rng.normal(size=16)))
    mu1 = QuantileMeasure(np.sort(rng.normal(size=16)) + 1)
    assert generalized_geodesic(mu0, mu1, 0.0) is mu0
    assert generalized_geodesic(mu0, mu1, 1.0) is mu1
    d = generalized_geodesic(QuantileMeasure(np.zeros(4)), QuantileMeasure(np.ones(4)), 0.5)
    assert np.array_equal(d.U, np.full(4, 0.5))


@pytest.mark.parametrize("seed", range(10))
def test_geodesic_constant_speed(seed):
    rng = np.random.default_rng(seed)
    mu0 = QuantileMeasure(np.sort(rng.normal(size=32)))
    mu1 = QuantileMeasure(np.sort(rng.exponential(size=32)))
    d = w2_quantile(mu0, mu1)
    for s in (0.25, 0.5, 0.75):
        assert w2_quantile(generalized_geodesic(mu0, mu1, s), mu0) == pytest.approx(s * d, rel=1e-12)


def test_csv_round_trip(tmp_path):
    q = QuantileMeasure(np.array([-1.0, 0.25, 3.0]))
    q.to_csv(tmp_path / "q.csv")
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "3"
    assert np.array_equal(QuantileMeasure.from_csv(tmp_path / "q.csv").U, q.U)
    e = EmpiricalMeasure(np.array([[0.0, 1.0], [2.0, 3.0]]), np.array([0.25, 0.75]))
    e.to_csv(tmp_path / "e.csv")
    back = EmpiricalMeasure.from_csv(tmp_path / "e.csv")
    assert np.array_equal(back.positions, e.positions) and np.array_equal(back.weights, e.weights)
