import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from chaoslab.gradient_flow import (ConvergenceError, TestFunction, calibrate_evi_constant, convexity_defect,
                                    entropy, evi_residual, evi_tolerance, free_energy, interaction_energy,
                                    jko_flow, jko_step, mean_energy_gap, smooth_cutoff_moment,
                                    weak_mkv_residual)
from chaoslab.isotonic import is_nondecreasing, pava
from chaoslab.oracles import dyson_equilibrium, heat_flow
from chaoslab.potentials import ExternalPotential, PotentialSpec, regularize
from chaoslab.transport import QuantileMeasure, quantile_from_density, w2_quantile

ZERO = PotentialSpec.zero()
OU = PotentialSpec.zero(ExternalPotential.quadratic(1.0))
DYSON = PotentialSpec.logarithmic(ExternalPotential.quadratic(1.0))


def gaussian(M, std=1.0, mean=0.0):
    return quantile_from_density(norm(mean, std), M)


def uniform(M, a=0.0, b=1.0):
    return QuantileMeasure(a + (b - a) * (np.arange(M) + 0.5) / M)


# ---- isotonic projection


def test_pava_example():
    assert np.allclose(pava(np.array([2.0, 1.0, 3.0])), [1.5, 1.5, 3.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40))
def test_pava_is_the_projection(y):
    y = np.array(y)
    x = pava(y)
    assert is_nondecreasing(x)
    assert x.sum() == pytest.approx(y.sum(), abs=1e-9 * (1 + np.abs(y).sum()))
    # variational inequality of the projection onto the monotone cone
    rng = np.random.default_rng(0)
    for _ in range(5):
        z = np.sort(rng.normal(scale=50, size=y.size))
        assert float(np.dot(y - x, z - x)) <= 1e-7 * (1 + np.abs(y).sum()) ** 2


# ---- free energy


def test_free_energy_examples():
    M = 1024
    rep = free_energy(uniform(M), ZERO, 1.0)
    assert rep.entropy == pytest.approx(0.0, abs=1e-12)
    assert rep.total == pytest.approx(0.0, abs=1e-12)
    g = free_energy(gaussian(M), ZERO, 1.0)
    assert g.entropy == pytest.approx(-0.5 * math.log(2 * math.pi * math.e), abs=1e-2)
    a = free_energy(uniform(M), PotentialSpec.attractive_power(0.0), 1.0)
    assert a.interaction == pytest.approx(1 / 6, abs=1.0 / M)


def test_free_energy_total_identity():
    U = gaussian(64)
    for beta in (0.5, 2.0, math.inf):
        r = free_energy(U, DYSON, beta)
        expect = r.interaction + r.potential + (r.entropy / beta if math.isfinite(beta) else 0.0)
        assert r.total == pytest.approx(expect, rel=1e-14)
        assert r.beta == beta


def test_zero_gap_gives_infinite_entropy():
    U = QuantileMeasure(np.array([0.0, 0.0, 1.0]))
    r = free_energy(U, ZERO, 1.0)
    assert r.entropy == math.inf and r.total == math.inf
    assert interaction_energy(U, PotentialSpec.logarithmic()) == math.inf
    assert math.isfinite(free_energy(U, ZERO, math.inf).total)


def test_entropy_convex_and_translation_invariant():
    rng = np.random.default_rng(4)
    for _ in range(20):
        U0 = np.sort(rng.normal(size=32))
        U1 = np.sort(rng.normal(size=32) * 2)
        mid = entropy(0.5 * (U0 + U1))
        assert mid <= 0.5 * (entropy(U0) + entropy(U1)) + 1e-12
        assert entropy(U0 + 3.0) == pytest.approx(entropy(U0), abs=1e-12)


def test_mean_energy_consistency():
    rng = np.random.default_rng(5)
    for N in (8, 32, 128):
        x = rng.normal(size=N)
        p = regularize(DYSON, 0.05, 50.0)
        per, macro, gap, bound = mean_energy_gap(x, p)
        assert per - macro == pytest.approx(gap)
        assert abs(gap) <= bound


# ---- jko_step


def test_step_identity_for_constant_functional():
    U = gaussian(64)
    new, st_ = jko_step(U, 0.1, ZERO, math.inf)
    assert np.array_equal(new.U, U.U)
    assert st_.grad_norm <= st_.tol


@pytest.mark.parametrize("tau", [1e-3, 0.1, 0.7])
def test_step_quadratic_prox(tau):
    U = gaussian(128, std=1.5, mean=0.3)
    new, _ = jko_step(U, tau, OU, math.inf)
    assert np.allclose(new.U, U.U / (1 + tau), rtol=0, atol=1e-12)


def test_step_two_point_log_repulsion():
    # M = 2: gap g after one step solves g (g - g0) = tau (implicit Euler of g' = 1/g)
    g0, tau = 1e-3, 1e-4
    U0 = QuantileMeasure(np.array([-g0 / 2, g0 / 2]))
    new, _ = jko_step(U0, tau, PotentialSpec.logarithmic(), math.inf)
    g = float(np.diff(new.U)[0])
    assert g == pytest.approx(0.5 * (g0 + math.sqrt(g0 * g0 + 4 * tau)), rel=1e-10)
    # the macroscopic rate is half the N = 2 particle rate 2/g0 because of the
    # 1/N versus 1/(N-1) normalization
    small = jko_step(U0, 1e-9, PotentialSpec.logarithmic(), math.inf)[0]
    assert (np.diff(small.U)[0] - g0) / 1e-9 == pytest.approx(0.5 * 2 / g0, rel=1e-3)


def test_step_spreads_concentrated_mass():
    U0 = QuantileMeasure(np.zeros(16))
    new, _ = jko_step(U0, 1e-3, PotentialSpec.logarithmic(), math.inf)
    assert np.all(np.diff(new.U) > 0)


def test_step_tau_constraint():
    morse = PotentialSpec.morse(2.0, 1.0, 1.0, 2.0)
    lam = morse.functional_lambda
    assert lam < 0
    with pytest.raises(ValueError, match="tau"):
        jko_step(gaussian(16), 1.0 / (2 * abs(lam)), morse, math.inf)
    jko_step(gaussian(16), 0.9 / (2 * abs(lam)), morse, math.inf)


def test_step_convergence_error_carries_iterate():
    with pytest.raises(ConvergenceError) as err:
        jko_step(gaussian(64), 1e-2, DYSON, 1.0, tol=1e-30, max_iter=2)
    assert err.value.last is not None and len(err.value.last) == 64


@pytest.mark.parametrize("p,beta", [(DYSON, 1.0), (DYSON, math.inf), (PotentialSpec.attractive_power(0.0), math.inf),
                                    (PotentialSpec.repulsive_power(0.5, ExternalPotential.quadratic(1.0)), 2.0)],
                         ids=["log_b1", "log_binf", "att0", "rep05"])
def test_step_is_a_minimizer(p, beta):
    # perturbations along monotone directions never lower the JKO objective
    tau = 1e-2
    U0 = gaussian(32)
    U1, _ = jko_step(U0, tau, p, beta)

    def J(U):
        return 0.5 * np.mean((U - U0.U) ** 2) / tau + free_energy(U, p, beta).total

    j1 = J(U1.U)
    rng = np.random.default_rng(1)
    for _ in range(20):
        d = rng.normal(size=32) * 1e-4
        V = np.maximum.accumulate(U1.U + d)
        assert J(V) >= j1 - 1e-10


# ---- jko_flow


def test_flow_heat_variance():
    flow = jko_flow(gaussian(512), 1e-3, 1.0, ZERO, 1.0)
    assert flow.final().variance() == pytest.approx(3.0, rel=0.05)
    assert np.all(np.diff(flow.totals) <= 1e-12 * np.maximum(1, np.abs(flow.totals[:-1])))


@pytest.mark.parametrize("p,beta", [(DYSON, 1.0), (DYSON, math.inf), (PotentialSpec.attractive_power(0.0), math.inf),
                                    (PotentialSpec.morse(2.0, 1.0, 1.0, 2.0), 5.0)],
                         ids=["log_b1", "log_binf", "att0", "morse"])
def test_flow_free_energy_nonincreasing(p, beta):
    flow = jko_flow(gaussian(64), 1e-2, 0.3, p, beta)
    tot = flow.totals
    assert np.all(np.diff(tot) <= 1e-12 * np.maximum(1, np.abs(tot[:-1])))
    assert len(flow.steps) == 31 and flow.times[-1] == pytest.approx(0.3)


def test_flow_csv(tmp_path):
    flow = jko_flow(gaussian(8), 0.1, 0.2, DYSON, 1.0)
    flow.to_csv(tmp_path / "f.csv")
    flow.summary_to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "time,quantile_index,U" and len(lines) == 1 + 3 * 8
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "time,interaction,potential,entropy,total"


def test_flow_rejects_tau_above_T():
    with pytest.raises(ValueError):
        jko_flow(gaussian(8), 1.0, 0.5, DYSON, 1.0)


def test_beta_stability():
    mu0 = gaussian(64, std=0.5)
    T, tau = 0.5, 1e-2
    ref = jko_flow(mu0, tau, T, DYSON, math.inf).final()
    dists = [w2_quantile(jko_flow(mu0, tau, T, DYSON, b).final(), ref) for b in (10.0, 100.0, 1000.0)]
    assert np.all(np.diff(dists) < 0)


# ---- EVI residual


def test_evi_calibration_constant():
    c = calibrate_evi_constant()
    assert 0 <= c <= 0.05
    assert evi_tolerance(1e-2) == pytest.approx(0.05 * 0.1)


def test_evi_stationary_minimizer():
    # N(0, 1) is the Gibbs minimizer of the OU free energy at beta = 1
    U = gaussian(256)
    eq = jko_flow(U, 1e-2, 2.0, OU, 1.0).final()
    flow = jko_flow(eq, 1e-2, 0.2, OU, 1.0)
    res = evi_residual(flow, eq)
    assert max(r for _, r in res) <= evi_tolerance(1e-2)


def test_evi_heat_flow():
    tau = 1e-2
    flow = jko_flow(gaussian(256), tau, 0.5, ZERO, 1.0)
    res = evi_residual(flow, flow.steps[0][1], 0.0)
    assert max(r for _, r in res) <= evi_tolerance(tau)


def test_evi_dyson():
    tau = 1e-2
    flow = jko_flow(gaussian(128), tau, 1.0, DYSON, math.inf)
    semi = dyson_equilibrium(4096)
    # compare on the flow's grid: every 32nd oracle quantile block mean
    v = QuantileMeasure(semi.U.reshape(128, 32).mean(axis=1))
    res = evi_residual(flow, v)
    assert max(r for _, r in res) <= evi_tolerance(tau)
    f_semi = free_energy(v, DYSON, math.inf).total
    assert np.all(np.diff(flow.totals) <= 0)
    assert flow.totals[-1] >= f_semi - 1e-3


# ---- weak McKean-Vlasov residual


def test_weak_residual_constant_test_function():
    flow = jko_flow(gaussian(64), 1e-2, 0.1, DYSON, 1.0)
    const = TestFunction(lambda x: np.ones_like(x), lambda x: np.zeros_like(x), lambda x: np.zeros_like(x))
    assert np.all(weak_mkv_residual(flow, [const]) == 0.0)


def test_weak_residual_gibbs_state():
    eq = jko_flow(gaussian(256), 1e-2, 3.0, OU, 1.0).final()
    flow = jko_flow(eq, 1e-2, 0.1, OU, 1.0)
    res = weak_mkv_residual(flow, [smooth_cutoff_moment(8.0)])
    assert np.max(np.abs(res)) <= 5e-3


def test_weak_residual_heat_moment():
    beta, tau = 1.0, 1e-3
    flow = jko_flow(gaussian(256), tau, 0.05, ZERO, beta)
    tf = smooth_cutoff_moment(200.0)
    m2 = [np.mean(tf.phi(mu.U)) for _, mu, _ in flow.steps]
    rate = np.diff(m2) / flow.tau
    # the deficit is the O(tau) error of the implicit scheme
    assert np.allclose(rate, 2 / beta, atol=5e-3)
    assert np.max(np.abs(weak_mkv_residual(flow, [tf]))) <= 5e-3


def test_weak_residual_refinement():
    tf = smooth_cutoff_moment(8.0)
    errs = []
    for tau, M in ((4e-2, 32), (2e-2, 64), (1e-2, 128)):
        flow = jko_flow(gaussian(M), tau, 0.4, DYSON, 1.0)
        errs.append(float(np.max(np.abs(weak_mkv_residual(flow, [tf])))))
    assert errs[2] < errs[1] < errs[0]


def test_smooth_cutoff_derivatives():
    tf = smooth_cutoff_moment(3.0)
    x = np.linspace(-2.9, 2.9, 101)
    h = 1e-5
    assert np.allclose(tf.dphi(x), (tf.phi(x + h) - tf.phi(x - h)) / (2 * h), atol=1e-6)
    assert np.allclose(tf.d2phi(x), (tf.dphi(x + h) - tf.dphi(x - h)) / (2 * h), atol=1e-5)
    assert np.all(tf.phi(np.array([-3.5, 3.5])) == 0)


# ---- convexity along generalized geodesics


@pytest.mark.parametrize("p,beta", [(DYSON, 1.0), (OU, 1.0), (PotentialSpec.attractive_power(1.0), math.inf)],
                         ids=["log", "ou", "att1"])
def test_convexity_defect_nonpositive(p, beta):
    rng = np.random.default_rng(2)
    for _ in range(50):
        U0 = np.sort(rng.normal(size=24))
        U1 = np.sort(rng.normal(size=24) * rng.uniform(0.5, 2) + rng.normal())
        for s in (0.25, 0.5, 0.75):
            assert convexity_defect(U0, U1, p, beta, s) <= 1e-9


def test_heat_oracle_consistency():
    flow = jko_flow(gaussian(256), 1e-2, 0.5, ZERO, 1.0)
    assert w2_quantile(flow.final(), heat_flow(0.0, 1.0, 1.0, 0.5, 256)) <= 0.02
