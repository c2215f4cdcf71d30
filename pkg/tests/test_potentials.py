import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from chaoslab.potentials import (ExternalPotential, ExtrapolationError, PotentialSpec, SingularityError,
                                 certify_lambda, eval_grad_w, eval_w, regularize)

CATALOG = {
    "log": PotentialSpec.logarithmic(),
    "rep_s05": PotentialSpec.repulsive_power(0.5),
    "rep_s1": PotentialSpec.repulsive_power(1.0),
    "rep_sneg": PotentialSpec.repulsive_power(-0.5),
    "att0": PotentialSpec.attractive_power(0.0),
    "att1": PotentialSpec.attractive_power(1.0),
    "att_half": PotentialSpec.attractive_power(0.5),
    "morse": PotentialSpec.morse(2.0, 1.0, 1.0, 2.0),
}


def central_difference(f, r, h=1e-6):
    return (f(r + h) - f(r - h)) / (2 * h)


# ---- eval_w


def test_eval_w_examples():
    assert eval_w(PotentialSpec.attractive_power(0.0), 2.0) == 2.0
    assert eval_w(PotentialSpec.logarithmic(), 1.0) == 0.0
    assert eval_w(PotentialSpec.morse(2.0, 1.0, 1.0, 2.0), 0.0) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("name", ["log", "rep_s05", "rep_s1"])
def test_singular_kinds_infinite_at_origin(name):
    assert eval_w(CATALOG[name], 0.0) == math.inf


@pytest.mark.parametrize("name", ["att0", "att1", "rep_sneg"])
def test_lipschitz_kinds_finite_at_origin(name):
    assert eval_w(CATALOG[name], 0.0) == 0.0


def test_eval_w_rejects_negative_radius():
    with pytest.raises(ValueError):
        eval_w(CATALOG["log"], -1.0)


def test_tabulated_extrapolation_error():
    r = np.linspace(0.5, 5.0, 40)
    p = PotentialSpec.tabulated(r, r**2)
    assert eval_w(p, 2.0) == pytest.approx(4.0, rel=1e-3)
    with pytest.raises(ExtrapolationError):
        eval_w(p, 6.0)


def test_catalog_formulas():
    r = np.array([0.3, 1.0, 2.5])
    assert np.allclose(CATALOG["rep_s05"].w(r), r**-0.5)
    assert np.allclose(CATALOG["rep_sneg"].w(r), -(r**0.5))
    assert np.allclose(CATALOG["att_half"].w(r), r**1.5)
    assert np.allclose(CATALOG["log"].w(r), -np.log(r))


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_evenness(name):
    p = CATALOG[name]
    r = np.linspace(0.1, 5.0, 50)
    assert np.array_equal(p.w(r), p.w(np.abs(-r)))
    assert np.array_equal(p.pair_value(r, 0.0), p.pair_value(0.0, r))


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_monotone_sign(name):
    p = CATALOG[name]
    w = p.w(np.geomspace(0.05, 20.0, 200))
    if p.sign == "repulsive":
        assert np.all(np.diff(w) <= 0)
    elif p.sign == "attractive":
        assert np.all(np.diff(w) >= 0)


# ---- eval_grad_w


def test_eval_grad_w_examples():
    assert np.array_equal(eval_grad_w(PotentialSpec.attractive_power(0.0), [0.0]), [0.0])
    assert eval_grad_w(PotentialSpec.logarithmic(), [0.5]) == pytest.approx([-2.0])
    g = eval_grad_w(PotentialSpec.attractive_power(1.0), [3.0, 4.0])
    assert g == pytest.approx([6.0, 8.0])
    # independent check: central differences of |x|^2
    f = lambda v: float(np.dot(v, v))
    fd = [(f(np.array([3.0 + 1e-6, 4.0])) - f(np.array([3.0 - 1e-6, 4.0]))) / 2e-6,
          (f(np.array([3.0, 4.0 + 1e-6])) - f(np.array([3.0, 4.0 - 1e-6]))) / 2e-6]
    assert g == pytest.approx(fd, abs=1e-5)


@pytest.mark.parametrize("name", ["log", "rep_s05", "rep_s1"])
def test_eval_grad_w_singular_origin(name):
    with pytest.raises(SingularityError) as err:
        eval_grad_w(CATALOG[name], [0.0])
    assert err.value.radius == 0.0


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_gradient_matches_finite_differences(name):
    p = CATALOG[name]
    rng = np.random.default_rng(7)
    r = rng.uniform(0.1, 10.0, 100)
    fd = central_difference(lambda x: p.w(x), r)
    assert np.max(np.abs(p.dw(r) - fd)) <= 1e-5
    grads = np.array([eval_grad_w(p, [x])[0] for x in r])
    assert np.allclose(grads, p.dw(r))


@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_grad_radial_direction(a, b):
    p = CATALOG["att_half"]
    v = np.array([a, -b])
    g = eval_grad_w(p, v)
    r = np.hypot(a, b)
    assert np.allclose(g, p.dw(r) * v / r)


# ---- regularize


def test_regularize_examples():
    R = regularize(PotentialSpec.logarithmic(), 0.1, 10.0)
    expected = -math.log(0.1) - (0.05 - 0.1) / 0.1
    assert float(R.w(0.05)) == pytest.approx(expected, rel=1e-14)
    assert float(R.w(0.05)) == pytest.approx(2.8026, abs=1e-4)
    assert float(R.w(1.0)) == 0.0
    A = regularize(PotentialSpec.attractive_power(0.0), 0.1, 10.0)
    assert float(A.w(0.05)) == pytest.approx(0.05, abs=1e-15)


def test_regularize_rejects_bad_parameters():
    with pytest.raises(ValueError):
        regularize(PotentialSpec.logarithmic(), 1.0, 0.5)
    with pytest.raises(ValueError):
        regularize(PotentialSpec.logarithmic(), 0.0, 1.0)


def test_regularize_tabulated_is_one_sided():
    r = np.linspace(0.05, 10.0, 400)
    p = PotentialSpec.tabulated(r, -np.log(r))
    R = regularize(p, 0.2, 5.0)
    assert R.one_sided
    assert float(R.w(0.1)) <= float(p.w(0.1))


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_regularization_ordering(name):
    p = CATALOG[name]
    eps, Rmax = 0.2, 4.0
    R = regularize(p, eps, Rmax)
    r = np.linspace(1e-3, 8.0, 2000)
    assert np.all(R.w(r) <= p.w(r) + 1e-12)
    inner = (r >= eps) & (r <= Rmax)
    assert np.array_equal(R.w(r[inner]), p.w(r[inner]))
    # continuity at the knots and at the origin
    for a in (eps, Rmax):
        assert float(R.w(a - 1e-9)) == pytest.approx(float(R.w(a + 1e-9)), abs=1e-7)
    assert math.isfinite(float(R.w(0.0)))


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_regularization_increases_to_base(name):
    p = CATALOG[name]
    r = np.geomspace(1e-3, 1.0, 300)
    prev = None
    for eps in (0.5, 0.2, 0.05, 0.01):
        cur = regularize(p, eps, 100.0).w(r)
        if prev is not None:
            assert np.all(cur >= prev - 1e-12)
        prev = cur


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_regularization_keeps_lambda(name):
    p = CATALOG[name]
    R = regularize(p, 0.2, 4.0)
    grid = np.linspace(0.01, 8.0, 800)
    assert certify_lambda(R, grid).passed


# ---- certify_lambda


def test_certify_lambda_examples():
    cert = certify_lambda(PotentialSpec.attractive_power(1.0), np.linspace(0.1, 10.0, 200))
    assert cert.passed and cert.lambda_observed == pytest.approx(2.0, rel=1e-8)
    assert certify_lambda(PotentialSpec.logarithmic(), np.linspace(0.1, 10.0, 200)).passed
    # independent minimum of w'' for Morse(2, 1, 1, 2)
    res = minimize_scalar(lambda r: 2 * math.exp(-r) - 0.25 * math.exp(-r / 2),
                          bounds=(0.0, 50.0), method="bounded", options={"xatol": 1e-12})
    morse = PotentialSpec.morse(2.0, 1.0, 1.0, 2.0, lam=res.fun)
    assert morse.lam == pytest.approx(res.fun, rel=1e-6)
    assert certify_lambda(morse, np.linspace(0.1, 10.0, 400)).passed


def test_certify_lambda_rejects_origin_for_singular():
    with pytest.raises(ValueError):
        certify_lambda(PotentialSpec.logarithmic(), [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        certify_lambda(PotentialSpec.logarithmic(), [1.0, 2.0])


def test_wrong_lambda_declaration():
    with pytest.raises(ValueError, match="not certified"):
        PotentialSpec.morse(2.0, 1.0, 1.0, 2.0, lam=0.5)
    # a tabulated kernel is certified against its declared modulus only on request
    r = np.linspace(0.1, 10.0, 400)
    cert = certify_lambda(PotentialSpec.tabulated(r, r**2), r)
    assert cert.lambda_observed == pytest.approx(2.0, rel=1e-3)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_certificate_for_catalog(name):
    p = CATALOG[name]
    grid = np.geomspace(1e-2, 50.0, 600)
    assert certify_lambda(p, grid).passed


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.0))
def test_repulsive_family_convex(s):
    p = PotentialSpec.repulsive_power(s)
    assert p.lam == 0.0
    assert certify_lambda(p, np.geomspace(0.05, 20.0, 300)).passed


def test_external_potentials():
    V = ExternalPotential.quadratic(2.0)
    x = np.array([-1.0, 0.5])
    assert np.allclose(V.value(x), x**2)
    assert np.allclose(V.grad(x), 2 * x)
    assert V.lam == 2.0
    P = ExternalPotential.polynomial([0.0, 0.0, 0.5, 0.0, 0.25])
    xs = np.linspace(-2, 2, 9)
    assert np.allclose(P.grad(xs), central_difference(P.value, xs), atol=1e-6)
    assert P.lam == pytest.approx(1.0)
