"""Minimizing-movement (JKO) flow of the free energy on 1D quantile grids.

The free energy of a measure stored as quantiles ``U`` (levels (k - 1/2)/M) is

    F(U) = 1/(2 M^2) sum_{k != l} W(U_k, U_l) + 1/M sum_k V(U_k) + H(U)/beta

where H is the entropy of the piecewise-uniform density with mass 1/M on
each gap ``[U_j, U_{j+1}]`` and mass 1/(2M) on the two boundary half-cells of
width equal to the adjacent gap. Each JKO step minimizes

    J(U) = 1/(2 tau) * 1/M * sum_k (U_k - U_prev_k)^2 + F(U)

over nondecreasing U. Internally the objective is multiplied by M so that
gradients are per-particle forces.
"""
from __future__ import annotations

import csv
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solveh_banded
from scipy.spatial.distance import pdist

from .isotonic import pava
from .potentials import Kind
from .transport import QuantileMeasure, w2_quantile

TOL_INNER_PER_POINT = 1e-10
MAX_INNER = 10_000
ARMIJO = 1e-4
# residual constant C in tol_evi(tau) = C * sqrt(tau); see calibrate_evi_constant
EVI_CONSTANT = 0.05


class ConvergenceError(RuntimeError):
    """Inner JKO solver hit its iteration cap; ``last`` holds the final iterate."""

    def __init__(self, message, last=None, grad_norm=float("nan")):
        super().__init__(message)
        self.last = last
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class FreeEnergyReport:
    interaction: float
    potential: float
    entropy: float
    total: float
    beta: float


@dataclass(frozen=True)
class StepStats:
    iterations: int
    grad_norm: float
    tol: float
    method: str


@dataclass
class JKOFlow:
    """Piecewise-constant minimizing movement: ``steps[n] = (n tau, mu_n, report_n)``."""

    tau: float
    potential: object
    beta: float
    steps: List[tuple] = field(default_factory=list)
    stats: List[StepStats] = field(default_factory=list)

    @property
    def times(self):
        return np.array([t for t, _, _ in self.steps])

    @property
    def totals(self):
        return np.array([r.total for _, _, r in self.steps])

    def at(self, t):
        """Measure of the last step with time <= t (up to roundoff)."""
        times = self.times
        idx = int(np.searchsorted(times, t + 1e-9 * max(self.tau, abs(t)), side="right")) - 1
        if idx < 0:
            raise ValueError(f"time {t} precedes the flow")
        return self.steps[idx][1]

    def final(self):
        return self.steps[-1][1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["time", "quantile_index", "U"])
            for t, mu, _ in self.steps:
                for k, u in enumerate(mu.U):
                    out.writerow([repr(float(t)), k, repr(float(u))])

    def summary_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["time", "interaction", "potential", "entropy", "total"])
            for t, _, r in self.steps:
                out.writerow([repr(float(v)) for v in
                              (t, r.interaction, r.potential, r.entropy, r.total)])


# --------------------------------------------------------------------------
# discrete free energy


def _as_array(mu):
    return np.asarray(mu.U if isinstance(mu, QuantileMeasure) else mu, dtype=float)


def _entropy_weights(M):
    c = np.ones(M - 1)
    c[0] += 0.5
    c[-1] += 0.5
    return c


def entropy(U):
    """Entropy ``int rho log rho`` of the piecewise-uniform density (``+inf`` on a zero gap)."""
    U = _as_array(U)
    M = U.size
    if M < 2:
        return math.inf
    g = np.diff(U)
    if np.any(g <= 0):
        return math.inf
    return float(-np.dot(_entropy_weights(M), np.log(M * g)) / M)


@lru_cache(maxsize=8)
def _order_sign(M):
    k = np.arange(M)
    return np.sign(k[:, None] - k[None, :]).astype(float)


def interaction_energy(U, p, diagonal=False):
    """1/(2 M^2) sum over pairs of W(U_k, U_l); the k = l terms only when ``diagonal``."""
    U = _as_array(U)
    M = U.size
    if p.kind is Kind.ZERO or M < 2 and not diagonal:
        return 0.0
    if getattr(p, "translation_invariant", True):
        r = pdist(U[:, None], "cityblock")
        if getattr(p, "strongly_singular", False) and np.any(r == 0):
            return math.inf
        s = 2.0 * float(np.sum(p.w(r)))
        if diagonal:
            s += M * float(p.w(0.0))
        return s / (2.0 * M * M)
    iu = np.triu_indices(M, 1)
    xi, xj = U[iu[0]], U[iu[1]]
    if p.strongly_singular and np.any(xi == xj):
        return math.inf
    s = 2.0 * float(np.sum(p.pair_value(xi, xj)))
    if diagonal:
        raise ValueError("spin-weighted kernels are singular on the diagonal")
    return s / (2.0 * M * M)


def free_energy(mu, p, beta) -> FreeEnergyReport:
    U = _as_array(mu)
    inter = interaction_energy(U, p)
    pot = float(np.mean(p.external.value(U)))
    ent = entropy(U)
    total = inter + pot
    if math.isfinite(beta):
        total = total + ent / beta
    return FreeEnergyReport(inter, pot, ent, total, float(beta))


def macroscopic_energy_empirical(x, p):
    """E_{W,V} of the uniform empirical measure on the rows of ``x`` (diagonal included)."""
    x = np.asarray(x, dtype=float)
    x = x[:, 0] if x.ndim == 2 else x
    return interaction_energy(np.sort(x), p, diagonal=True) + float(np.mean(p.external.value(x)))


def mean_energy_gap(x, p):
    """Return ``(E^(N)/N, E(delta_N), gap, bound)`` for a bounded (regularized) kernel.

    The gap equals ``(avg_{k != l} w - w(0)) / (2N)``; ``bound = C_R / N`` with
    ``C_R`` the largest |w| over the sampled separations and the origin.
    """
    from .particles import ParticleState, energy_EN

    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1:
        x = x.T
    n = x.shape[0]
    per = energy_EN(ParticleState(x), p) / n
    macro = macroscopic_energy_empirical(x, p)
    r = np.abs(x[:, 0][:, None] - x[:, 0][None, :])
    c_r = float(np.max(np.abs(p.w(r))))
    return per, macro, per - macro, c_r / n


# --------------------------------------------------------------------------
# objective pieces (M-scaled)


class _Objective:
    """``J_M(U) = |U - U0|^2/(2 tau) + M F(U)`` with gradient and Hessian."""

    def __init__(self, U0, tau, p, beta):
        self.U0 = U0
        self.tau = tau
        self.p = p
        self.beta = beta
        self.M = U0.size
        self.entropic = math.isfinite(beta)
        self.singular = bool(getattr(p, "strongly_singular", False))
        self.barrier = self.entropic or self.singular
        self.pairwise = p.kind is not Kind.ZERO and self.M >= 2
        self.spin = not getattr(p, "translation_invariant", True)
        self.has_hessian = not self.spin
        self._sign = _order_sign(self.M) if self.pairwise else None
        self._c = _entropy_weights(self.M) if self.M >= 2 else None

    def feasible(self, U):
        if not np.all(np.isfinite(U)):
            return False
        if self.barrier:
            return bool(np.all(np.diff(U) > 0))
        return bool(np.all(np.diff(U) >= 0))

    def value(self, U):
        if not self.feasible(U):
            return math.inf
        M = self.M
        val = 0.5 * float(np.dot(U - self.U0, U - self.U0)) / self.tau
        val += M * (interaction_energy(U, self.p) + float(np.mean(self.p.external.value(U))))
        if self.entropic:
            val += M * entropy(U) / self.beta
        return val

    def _pair_forces(self, U):
        """Row k: 1/M sum_l d/dU_k W(U_k, U_l) using index order on ties."""
        M = self.M
        if not self.pairwise:
            return np.zeros(M)
        if self.spin:
            xi = np.broadcast_to(U[:, None], (M, M))
            xj = np.broadcast_to(U[None, :], (M, M))
            off = ~np.eye(M, dtype=bool)
            xj_safe = np.where(off, xj, xi + 1.0)
            f = np.where(off, self.p.pair_grad_x(xi, xj_safe), 0.0)
            return f.sum(axis=1) / M
        d = U[:, None] - U[None, :]
        np.fill_diagonal(d, 1.0)
        if np.any(d == 0):
            f = self._sign * self.p.dw(np.abs(d))
        else:
            f = self.p.odd_dw(d)
        np.fill_diagonal(f, 0.0)
        return f.sum(axis=1) / M

    def _entropy_grad(self, U):
        # M * dH/dU_k = -(c_{k-1}/g_{k-1} - c_k/g_k)
        q = self._c / np.diff(U)
        out = np.zeros(self.M)
        out[1:] -= q
        out[:-1] += q
        return out

    def grad(self, U):
        g = (U - self.U0) / self.tau + self._pair_forces(U) + self.p.external.grad(U)
        if self.entropic:
            g = g + self._entropy_grad(U) / self.beta
        return g

    def grad_scale(self, U):
        """Magnitude of the individual force terms (roundoff reference for the gradient)."""
        s = np.abs(U - self.U0) / self.tau + np.abs(self.p.external.grad(U))
        if self.pairwise:
            s = s + np.abs(self._pair_forces(U))
        if self.entropic:
            q = self._c / np.diff(U)
            s[1:] += q / self.beta
            s[:-1] += q / self.beta
        return float(np.linalg.norm(s)) + np.abs(U).max() / self.tau

    def hessian(self, U):
        """Return ``(dense or None, band)``; band is the upper tridiagonal in LAPACK layout."""
        M = self.M
        diag = np.full(M, 1.0 / self.tau) + self.p.external.hess_diag(U)
        upper = np.zeros(M)
        if self.entropic:
            q = self._c / np.diff(U) ** 2 / self.beta
            diag[1:] += q
            diag[:-1] += q
            upper[1:] = -q
        dense = None
        if self.pairwise and not self._flat_pair_curvature():
            r = np.abs(U[:, None] - U[None, :])
            np.fill_diagonal(r, 1.0)
            h = self.p.d2w(r) / M
            np.fill_diagonal(h, 0.0)
            dense = -h
            dense[np.diag_indices(M)] = h.sum(axis=1)
        return dense, np.vstack([upper, diag]), diag

    def _flat_pair_curvature(self):
        return self.p.kind is Kind.ATTRACTIVE_POWER and self.p.params["alpha"] == 0

    def newton_direction(self, U, g):
        dense, band, diag = self.hessian(U)
        try:
            if dense is None:
                return -solveh_banded(band, g)
            H = dense
            H[np.diag_indices(self.M)] += diag
            off = band[0, 1:]
            idx = np.arange(self.M - 1)
            H[idx, idx + 1] += off
            H[idx + 1, idx] += off
            return -cho_solve(cho_factor(H, check_finite=False), g, check_finite=False)
        except (LinAlgError, ValueError):
            return None


def _make_feasible(U, barrier):
    """Tiny strictly increasing perturbation of a grid with ties (barrier problems)."""
    U = pava(U)
    if not barrier or np.all(np.diff(U) > 0):
        return U
    M = U.size
    spread = max(1e-9, 1e-9 * float(np.abs(U).max()))
    U = U + spread * (np.arange(M) - 0.5 * (M - 1)) / M
    return pava(U)


def _check_tau(tau, p):
    if tau <= 0:
        raise ValueError("tau must be positive")
    lam = p.functional_lambda
    if lam < 0 and tau >= 1.0 / (2.0 * abs(lam)):
        raise ValueError(
            f"tau={tau:g} violates tau < 1/(2|lambda|) = {1.0 / (2 * abs(lam)):g} "
            f"for lambda={lam:g}")


def _newton(obj, U, tol, max_iter):
    J = obj.value(U)
    for it in range(1, max_iter + 1):
        g = obj.grad(U)
        gn = float(np.linalg.norm(g))
        if gn <= tol or (gn <= 1e3 * tol and gn <= 1e-13 * obj.grad_scale(U)):
            return U, it - 1, gn
        d = obj.newton_direction(U, g) if obj.has_hessian else None
        if d is None or not np.all(np.isfinite(d)) or g @ d >= 0:
            d = -obj.tau * g
        # fraction to the boundary of the ordered cone
        dd = np.diff(d)
        shrink = dd < 0
        s = 1.0
        if np.any(shrink):
            s = min(1.0, 0.995 * float(np.min(-np.diff(U)[shrink] / dd[shrink])))
        slope = float(g @ d)
        # objective differences this small are roundoff
        slack = 1e-13 * max(1.0, abs(J))
        accepted = False
        for _ in range(60):
            Un = U + s * d
            Jn = obj.value(Un)
            if Jn <= J + ARMIJO * s * slope + slack:
                accepted = True
                break
            if math.isfinite(Jn) and s < 1e-3:
                # objective differences below roundoff: accept if the gradient drops
                if np.linalg.norm(obj.grad(Un)) < gn:
                    accepted = True
                    break
            s *= 0.5
        if not accepted:
            if gn <= 1e-9 * obj.grad_scale(U):
                return U, it, gn
            raise ConvergenceError(f"line search failed (|grad|={gn:.3e})", U, gn)
        U, J = Un, Jn
    gn = float(np.linalg.norm(obj.grad(U)))
    if gn <= tol:
        return U, max_iter, gn
    raise ConvergenceError(f"no convergence in {max_iter} iterations (|grad|={gn:.3e})", U, gn)


def _projected_gradient(obj, U, tol, max_iter):
    """Projected gradient with Barzilai-Borwein steps and isotonic projection."""
    J = obj.value(U)
    g = obj.grad(U)
    t = obj.tau
    U_prev = g_prev = None
    for it in range(1, max_iter + 1):
        pg = (U - pava(U - obj.tau * g)) / obj.tau
        gn = float(np.linalg.norm(pg))
        if gn <= tol or (gn <= 1e3 * tol and gn <= 1e-13 * obj.grad_scale(U)):
            return U, it - 1, gn
        if U_prev is not None:
            s_vec, y_vec = U - U_prev, g - g_prev
            sy = float(s_vec @ y_vec)
            t = float(s_vec @ s_vec) / sy if sy > 0 else obj.tau
            t = min(max(t, 1e-6 * obj.tau), 1e3 * obj.tau)
        for _ in range(80):
            Un = pava(U - t * g)
            Jn = obj.value(Un)
            if Jn <= J - ARMIJO / t * float(np.dot(Un - U, Un - U)):
                break
            t *= 0.5
        else:
            if gn <= 1e-9 * obj.grad_scale(U):
                return U, it, gn
            raise ConvergenceError(f"backtracking failed (|pg|={gn:.3e})", U, gn)
        U_prev, g_prev = U, g
        U, J = Un, Jn
        g = obj.grad(U)
    raise ConvergenceError(f"no convergence in {max_iter} iterations", U, gn)


def jko_step(prev, tau, p, beta, tol=None, max_iter=MAX_INNER, method="auto", guess=None):
    """One minimizing-movement step from ``prev``; returns ``(QuantileMeasure, StepStats)``.

    ``method="auto"`` uses damped Newton with a fraction-to-boundary rule
    when the objective carries a barrier (entropy or a strongly singular
    kernel) and projected gradient with isotonic projection otherwise.
    """
    _check_tau(tau, p)
    U0 = _as_array(prev).copy()
    M = U0.size
    if math.isfinite(beta) and M < 2:
        raise ValueError("entropy needs M >= 2")
    obj = _Objective(U0, float(tau), p, float(beta))
    tol = TOL_INNER_PER_POINT * M if tol is None else tol
    U = _make_feasible(U0, obj.barrier)
    if guess is not None:
        # a warm start is used only if it is admissible and not worse than prev
        G = np.asarray(guess, dtype=float)
        if G.shape == U.shape and obj.value(G) <= obj.value(U):
            U = G
    if method == "auto":
        method = "newton" if obj.barrier else "pgd"
    if method == "newton":
        U, iters, gn = _newton(obj, U, tol, max_iter)
    elif method == "pgd":
        U, iters, gn = _projected_gradient(obj, U, tol, max_iter)
    else:
        raise ValueError(f"unknown inner method {method!r}")
    return QuantileMeasure(np.maximum.accumulate(U)), StepStats(iters, gn, tol, method)


def jko_flow(mu0, tau, T, p, beta, tol=None, max_iter=MAX_INNER, method="auto",
             callback: Optional[Callable] = None) -> JKOFlow:
    """Iterate :func:`jko_step` up to time ``T`` (``round(T/tau)`` steps)."""
    if tau > T + 1e-12:
        raise ValueError("tau must not exceed T")
    _check_tau(tau, p)
    mu = mu0 if isinstance(mu0, QuantileMeasure) else QuantileMeasure(mu0)
    n_steps = int(round(T / tau))
    flow = JKOFlow(float(tau), p, float(beta))
    flow.steps.append((0.0, mu, free_energy(mu, p, beta)))
    prev = None
    for n in range(1, n_steps + 1):
        # linear extrapolation of the last two steps as the inner starting point
        guess = None if prev is None else 2.0 * mu.U - prev
        prev = mu.U
        mu, st = jko_step(mu, tau, p, beta, tol=tol, max_iter=max_iter, method=method,
                          guess=guess)
        flow.steps.append((n * tau, mu, free_energy(mu, p, beta)))
        flow.stats.append(st)
        if callback is not None:
            callback(n, mu)
    return flow


# --------------------------------------------------------------------------
# residual diagnostics


def evi_tolerance(tau, constant=EVI_CONSTANT):
    return constant * math.sqrt(tau)


def evi_residual(flow: JKOFlow, v, lam=None):
    """Discrete EVI residual along a flow against the reference measure ``v``.

    residual_n = (W2^2(mu_{n+1}, v) - W2^2(mu_n, v)) / (2 tau)
                 + F(mu_{n+1}) + lam/2 W2^2(mu_{n+1}, v) - F(v)
    """
    p, beta = flow.potential, flow.beta
    lam = p.functional_lambda if lam is None else lam
    v = v if isinstance(v, QuantileMeasure) else QuantileMeasure(v)
    fv = free_energy(v, p, beta).total
    if not math.isfinite(fv):
        raise ValueError("reference measure has infinite free energy")
    d2 = [w2_quantile(mu, v) ** 2 for _, mu, _ in flow.steps]
    out = []
    for n in range(len(flow.steps) - 1):
        t1, _, rep = flow.steps[n + 1]
        res = 0.5 * (d2[n + 1] - d2[n]) / flow.tau + rep.total + 0.5 * lam * d2[n + 1] - fv
        out.append((t1, float(res)))
    return out


def calibrate_evi_constant(tau=1e-2, M=256, T=0.5, beta=1.0):
    """Largest residual / sqrt(tau) of the EVI formula along the exact heat flow.

    The heat flow from N(0,1) is evaluated in closed form on the quantile
    grid, so the returned constant measures only the forward-difference and
    quantile discretization error of the residual itself.
    """
    from .oracles import heat_flow
    from .potentials import PotentialSpec

    p = PotentialSpec.zero()
    flow = JKOFlow(tau, p, beta)
    for n in range(int(round(T / tau)) + 1):
        mu = heat_flow(0.0, 1.0, beta, n * tau, M)
        flow.steps.append((n * tau, mu, free_energy(mu, p, beta)))
    res = evi_residual(flow, flow.steps[0][1], 0.0)
    return max(0.0, max(r for _, r in res)) / math.sqrt(tau)


@dataclass(frozen=True)
class TestFunction:
    """A smooth test function given by its value and first two derivatives."""

    phi: Callable
    dphi: Callable
    d2phi: Callable

    __test__ = False  # not a pytest class despite the name


def smooth_cutoff_moment(L):
    """x^2 damped by a smooth bump that vanishes outside ``[-L, L]``."""

    def bump(x):
        z = np.clip(np.asarray(x, dtype=float) / L, -1.0, 1.0)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            b = np.where(np.abs(z) < 1, np.exp(1.0 - 1.0 / (1.0 - z * z)), 0.0)
        return np.nan_to_num(b)

    def db(x):
        x = np.asarray(x, dtype=float)
        z = np.clip(x / L, -1.0, 1.0)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = bump(x) * (-2.0 * z / (1.0 - z * z) ** 2) / L
        return np.where(np.abs(z) < 1, np.nan_to_num(out), 0.0)

    def d2b(x):
        x = np.asarray(x, dtype=float)
        z = np.clip(x / L, -1.0, 1.0)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            a = -2.0 * z / (1.0 - z * z) ** 2
            da = -2.0 * (1.0 + 3.0 * z * z) / (1.0 - z * z) ** 3
            out = bump(x) * (a * a + da) / L**2
        return np.where(np.abs(z) < 1, np.nan_to_num(out), 0.0)

    return TestFunction(
        lambda x: np.asarray(x) ** 2 * bump(x),
        lambda x: 2 * np.asarray(x) * bump(x) + np.asarray(x) ** 2 * db(x),
        lambda x: 2 * bump(x) + 4 * np.asarray(x) * db(x) + np.asarray(x) ** 2 * d2b(x),
    )


def _drift_pairing(U, p, dphi):
    """1/2 * 1/M^2 sum_{k != l} w'(U_k - U_l) (phi'(U_k) - phi'(U_l))."""
    M = U.size
    if p.kind is Kind.ZERO or M < 2:
        return 0.0
    d = U[:, None] - U[None, :]
    np.fill_diagonal(d, 1.0)
    if not getattr(p, "translation_invariant", True):
        xi = np.broadcast_to(U[:, None], (M, M))
        f = p.pair_grad_x(xi, xi + 0.0 - d)
    elif np.any(d == 0):
        f = _order_sign(M) * p.dw(np.abs(d))
    else:
        f = p.odd_dw(d)
    np.fill_diagonal(f, 0.0)
    dp = dphi(U)
    return 0.5 * float(np.sum(f * (dp[:, None] - dp[None, :]))) / (M * M)


def weak_mkv_residual(flow: JKOFlow, tests: Sequence[TestFunction]):
    """Weak-form McKean-Vlasov residual per test function and step.

    residual_n = (int phi dmu_{n+1} - int phi dmu_n)/tau
                 - [ 1/beta int phi'' - 1/2 iint w'(x-y)(phi'(x)-phi'(y)) - int V' phi' ]
    with the bracket evaluated at ``mu_{n+1}``. Returns an array of shape
    (len(tests), steps - 1).
    """
    p, beta, tau = flow.potential, flow.beta, flow.tau
    out = np.zeros((len(tests), len(flow.steps) - 1))
    for i, tf in enumerate(tests):
        prev = float(np.mean(tf.phi(flow.steps[0][1].U)))
        for n in range(1, len(flow.steps)):
            U = flow.steps[n][1].U
            cur = float(np.mean(tf.phi(U)))
            bracket = -_drift_pairing(U, p, tf.dphi) - float(np.mean(p.external.grad(U) * tf.dphi(U)))
            if math.isfinite(beta):
                bracket += float(np.mean(tf.d2phi(U))) / beta
            out[i, n - 1] = (cur - prev) / tau - bracket
            prev = cur
    return out


def convexity_defect(U0, U1, p, beta, s, lam=None):
    """``F(U_s) - (1-s)F(U0) - sF(U1) + lam/2 s(1-s) W2^2`` along linear interpolation."""
    lam = p.functional_lambda if lam is None else lam
    U0, U1 = _as_array(U0), _as_array(U1)
    Us = (1.0 - s) * U0 + s * U1
    f0 = free_energy(U0, p, beta).total
    f1 = free_energy(U1, p, beta).total
    fs = free_energy(Us, p, beta).total
    w2sq = float(np.mean((U1 - U0) ** 2))
    return fs - (1.0 - s) * f0 - s * f1 + 0.5 * lam * s * (1.0 - s) * w2sq
