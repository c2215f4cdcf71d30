"""Propagation-of-chaos sweeps, contractivity and dissipation certificates."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .gradient_flow import JKOFlow, jko_flow
from .particles import SimulationConfig, Trajectory, simulate
from .potentials import regularize
from .transport import (EmpiricalMeasure, QuantileMeasure, empirical, w2_distance,
                        w2_quantile, wp_discrete_1d)

REFERENCE_FRACTION = 0.2


# --------------------------------------------------------------------------
# chaos sweeps


@dataclass
class ChaosReport:
    """Distances W2(empirical_N(t), reference(t)) over an (N, seed, t) grid."""

    N_grid: tuple
    seeds: int
    times: tuple
    distances: Dict[tuple, np.ndarray] = field(default_factory=dict)
    failures: List[tuple] = field(default_factory=list)
    exact: bool = True
    reference_error: Optional[float] = None

    def matrix(self, N):
        rows = [self.distances[(N, s)] for s in range(self.seeds) if (N, s) in self.distances]
        return np.array(rows) if rows else np.full((0, len(self.times)), np.nan)

    def mean(self, N):
        m = self.matrix(N)
        # cells that all failed give NaN without a warning
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(m, axis=0)

    def stderr(self, N):
        m = self.matrix(N)
        n = np.sum(np.isfinite(m), axis=0)
        return np.nanstd(m, axis=0, ddof=1) / np.sqrt(np.maximum(n, 1))

    def means(self):
        return np.array([self.mean(N) for N in self.N_grid])

    def stderrs(self):
        return np.array([self.stderr(N) for N in self.N_grid])

    def slopes(self):
        """Least-squares log-log slope of mean distance vs N over the top half of the grid."""
        k = max(2, math.ceil(len(self.N_grid) / 2))
        Ns = np.array(self.N_grid[-k:], dtype=float)
        means = self.means()[-k:]
        return np.array([np.polyfit(np.log(Ns), np.log(means[:, j]), 1)[0]
                         for j in range(len(self.times))])

    @property
    def reference_limited(self):
        if self.reference_error is None:
            return False
        return self.reference_error >= REFERENCE_FRACTION * float(np.nanmin(self.means()))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["N", "seed", "time", "w2_distance"])
            for (N, s) in sorted(self.distances):
                for t, d in zip(self.times, self.distances[(N, s)]):
                    out.writerow([N, s, repr(float(t)), repr(float(d))])

    def summary_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["N", "time", "mean", "stderr"])
            for N in self.N_grid:
                for t, m, se in zip(self.times, self.mean(N), self.stderr(N)):
                    out.writerow([N, repr(float(t)), repr(float(m)), repr(float(se))])


def reference_at(reference, t):
    """Evaluate a reference (JKOFlow, oracle or callable) at time ``t``."""
    if isinstance(reference, JKOFlow):
        return reference.at(t)
    if isinstance(reference, (QuantileMeasure, EmpiricalMeasure)):
        return reference
    return reference(t)


def distance_to_reference(state, ref):
    """W2 between a particle state's empirical measure and a reference; ``(value, exact)``."""
    emp = empirical(state)
    if emp.dim == 1:
        return wp_discrete_1d(emp, ref, 2.0), True
    return w2_distance(emp, ref)


def cell_seed(master_seed, N, index):
    """Per-trajectory seed stream derived from (master seed, N, seed index)."""
    return np.random.SeedSequence([int(master_seed), int(N), int(index)])


def _run_cell(job):
    cfg, N, index, master_seed, times, reference = job
    rng = np.random.default_rng(cell_seed(master_seed, N, index))
    try:
        traj = simulate(cfg, rng=rng)
        out, exact = [], True
        for t in times:
            d, ex = distance_to_reference(traj.at(t), reference_at(reference, t))
            out.append(d)
            exact = exact and ex
        return (N, index), np.array(out), exact, None
    except Exception as exc:  # per-cell failures are recorded, not fatal
        return (N, index), np.full(len(times), np.nan), True, f"{type(exc).__name__}: {exc}"


def _is_setting1(cfg):
    return cfg.sampler == "quantile" and not math.isfinite(cfg.beta_N)


def chaos_sweep(base: SimulationConfig, N_grid: Sequence[int], n_seeds: int,
                times: Sequence[float], reference, master_seed=0,
                potential_for_N: Optional[Callable] = None,
                beta_for_N: Optional[Callable] = None,
                reference_error=None, map_fn=map) -> ChaosReport:
    """Simulate every (N, seed) cell and measure its distance to ``reference``.

    ``potential_for_N`` and ``beta_for_N`` let the kernel or inverse
    temperature depend on N. ``map_fn`` may be a process-pool map; results
    are merged by key so the report is independent of scheduling.
    Deterministic quantile-placement runs ignore the seed and are computed
    once per N.
    """
    times = tuple(float(t) for t in times)
    report = ChaosReport(tuple(int(n) for n in N_grid), int(n_seeds), times,
                         reference_error=reference_error)
    jobs = []
    for N in report.N_grid:
        cfg = replace(base, N=N, T=max(times), output_times=times)
        if potential_for_N is not None:
            cfg = replace(cfg, potential=potential_for_N(N))
        if beta_for_N is not None:
            cfg = replace(cfg, beta_N=float(beta_for_N(N)))
        seeds = range(1) if _is_setting1(cfg) else range(report.seeds)
        for s in seeds:
            jobs.append((replace(cfg, seed=s), N, s, master_seed, times, reference))
    for key, d, exact, err in map_fn(_run_cell, jobs):
        report.distances[key] = d
        report.exact = report.exact and exact
        if err is not None:
            report.failures.append((key[0], key[1], err))
    for N in report.N_grid:
        if (N, 0) in report.distances and (N, 1) not in report.distances:
            for s in range(1, report.seeds):
                report.distances[(N, s)] = report.distances[(N, 0)].copy()
    return report


def reference_refinement_error(mu0, p, beta, tau, M, times):
    """max_t W2 between JKO flows at (tau, M) and (tau/2, 2M)."""
    from .transport import quantile_from_density

    T = max(times)
    coarse = jko_flow(quantile_from_density(mu0, M), tau, T, p, beta)
    fine = jko_flow(quantile_from_density(mu0, 2 * M), tau / 2, T, p, beta)
    return max(wp_discrete_1d(coarse.at(t), fine.at(t)) for t in times)


# --------------------------------------------------------------------------
# regularization commutation


@dataclass
class CommutationReport:
    exact: ChaosReport
    regularized: ChaosReport

    def sup_difference(self):
        """Per N: sup over t of |mean_exact - mean_regularized|."""
        return np.max(np.abs(self.exact.means() - self.regularized.means()), axis=1)

    def pooled_stderr(self):
        return np.sqrt(self.exact.stderrs() ** 2 + self.regularized.stderrs() ** 2)

    def agrees_at_largest(self, k=2.0):
        """At the largest N every time point differs by at most k pooled standard errors."""
        diff = np.abs(self.exact.means()[-1] - self.regularized.means()[-1])
        return bool(np.all(diff <= k * self.pooled_stderr()[-1]))

    def gap_persists(self, k=2.0):
        """Negative-control flag: the arms still differ by more than k pooled errors at the largest N."""
        return not self.agrees_at_largest(k)

    def decays(self):
        d = self.sup_difference()
        return bool(np.all(np.diff(d) <= 0))


def regularization_commutation(base: SimulationConfig, N_grid, n_seeds, times, reference,
                               epsilon_for_N: Callable = lambda N: 1.0 / N, R=1e3,
                               master_seed=0, map_fn=map) -> CommutationReport:
    """Run the exact-drift arm and the w_R arm with epsilon_N from ``epsilon_for_N``."""
    p = base.potential
    exact = chaos_sweep(base, N_grid, n_seeds, times, reference, master_seed, map_fn=map_fn)
    reg = chaos_sweep(base, N_grid, n_seeds, times, reference, master_seed,
                      potential_for_N=lambda N: regularize(p, epsilon_for_N(N), R),
                      map_fn=map_fn)
    return CommutationReport(exact, reg)


# --------------------------------------------------------------------------
# flows: contractivity and dissipation


INNER_SLACK = 1e-6


def tol_contract(tau, lam, t):
    """Relative excess of the discrete bound (1 + lam tau)^(-t/tau) over exp(-lam t).

    Minimizing movements of a lam-convex functional contract by the factor
    1/(1 + lam tau) per step; INNER_SLACK absorbs the inner solver tolerance.
    """
    return math.expm1(lam * t - (t / tau) * math.log1p(lam * tau)) + INNER_SLACK


def contraction_holds(results, tau, lam):
    """True when every ``(t, ratio, bound)`` satisfies ratio <= bound (1 + tol_contract)."""
    return all(r <= b * (1.0 + tol_contract(tau, lam, t)) for t, r, b in results)


def contractivity_test(mu0, nu0, p, beta, tau, times):
    """List of ``(t, ratio, exp(-lambda t))`` for two JKO flows sharing a setup."""
    mu0 = mu0 if isinstance(mu0, QuantileMeasure) else QuantileMeasure(mu0)
    nu0 = nu0 if isinstance(nu0, QuantileMeasure) else QuantileMeasure(nu0)
    d0 = w2_quantile(mu0, nu0)
    if d0 == 0:
        raise ValueError("initial measures coincide; the ratio is undefined")
    lam = p.functional_lambda
    T = max(times)
    fa = jko_flow(mu0, tau, T, p, beta)
    fb = jko_flow(nu0, tau, T, p, beta)
    return [(float(t), w2_quantile(fa.at(t), fb.at(t)) / d0, math.exp(-lam * t)) for t in times]


@dataclass(frozen=True)
class DissipationCertificate:
    passed: bool
    worst_violation: float
    worst_index: int
    worst_time: float


def dissipation_certificate(obj, rtol=None):
    """Check monotone decrease of E^(N)/N (trajectories) or F (JKO flows).

    A step fails when the value rises by more than ``rtol * (1 + |E|)``;
    the defaults are 1e-8 for particle trajectories and 1e-10 for flows.
    """
    if isinstance(obj, JKOFlow):
        times, vals = obj.times, obj.totals
        rtol = 1e-10 if rtol is None else rtol
    elif isinstance(obj, Trajectory):
        if not obj.energy_trace:
            raise ValueError("trajectory has no energy trace")
        times = np.array([t for t, _ in obj.energy_trace])
        vals = np.array([e for _, e in obj.energy_trace])
        rtol = 1e-8 if rtol is None else rtol
    else:
        raise TypeError("expected a Trajectory or a JKOFlow")
    if vals.size < 2:
        return DissipationCertificate(True, 0.0, -1, float("nan"))
    rise = np.diff(vals) - rtol * (1.0 + np.abs(vals[:-1]))
    rise = np.where(np.isnan(rise), np.inf, rise)
    k = int(np.argmax(rise))
    worst = float(rise[k])
    return DissipationCertificate(worst <= 0, max(worst, 0.0), k + 1, float(times[k + 1]))


# --------------------------------------------------------------------------
# ensembles in D >= 2


def ensemble_positions(cfg: SimulationConfig, n_seeds, master_seed, t):
    """Positions at time ``t`` for ``n_seeds`` trajectories of one ensemble."""
    out = []
    for s in range(n_seeds):
        rng = np.random.default_rng(cell_seed(master_seed, cfg.N, s))
        traj = simulate(replace(cfg, seed=s, T=t, output_times=[t]), rng=rng)
        out.append(traj.at(t).positions)
    return out


def ensemble_consistency(cfg: SimulationConfig, n_seeds, t, master_a=0, master_b=1):
    """Return ``(cross, spread)``.

    ``cross`` is the assignment W2 between the pooled clouds of two
    independent ensembles; ``spread`` is the mean assignment W2 between
    seed pairs within each ensemble.
    """
    from .transport import w2_assignment

    a = ensemble_positions(cfg, n_seeds, master_a, t)
    b = ensemble_positions(cfg, n_seeds, master_b, t)
    cross = w2_assignment(EmpiricalMeasure.uniform(np.vstack(a)),
                          EmpiricalMeasure.uniform(np.vstack(b)))
    within = []
    for ens in (a, b):
        for i in range(n_seeds):
            for j in range(i + 1, n_seeds):
                within.append(w2_assignment(EmpiricalMeasure.uniform(ens[i]),
                                            EmpiricalMeasure.uniform(ens[j])))
    return cross, float(np.mean(within))


def diameter(x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return 0.0
    d = x[:, None, :] - x[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", d, d))))


# --------------------------------------------------------------------------
# plots


def _svg_setup():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "chaoslab"
    return plt


def plot_chaos_report(report: ChaosReport, path):
    """Mean distance vs N (log-log), one line per output time."""
    plt = _svg_setup()
    fig, ax = plt.subplots(figsize=(5, 4))
    means, ses = report.means(), report.stderrs()
    for j, t in enumerate(report.times):
        ax.errorbar(report.N_grid, means[:, j], yerr=ses[:, j], marker="o", label=f"t={t:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N")
    ax.set_ylabel("mean W2 to reference")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_flow_summary(flow: JKOFlow, path):
    plt = _svg_setup()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(flow.times, flow.totals)
    ax.set_xlabel("time")
    ax.set_ylabel("free energy")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
