"""Experiment runner: ``chaoslab COMMAND --config FILE [--out DIR] [--seed N] [--workers K]``.

Every run writes its effective configuration, a ``contracts.csv`` with one
row per checked contract, and ``manifest.tsv`` listing each artifact as
``relative_path<TAB>sha256<TAB>bytes``. The exit status is 0 only when
every contract passed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import COMMANDS, ConfigError, ExperimentConfig, emit_config, parse_config, with_overrides
from .diagnostics import (cell_seed, chaos_sweep, dissipation_certificate, distance_to_reference,
                          plot_chaos_report, plot_flow_summary, regularization_commutation)
from .gradient_flow import jko_flow
from .oracles import burgers_oracle, dyson_oracle, gaussian_oracle
from .particles import simulate
from .transport import QuantileMeasure

log = logging.getLogger("chaoslab")


class Artifacts:
    """Writes files below one output directory and records them for the manifest."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.contracts = []

    def path(self, name):
        p = (self.root / name).resolve()
        if self.root not in p.parents and p != self.root:
            raise ValueError(f"artifact {name!r} escapes the output directory")
        p.parent.mkdir(parents=True, exist_ok=True)
        if p not in self.files:
            self.files.append(p)
        return p

    def contract(self, name, value, passed):
        self.contracts.append((name, float(value), bool(passed)))

    def plot(self, fn, *args):
        # plots never fail a run
        target = self.path(args[-1])
        try:
            fn(*args[:-1], target)
        except Exception as exc:  # pragma: no cover - depends on the plotting backend
            log.warning("plot %s failed: %s", target.name, exc)
            self.files.remove(target)

    def finish(self):
        with open(self.path("contracts.csv"), "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["contract", "value", "passed"])
            for name, value, ok in self.contracts:
                out.writerow([name, repr(value), int(ok)])
        manifest = self.root / "manifest.tsv"
        rows = []
        for p in sorted(self.files, key=lambda q: q.relative_to(self.root).as_posix()):
            if not p.exists():
                continue
            data = p.read_bytes()
            rows.append((p.relative_to(self.root).as_posix(), hashlib.sha256(data).hexdigest(),
                         len(data)))
        manifest.write_text("".join(f"{r}\t{h}\t{n}\n" for r, h, n in rows))
        return rows

    @property
    def passed(self):
        return all(ok for _, _, ok in self.contracts)


class FixedReference:
    """Reference measures tabulated at the output times (cheap to send to workers)."""

    def __init__(self, table):
        self.table = dict(table)

    def __call__(self, t):
        key = min(self.table, key=lambda s: abs(s - t))
        if abs(key - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"reference not tabulated at t={t}")
        return self.table[key]


@contextmanager
def _pool(workers):
    if workers <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        yield lambda fn, jobs: ex.map(fn, jobs, chunksize=1)


# --------------------------------------------------------------------------
# references


def build_reference(cfg: ExperimentConfig, times):
    """Return ``(FixedReference, residuals, flow_or_None)`` for the configured reference kind."""
    ref, beta = cfg.reference, cfg.beta_limit
    mu0 = cfg.initial_measure()
    times = sorted(set(float(t) for t in times) | {0.0})
    if ref.kind == "jko":
        flow = jko_flow(mu0.quantile_measure(ref.M), ref.tau, max(times), cfg.potential_spec(), beta)
        return FixedReference({t: flow.at(t) for t in times}), {}, flow
    if ref.kind in ("heat", "ou"):
        if mu0.family != "normal":
            raise ValueError(f"the {ref.kind} oracle needs a normal initial law")
        c = 0.0 if ref.kind == "heat" else cfg.external.c
        sol = gaussian_oracle(mu0.params["mean"], mu0.params["std"], c, beta, ref.M)
    elif ref.kind == "burgers":
        sol = burgers_oracle(mu0, beta, ref.M)
    else:
        sol = dyson_oracle(ref.M)
    return FixedReference({t: sol(t) for t in times}), dict(sol.residuals), None


def _write_measures(path, table):
    """Quantile grids as (time, quantile_index, U); atomic measures as (time, x_1.., weight)."""
    items = sorted(table.items())
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        if all(isinstance(m, QuantileMeasure) for _, m in items):
            out.writerow(["time", "quantile_index", "U"])
            for t, m in items:
                for k, u in enumerate(m.U):
                    out.writerow([repr(float(t)), k, repr(float(u))])
        else:
            dim = items[0][1].dim
            out.writerow(["time"] + [f"x_{d + 1}" for d in range(dim)] + ["weight"])
            for t, m in items:
                m = m.as_empirical() if isinstance(m, QuantileMeasure) else m
                for x, w in zip(m.positions, m.weights):
                    out.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(w))])


def _residual_contracts(art, residuals):
    for name, (value, tol) in residuals.items():
        art.contract(f"oracle_{name}", value, value <= tol)


# --------------------------------------------------------------------------
# commands


def _cmd_validate(cfg, art):
    art.contract("config_valid", 0.0, True)


def _simulate_runs(cfg, art, tag="trajectory"):
    trajs = {}
    for N in cfg.N_grid:
        sim = cfg.simulation_config(N)
        for s in range(cfg.particles.seeds):
            rng = np.random.default_rng(cell_seed(cfg.run.seed, N, s))
            traj = simulate(replace(sim, seed=s), rng=rng)
            trajs[(N, s)] = traj
            traj.to_csv(art.path(f"{tag}_N{N}_seed{s}.csv"))
            traj.energy_to_csv(art.path(f"energy_N{N}_seed{s}.csv"))
            if sim.resolved_dynamics() == "sticky":
                traj.merge_events_to_csv(art.path(f"merges_N{N}_seed{s}.csv"))
            if sim.resolved_dynamics() == "deterministic" and N >= 2:
                cert = dissipation_certificate(traj)
                art.contract(f"dissipation_N{N}_seed{s}", cert.worst_violation, cert.passed)
    return trajs


def _cmd_simulate(cfg, art):
    _simulate_runs(cfg, art)


def _cmd_jko(cfg, art):
    ref = cfg.reference
    mu0 = cfg.initial_measure().quantile_measure(ref.M)
    flow = jko_flow(mu0, ref.tau, cfg.run.T, cfg.potential_spec(), cfg.beta_limit)
    flow.to_csv(art.path("flow.csv"))
    flow.summary_to_csv(art.path("flow_summary.csv"))
    art.plot(plot_flow_summary, flow, "flow_summary.svg")
    cert = dissipation_certificate(flow)
    art.contract("free_energy_monotone", cert.worst_violation, cert.passed)
    worst = max((st.grad_norm / st.tol for st in flow.stats), default=0.0)
    art.contract("inner_solver_converged", worst, worst <= 1.0)


def _cmd_oracle(cfg, art):
    table, residuals, _ = build_reference(cfg, cfg.output_times)
    _write_measures(art.path("oracle.csv"), table.table)
    _residual_contracts(art, residuals)


def _cmd_compare(cfg, art):
    table, residuals, _ = build_reference(cfg, cfg.output_times)
    _residual_contracts(art, residuals)
    _write_measures(art.path("reference.csv"), table.table)
    trajs = _simulate_runs(cfg, art)
    with open(art.path("distances.csv"), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["N", "seed", "time", "w2_distance"])
        for (N, s), traj in sorted(trajs.items()):
            for t in cfg.output_times:
                d, _ = distance_to_reference(traj.at(t), table(t))
                out.writerow([N, s, repr(float(t)), repr(float(d))])


def _cmd_sweep(cfg, art):
    times = cfg.output_times
    table, residuals, _ = build_reference(cfg, times)
    _residual_contracts(art, residuals)
    _write_measures(art.path("reference.csv"), table.table)
    base = cfg.simulation_config(cfg.N_grid[0])
    beta_for_N = cfg.beta_for_N if cfg.run.beta_schedule == "sqrtN" else None
    with _pool(cfg.run.workers) as map_fn:
        if cfg.particles.regularize == "inverse_N":
            rep = regularization_commutation(base, cfg.N_grid, cfg.particles.seeds, times, table,
                                             R=cfg.particles.R, master_seed=cfg.run.seed,
                                             map_fn=map_fn)
            reports = {"chaos": rep.exact, "chaos_regularized": rep.regularized}
            with open(art.path("commutation.csv"), "w", newline="") as fh:
                out = csv.writer(fh)
                out.writerow(["N", "sup_difference", "pooled_stderr_max"])
                for N, d, se in zip(cfg.N_grid, rep.sup_difference(), rep.pooled_stderr().max(axis=1)):
                    out.writerow([N, repr(float(d)), repr(float(se))])
            art.contract("commutation_within_2se_at_largest_N", float(rep.sup_difference()[-1]),
                         rep.agrees_at_largest())
        else:
            reports = {"chaos": chaos_sweep(base, cfg.N_grid, cfg.particles.seeds, times, table,
                                            cfg.run.seed, beta_for_N=beta_for_N, map_fn=map_fn)}
    for name, report in reports.items():
        report.to_csv(art.path(f"{name}.csv"))
        report.summary_to_csv(art.path(f"{name}_summary.csv"))
        art.plot(plot_chaos_report, report, f"{name}.svg")
        art.contract(f"{name}_failed_cells", len(report.failures), not report.failures)
        for N, s, msg in report.failures:
            log.error("cell N=%d seed=%d failed: %s", N, s, msg)


HANDLERS = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "jko": _cmd_jko,
    "oracle": _cmd_oracle,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
}


def run(cfg: ExperimentConfig):
    """Execute ``cfg.run.command``; returns ``(exit_status, manifest_rows)``."""
    out = cfg.resolve_path(cfg.run.output_dir)
    art = Artifacts(out)
    art.path("effective_config.ini").write_text(emit_config(cfg))
    try:
        HANDLERS[cfg.run.command](cfg, art)
    except Exception as exc:
        log.error("%s failed: %s", cfg.run.command, exc)
        art.contract(f"{cfg.run.command}_completed", 1.0, False)
    rows = art.finish()
    return (0 if art.passed else 1), rows


def main(argv=None):
    ap = argparse.ArgumentParser(prog="chaoslab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI experiment file")
    ap.add_argument("--out", help="output directory (overrides [run] output_dir)")
    ap.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    ap.add_argument("--workers", type=int, help="worker processes (overrides [run] workers)")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    out = str(Path(args.out).resolve()) if args.out else None
    cfg = with_overrides(cfg, command=args.command, output_dir=out, seed=args.seed,
                         workers=args.workers)
    status, rows = run(cfg)
    for rel, _, size in rows:
        log.info("wrote %s (%d bytes)", rel, size)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
