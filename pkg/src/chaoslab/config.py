"""Typed INI experiment configuration: schema, validation, and re-emission.

Every key has a type and a default; unknown sections or keys are errors.
:func:`emit_config` writes the effective configuration (defaults filled)
so that ``parse_config_text(emit_config(cfg)) == cfg``.
"""
from __future__ import annotations

import configparser
import difflib
import math
from dataclasses import dataclass, replace
from pathlib import Path

COMMANDS = ("simulate", "jko", "oracle", "compare", "sweep", "validate")
POTENTIAL_KINDS = ("zero", "logarithmic", "repulsive_power", "attractive_power", "morse",
                   "tabulated")
EXTERNAL_KINDS = ("zero", "quadratic", "polynomial")
INITIAL_FAMILIES = ("normal", "uniform", "dirac", "atoms", "quantiles")
REFERENCE_KINDS = ("jko", "heat", "ou", "burgers", "dyson")
SCHEDULES = ("constant", "sqrtN")


class ConfigError(ValueError):
    """All violations found in a configuration."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


# --------------------------------------------------------------------------
# schema: section -> key -> (type tag, default, choices)


def _f(default, choices=None):
    return ("float", default, choices)


def _i(default):
    return ("int", default, None)


def _s(default, choices=None):
    return ("str", default, choices)


def _of(default=None):
    return ("optfloat", default, None)


def _fl(default=()):
    return ("floats", tuple(default), None)


def _il(default=()):
    return ("ints", tuple(default), None)


SCHEMA = {
    "run": {
        "command": _s("simulate", COMMANDS),
        "output_dir": _s("out"),
        "seed": _i(0),
        "workers": _i(1),
        "beta": _f(math.inf),
        "beta_schedule": _s("constant", SCHEDULES),
        "T": _f(1.0),
        "times": _fl(),
    },
    "potential": {
        "kind": _s("zero", POTENTIAL_KINDS),
        "s": _f(0.0),
        "alpha": _f(0.0),
        "C_R": _f(2.0),
        "l_R": _f(1.0),
        "C_A": _f(1.0),
        "l_A": _f(2.0),
        "lambda": _of(),
        "table": _s(""),
    },
    "external": {
        "kind": _s("zero", EXTERNAL_KINDS),
        "c": _f(1.0),
        "coeffs": _fl(),
    },
    "initial": {
        "family": _s("normal", INITIAL_FAMILIES),
        "mean": _f(0.0),
        "std": _f(1.0),
        "low": _f(0.0),
        "high": _f(1.0),
        "at": _f(0.0),
        "points": _fl(),
        "weights": _fl(),
        "path": _s(""),
    },
    "particles": {
        "N": _i(64),
        "N_grid": _il(),
        "seeds": _i(1),
        "dim": _i(1),
        "dynamics": _s("auto", ("auto", "deterministic", "stochastic", "sticky")),
        "scheme": _s("rk4", ("rk4", "euler")),
        "dt": _of(),
        "sampler": _s("iid", ("iid", "quantile")),
        "policy": _s("split", ("split", "adaptive", "explicit")),
        "regularize": _s("none", ("none", "inverse_N")),
        "R": _f(1e3),
    },
    "reference": {
        "kind": _s("jko", REFERENCE_KINDS),
        "tau": _f(1e-3),
        "M": _i(512),
    },
}


def _section_class(name, spec):
    from dataclasses import make_dataclass

    attrs = [(key.replace("lambda", "lam"), object, default) for key, (_, default, _) in spec.items()]
    return make_dataclass(name.capitalize() + "Section", attrs, frozen=True)


SECTIONS = {name: _section_class(name, spec) for name, spec in SCHEMA.items()}
RunSection = SECTIONS["run"]
PotentialSection = SECTIONS["potential"]
ExternalSection = SECTIONS["external"]
InitialSection = SECTIONS["initial"]
ParticlesSection = SECTIONS["particles"]
ReferenceSection = SECTIONS["reference"]


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection = RunSection()
    potential: PotentialSection = PotentialSection()
    external: ExternalSection = ExternalSection()
    initial: InitialSection = InitialSection()
    particles: ParticlesSection = ParticlesSection()
    reference: ReferenceSection = ReferenceSection()
    base_dir: str = "."

    # derived objects -------------------------------------------------------

    @property
    def output_times(self):
        return tuple(self.run.times) if self.run.times else (self.run.T,)

    @property
    def N_grid(self):
        return tuple(self.particles.N_grid) if self.particles.N_grid else (self.particles.N,)

    def resolve_path(self, p):
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def beta_for_N(self, N):
        return math.sqrt(N) if self.run.beta_schedule == "sqrtN" else self.run.beta

    @property
    def beta_limit(self):
        return math.inf if self.run.beta_schedule == "sqrtN" else self.run.beta

    def external_potential(self):
        from .potentials import ExternalPotential

        e = self.external
        if e.kind == "zero":
            return ExternalPotential.zero()
        if e.kind == "quadratic":
            return ExternalPotential.quadratic(e.c)
        return ExternalPotential.polynomial(e.coeffs)

    def potential_spec(self):
        from .potentials import PotentialSpec

        p, ext = self.potential, self.external_potential()
        if p.kind == "zero":
            return PotentialSpec.zero(ext)
        if p.kind == "logarithmic":
            return PotentialSpec.logarithmic(ext)
        if p.kind == "repulsive_power":
            return PotentialSpec.repulsive_power(p.s, ext)
        if p.kind == "attractive_power":
            return PotentialSpec.attractive_power(p.alpha, ext)
        if p.kind == "morse":
            return PotentialSpec.morse(p.C_R, p.l_R, p.C_A, p.l_A, lam=p.lam, external=ext)
        return PotentialSpec.from_csv(self.resolve_path(p.table), lam=p.lam, external=ext)

    def initial_measure(self):
        from .initial import InitialMeasure

        i = self.initial
        if i.family == "normal":
            return InitialMeasure.normal(i.mean, i.std)
        if i.family == "uniform":
            return InitialMeasure.uniform(i.low, i.high)
        if i.family == "dirac":
            return InitialMeasure.dirac(i.at)
        if i.family == "atoms":
            return InitialMeasure.from_atoms(i.points, i.weights or None)
        return InitialMeasure.from_quantile_csv(self.resolve_path(i.path))

    def simulation_config(self, N):
        from .particles import SimulationConfig

        pr = self.particles
        return SimulationConfig(
            potential=self.potential_spec(), N=N, T=self.run.T,
            initial=self.initial_measure(), dim=pr.dim, beta_N=self.beta_for_N(N),
            dynamics=None if pr.dynamics == "auto" else pr.dynamics, scheme=pr.scheme,
            dt=pr.dt, output_times=self.output_times, seed=self.run.seed,
            sampler=pr.sampler, policy=pr.policy)


# --------------------------------------------------------------------------
# parsing


def _convert(tag, raw):
    raw = raw.strip()
    if tag == "str":
        return raw
    if tag == "int":
        return int(raw)
    if tag == "float":
        return float(raw)
    if tag == "optfloat":
        return None if raw in ("", "none", "auto") else float(raw)
    items = [v for v in raw.replace(",", " ").split() if v]
    if tag == "floats":
        return tuple(float(v) for v in items)
    return tuple(int(v) for v in items)


def _nearest(word, candidates):
    hit = difflib.get_close_matches(word, candidates, n=1, cutoff=0.5)
    return f" (did you mean {hit[0]!r}?)" if hit else ""


def parse_config_text(text, base_dir="."):
    """Parse INI text into a validated :class:`ExperimentConfig`; raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    cp.optionxform = str
    errors = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    values = {name: {} for name in SCHEMA}
    for section in cp.sections():
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]{_nearest(section, list(SCHEMA))}")
            continue
        spec = SCHEMA[section]
        for key, raw in cp.items(section):
            if key not in spec:
                errors.append(f"unknown key {key!r} in [{section}]{_nearest(key, list(spec))}")
                continue
            tag, _, choices = spec[key]
            try:
                val = _convert(tag, raw)
            except ValueError:
                errors.append(f"[{section}] {key}: cannot read {raw!r} as {tag}")
                continue
            if choices is not None and val not in choices:
                errors.append(f"[{section}] {key}: {val!r} not one of {choices}")
                continue
            values[section][key.replace("lambda", "lam")] = val
    sections = {name: SECTIONS[name](**values[name]) for name in SCHEMA}
    cfg = ExperimentConfig(**sections, base_dir=str(base_dir))
    errors.extend(validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return parse_config_text(text, base_dir=path.parent)


def validate(cfg: ExperimentConfig):
    """Every violated constraint, as a list of messages."""
    err = []
    r, pt, pa, ref = cfg.run, cfg.potential, cfg.particles, cfg.reference
    if r.workers < 1:
        err.append("[run] workers must be >= 1")
    if not r.beta > 0:
        err.append("[run] beta must be positive (inf allowed)")
    if not r.T > 0:
        err.append("[run] T must be positive")
    if any(t < 0 or t > r.T for t in r.times):
        err.append("[run] times must lie in [0, T]")
    if pa.N < 1 or any(n < 1 for n in pa.N_grid):
        err.append("[particles] N must be >= 1")
    if pa.seeds < 1:
        err.append("[particles] seeds must be >= 1")
    if pa.dim < 1:
        err.append("[particles] dim must be >= 1")
    if pa.dt is not None and not pa.dt > 0:
        err.append("[particles] dt must be positive")
    if pa.dynamics == "sticky" and math.isfinite(r.beta):
        err.append("[particles] sticky dynamics need beta = inf")
    if pa.dynamics == "stochastic" and not math.isfinite(r.beta) and r.beta_schedule == "constant":
        err.append("[particles] stochastic dynamics need a finite beta")
    if ref.M < 1:
        err.append("[reference] M must be >= 1")
    if math.isfinite(cfg.beta_limit) and ref.M < 2:
        err.append("[reference] M must be >= 2 when beta is finite")
    for label, path in (("[potential] table", pt.table if pt.kind == "tabulated" else ""),
                        ("[initial] path", cfg.initial.path if cfg.initial.family == "quantiles" else "")):
        if path == "" and label.startswith("[potential]") and pt.kind == "tabulated":
            err.append(f"{label} is required for the tabulated kind")
        elif path and not cfg.resolve_path(path).exists():
            err.append(f"{label}: file {path!r} does not exist")
    if cfg.initial.family == "quantiles" and not cfg.initial.path:
        err.append("[initial] path is required for the quantiles family")
    if cfg.initial.family == "atoms" and not cfg.initial.points:
        err.append("[initial] points are required for the atoms family")
    if any("does not exist" in e or "required" in e for e in err):
        return err
    try:
        p = cfg.potential_spec()
    except Exception as exc:
        err.append(f"[potential] {exc}")
        return err
    try:
        cfg.initial_measure()
    except Exception as exc:
        err.append(f"[initial] {exc}")
    if not ref.tau > 0:
        err.append("[reference] tau must be positive")
    else:
        lam = p.functional_lambda
        if lam < 0 and ref.tau >= 1.0 / (2.0 * abs(lam)):
            err.append(f"[reference] tau={ref.tau:g} violates tau < 1/(2|lambda|) = "
                       f"{1.0 / (2.0 * abs(lam)):g} (lambda={lam:g})")
        if ref.tau > r.T:
            err.append("[reference] tau must not exceed T")
    return err


# --------------------------------------------------------------------------
# emission


def _format(tag, val):
    if tag == "optfloat":
        return "" if val is None else repr(float(val))
    if tag == "float":
        return repr(float(val))
    if tag in ("floats", "ints"):
        return ", ".join(repr(v) for v in val)
    return str(val)


def emit_config(cfg: ExperimentConfig):
    """INI text of the effective configuration (all keys, defaults included)."""
    lines = []
    for name, spec in SCHEMA.items():
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for key, (tag, _, _) in spec.items():
            lines.append(f"{key} = {_format(tag, getattr(section, key.replace('lambda', 'lam')))}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg: ExperimentConfig, command=None, output_dir=None, seed=None, workers=None):
    run = cfg.run
    changes = {k: v for k, v in (("command", command), ("output_dir", output_dir),
                                 ("seed", seed), ("workers", workers)) if v is not None}
    return replace(cfg, run=replace(run, **changes)) if changes else cfg
