"""N-particle mean-field dynamics: deterministic, stochastic and sticky.

The N-particle energy is

    E(x) = 1/(N-1) * 1/2 * sum_{i != j} W(x_i, x_j) + sum_i V(x_i)

and the dynamics are dx = -grad E dt + sqrt(2/beta_N) dB. Sticky runs use
mass weights instead of the 1/(N-1) normalization and merge particles on
collision.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .initial import InitialMeasure
from .potentials import Kind, SingularityError

SCHEMES = ("euler", "rk4")
DYNAMICS = ("deterministic", "stochastic", "sticky")
MAX_HALVINGS = 40
MAX_SUBSTEPS = 200_000
DRIFT_NOISE_RATIO = 0.5
POLICIES = ("split", "adaptive", "explicit")


class StepSizeError(RuntimeError):
    """Ordering could not be kept even after the maximal number of halvings."""


class DivergenceError(RuntimeError):
    def __init__(self, message, max_step=float("nan")):
        super().__init__(message)
        self.max_step = max_step


@dataclass
class ParticleState:
    positions: np.ndarray
    time: float = 0.0
    beta_N: float = math.inf
    seed: Optional[int] = None
    masses: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if not np.all(np.isfinite(x)):
            raise ValueError("particle coordinates must be finite")
        if not self.beta_N > 0:
            raise ValueError("beta_N must be positive")
        self.positions = x
        if self.ids is None:
            self.ids = np.arange(x.shape[0])
        if self.masses is not None:
            self.masses = np.asarray(self.masses, dtype=float)

    @property
    def N(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def copy(self, **changes):
        fields = dict(positions=self.positions.copy(), time=self.time, beta_N=self.beta_N,
                      seed=self.seed,
                      masses=None if self.masses is None else self.masses.copy(),
                      ids=self.ids.copy())
        fields.update(changes)
        return ParticleState(**fields)


@dataclass(frozen=True)
class MergeEvent:
    time: float
    survivor: int
    absorbed: tuple
    masses: tuple

    @property
    def merged_mass(self):
        return float(sum(self.masses))


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)
    energy_trace: list = field(default_factory=list)
    merge_events: list = field(default_factory=list)
    substeps: int = 0

    @property
    def times(self):
        return [t for t, _ in self.snapshots]

    def at(self, t):
        for s, state in self.snapshots:
            if abs(s - t) <= 1e-12 * max(1.0, abs(t)):
                return state
        raise KeyError(f"no snapshot at t={t}")

    def final(self):
        return self.snapshots[-1][1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            dim = self.snapshots[0][1].dim
            out.writerow(["time", "particle_index"] + [f"x_{d + 1}" for d in range(dim)] + ["mass"])
            for t, st in self.snapshots:
                m = st.masses if st.masses is not None else np.full(st.N, 1.0 / st.N)
                for i in range(st.N):
                    out.writerow([repr(float(t)), int(st.ids[i])]
                                 + [repr(float(v)) for v in st.positions[i]] + [repr(float(m[i]))])

    def merge_events_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["time", "survivor", "absorbed", "masses"])
            for ev in self.merge_events:
                out.writerow([repr(float(ev.time)), ev.survivor,
                              ";".join(str(a) for a in ev.absorbed),
                              ";".join(repr(float(m)) for m in ev.masses)])

    def energy_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["time", "energy_per_particle"])
            for t, e in self.energy_trace:
                out.writerow([repr(float(t)), repr(float(e))])


# --------------------------------------------------------------------------
# energy and gradient


def _pair_matrix(x):
    diff = x[:, None, :] - x[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return diff, r


def _coincident_pairs(r):
    n = r.shape[0]
    iu = np.triu_indices(n, 1)
    hit = r[iu] == 0
    return list(zip(iu[0][hit].tolist(), iu[1][hit].tolist()))


def pair_energy_sum(x, p):
    """sum_{i != j} W(x_i, x_j) (each unordered pair counted twice)."""
    n = x.shape[0]
    if n < 2 or getattr(p, "kind", None) is Kind.ZERO:
        return 0.0
    iu = np.triu_indices(n, 1)
    if not p.translation_invariant:
        if x.shape[1] != 1:
            raise ValueError("spin-weighted kernels are one-dimensional")
        xi, xj = x[iu[0], 0], x[iu[1], 0]
        r = np.abs(xi - xj)
        if p.strongly_singular and np.any(r == 0):
            return math.inf
        return 2.0 * float(np.sum(p.pair_value(xi, xj)))
    _, r = _pair_matrix(x)
    ru = r[iu]
    if p.strongly_singular and np.any(ru == 0):
        return math.inf
    return 2.0 * float(np.sum(p.w(ru)))


def energy_EN(state, p):
    """N-particle energy ``E^(N)`` (``+inf`` for a coincident pair under a singular kernel)."""
    x = state.positions
    n = x.shape[0]
    if n < 2:
        raise ValueError("energy_EN needs N >= 2")
    inter = pair_energy_sum(x, p)
    if math.isinf(inter):
        return math.inf
    return inter / (2.0 * (n - 1)) + float(np.sum(p.external.value(x)))


def pair_force_sum(x, p, weights=None):
    """Row i: sum_j c_j grad_x W(x_i, x_j), grad W(0) := 0 for non-singular kinds.

    ``weights`` gives c_j (defaults to 1).
    """
    n, dim = x.shape
    if n < 2 or getattr(p, "kind", None) is Kind.ZERO:
        return np.zeros_like(x)
    if not p.translation_invariant:
        if dim != 1:
            raise ValueError("spin-weighted kernels are one-dimensional")
        xi, xj = x[:, 0][:, None], x[:, 0][None, :]
        off = ~np.eye(n, dtype=bool)
        if np.any((xi == xj) & off):
            pairs = _coincident_pairs(np.abs(xi - xj) + np.eye(n))
            raise SingularityError("coincident particles under a singular kernel", pairs=pairs)
        xj_safe = np.where(off, xj, xi + 1.0)
        g = np.where(off, p.pair_grad_x(np.broadcast_to(xi, (n, n)), xj_safe), 0.0)
        c = np.ones(n) if weights is None else weights
        return (g @ c)[:, None]
    if dim == 1:
        return _pair_force_sum_1d(x[:, 0], p, weights)[:, None]
    diff, r = _pair_matrix(x)
    off = ~np.eye(n, dtype=bool)
    hit = (r == 0) & off
    if np.any(hit) and p.repulsive_singular:
        raise SingularityError("coincident particles under a singular kernel",
                               pairs=_coincident_pairs(r + np.eye(n)))
    active = off & (r > 0)
    coef = np.zeros((n, n))
    coef[active] = p.dw(r[active]) / r[active]
    if weights is not None:
        coef = coef * weights[None, :]
    return np.einsum("ij,ijk->ik", coef, diff)


def _pair_force_sum_1d(x, p, weights=None):
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    if np.any(d == 0):
        r = np.abs(d)
        if p.repulsive_singular:
            rr = r.copy()
            np.fill_diagonal(rr, 1.0)
            raise SingularityError("coincident particles under a singular kernel",
                                   pairs=_coincident_pairs(rr))
        f = np.sign(d) * p.dw(np.where(r == 0, 1.0, r))
        f[r == 0] = 0.0
    else:
        f = p.odd_dw(d)
    np.fill_diagonal(f, 0.0)
    return f.sum(axis=1) if weights is None else f @ weights


def grad_EN(state, p):
    """Gradient of ``E^(N)``; the drift is its negative."""
    x = state.positions
    n = x.shape[0]
    g = p.external.grad(x)
    if n >= 2:
        g = g + pair_force_sum(x, p) / (n - 1)
    return g


# --------------------------------------------------------------------------
# steppers


def default_dt(p):
    lam = abs(p.functional_lambda) if hasattr(p, "functional_lambda") else 0.0
    return 1e-3 * min(1.0, 1.0 / lam) if lam > 0 else 1e-3


def _keeps_order(p, dim):
    return dim == 1 and p.strongly_singular


def _rk4(x, h, f):
    k1 = f(x)
    k2 = f(x - 0.5 * h * k1)
    k3 = f(x - 0.5 * h * k2)
    k4 = f(x - h * k3)
    return x - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def step_deterministic(state, p, dt, scheme="rk4", max_halvings=MAX_HALVINGS,
                       guard_energy=False):
    """One step of dx/dt = -grad E, halving ``dt`` when 1D ordering breaks.

    The returned state's time reflects the step actually taken. With
    ``guard_energy`` a step that raises the energy is also rejected.
    """
    if math.isfinite(state.beta_N):
        raise ValueError("step_deterministic needs beta_N = inf")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    ordered = _keeps_order(p, state.dim)
    x = state.positions

    def f(y):
        return grad_EN(ParticleState(y), p)

    e0 = energy_EN(state, p) if guard_energy and state.N >= 2 else None
    h = dt
    for _ in range(max_halvings + 1):
        try:
            with np.errstate(all="ignore"):
                new = x - h * f(x) if scheme == "euler" else _rk4(x, h, f)
        except SingularityError:
            h *= 0.5
            continue
        ok = bool(np.all(np.isfinite(new)))
        if ok and ordered:
            ok = bool(np.all(np.diff(new[:, 0]) > 0))
        if ok and e0 is not None:
            e1 = energy_EN(ParticleState(new), p)
            ok = e1 <= e0 + 1e-12 * (1 + abs(e0))
        if ok:
            return state.copy(positions=new, time=state.time + h)
        h *= 0.5
    raise StepSizeError(
        f"no admissible step after {max_halvings} halvings from dt={dt:g} at t={state.time:g}")


def _gap_flow(p, gaps, c, h):
    """Exact growth of an isolated pair's gap under repulsion c * w over time h."""
    s = p.params["s"]
    if s == 0:
        return np.sqrt(gaps * gaps + 4.0 * c * h)
    e = s + 2.0
    return (gaps**e + 2.0 * c * s * e * h) ** (1.0 / e)


def _has_gap_flow(p):
    return getattr(p, "kind", None) is Kind.REPULSIVE_POWER and p.params["s"] >= 0


def _split_step(x, p, h, beta, rng):
    """Pre-step drift with the nearest-neighbour singular part integrated exactly.

    ``x`` is sorted with shape (N, 1). Each adjacent pair's gap is advanced by
    the exact two-body flow and the growth is shared equally by the pair; all
    other drift terms (more distant pairs and V) are explicit.
    """
    n = x.shape[0]
    c = 1.0 / (n - 1)
    g = grad_EN(ParticleState(x), p)[:, 0]
    gaps = np.diff(x[:, 0])
    # nearest-neighbour part of the gradient: c * w'(gap) pulls each pair together
    nn = np.zeros(n)
    f = c * p.odd_dw(gaps)
    nn[1:] += f
    nn[:-1] -= f
    growth = _gap_flow(p, gaps, c, h) - gaps
    move = -h * (g - nn)
    move[1:] += 0.5 * growth
    move[:-1] -= 0.5 * growth
    return x + move[:, None] + math.sqrt(2.0 * h / beta) * rng.standard_normal(x.shape)


def step_stochastic(state, p, dt, rng, policy="split", kappa=DRIFT_NOISE_RATIO,
                    max_substeps=MAX_SUBSTEPS):
    """Euler-Maruyama over a time interval ``dt``.

    Policies for 1D strongly singular kernels (crossings are always resolved
    by sorting coordinates, and all drift terms use the pre-step state):

    ``split``
        the nearest-neighbour pair drift is replaced by the exact two-body
        gap flow over ``dt`` (bounded displacement near collisions);
    ``adaptive``
        the interval is cut into substeps whose drift displacement stays
        below ``kappa`` times the noise amplitude;
    ``explicit``
        plain Euler-Maruyama.
    """
    beta = state.beta_N
    if not math.isfinite(beta):
        raise ValueError("step_stochastic needs beta_N < inf")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if policy not in POLICIES:
        raise ValueError(f"unknown stochastic policy {policy!r}")
    ordered = _keeps_order(p, state.dim)
    if ordered and policy == "split" and _has_gap_flow(p) and state.N >= 2:
        x = _split_step(state.positions, p, dt, beta, rng)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("non-finite particle position")
        x.sort(axis=0)
        out = state.copy(positions=x, time=state.time + dt)
        out._substeps = 1
        return out
    ordered_adaptive = ordered and policy != "explicit"
    x = state.positions.copy()
    left = dt
    count = 0
    while left > 0:
        g = grad_EN(ParticleState(x), p)
        h = left
        if ordered_adaptive:
            bmax = float(np.max(np.abs(g)))
            if bmax > 0:
                h = min(h, 2.0 * kappa**2 / (beta * bmax**2))
            if h < left and left - h < 1e-9 * dt:
                h = left
        x = x - h * g + math.sqrt(2.0 * h / beta) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("non-finite particle position", float(np.max(np.abs(g))) * h)
        if ordered:
            x.sort(axis=0)
        left = left - h if h < left else 0.0
        count += 1
        if count > max_substeps:
            raise DivergenceError(f"more than {max_substeps} substeps in one step",
                                  float(np.max(np.abs(g))) * h)
    out = state.copy(positions=x, time=state.time + dt)
    out._substeps = count
    return out


# --------------------------------------------------------------------------
# sticky particles


def _sticky_velocity(x, m, p):
    return -pair_force_sum(x, p, weights=m) - p.external.grad(x)


def _merge_groups(x, m, ids, groups, t):
    """Merge index groups at their center of mass; returns new arrays and events."""
    keep = np.ones(x.shape[0], dtype=bool)
    events = []
    x = x.copy()
    m = m.copy()
    ids = ids.copy()
    for grp in groups:
        grp = sorted(grp)
        mass = m[grp]
        total = float(mass.sum())
        surv = grp[int(np.argmin(ids[grp]))]
        x[surv] = (mass[:, None] * x[grp]).sum(axis=0) / total
        absorbed = tuple(int(ids[i]) for i in grp if i != surv)
        events.append(MergeEvent(t, int(ids[surv]), absorbed, tuple(float(v) for v in mass)))
        m[surv] = total
        for i in grp:
            if i != surv:
                keep[i] = False
    return x[keep], m[keep], ids[keep], events


def _groups_from_pairs(n, pairs):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [g for g in groups.values() if len(g) > 1]


def _next_collision(x, v, m, p, horizon, dt_nominal):
    """Earliest collision time within ``horizon`` under frozen velocities."""
    n, dim = x.shape
    if n < 2:
        return None, []
    if dim == 1:
        gap = np.diff(x[:, 0])
        close = v[:-1, 0] - v[1:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(close > 0, gap / close, np.inf)
        s = np.where(gap <= 0, 0.0, s)
        s_min = float(np.min(s))
        if s_min > horizon:
            return None, []
        tol = 1e-10 * max(dt_nominal, s_min)
        hit = np.nonzero(s <= s_min + tol)[0]
        return s_min, [(int(i), int(i) + 1) for i in hit]
    iu = np.triu_indices(n, 1)
    r = x[iu[0]] - x[iu[1]]
    u = v[iu[0]] - v[iu[1]]
    uu = np.einsum("ij,ij->i", u, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.clip(np.where(uu > 0, -np.einsum("ij,ij->i", r, u) / uu, 0.0), 0.0, horizon)
    d = np.linalg.norm(r + s[:, None] * u, axis=1)
    dist = np.linalg.norm(r, axis=1)
    # capture radius: the approach produced by the pair's own attraction in one step
    reach = (m[iu[0]] + m[iu[1]]) * np.abs(p.dw(np.maximum(dist, 1e-300))) * dt_nominal
    reach = np.maximum(reach, 1e-12)
    cand = d <= reach
    if not np.any(cand):
        return None, []
    s_c = np.where(cand, s, np.inf)
    s_min = float(np.min(s_c))
    xs = x + s_min * v
    dd = np.linalg.norm(xs[iu[0]] - xs[iu[1]], axis=1)
    hit = np.nonzero(cand & (dd <= reach))[0]
    if hit.size == 0:
        hit = np.array([int(np.argmin(s_c))])
    return s_min, [(int(iu[0][k]), int(iu[1][k])) for k in hit]


def step_sticky(state, masses, p, dt):
    """Advance mass-weighted attractive dynamics by ``dt``, merging on collision.

    Returns ``(state, masses, merge_events)``.
    """
    if math.isfinite(state.beta_N):
        raise ValueError("sticky dynamics need beta_N = inf")
    if p.sign == "repulsive":
        raise ValueError("sticky dynamics need an attractive kernel")
    m = np.asarray(state.masses if masses is None else masses, dtype=float)
    if np.any(m <= 0) or abs(m.sum() - 1.0) > 1e-12:
        raise ValueError("sticky masses must be positive and sum to 1")
    x = state.positions.copy()
    ids = state.ids.copy()
    if state.dim == 1:
        order = np.argsort(x[:, 0], kind="stable")
        x, m, ids = x[order], m[order], ids[order]
    events = []
    t = state.time
    left = dt
    for _ in range(10 * x.shape[0] + 10):
        v = _sticky_velocity(x, m, p)
        s, pairs = _next_collision(x, v, m, p, left, dt)
        if s is None:
            x = x + left * v
            t = state.time + dt
            break
        x = x + s * v
        t += s
        left -= s
        groups = _groups_from_pairs(x.shape[0], pairs)
        x, m, ids, evs = _merge_groups(x, m, ids, groups, t)
        events.extend(evs)
        if left <= 1e-14 * dt:
            t = state.time + dt
            break
    else:
        raise StepSizeError("too many collisions resolved within one sticky step")
    new = state.copy(positions=x, time=t, masses=m, ids=ids)
    return new, m, events


def sticky_energy(x, m, p):
    """Mean-field energy of the weighted empirical measure (diagonal excluded)."""
    n = x.shape[0]
    e = float(m @ p.external.value(x))
    if n >= 2:
        _, r = _pair_matrix(x)
        off = ~np.eye(n, dtype=bool)
        e += 0.5 * float(np.sum((m[:, None] * m[None, :] * p.w(np.where(off, r, 1.0)))[off]))
    return e


# --------------------------------------------------------------------------
# simulation driver


@dataclass(frozen=True)
class SimulationConfig:
    """Everything needed to reproduce one trajectory."""

    potential: object
    N: int
    T: float
    initial: InitialMeasure = InitialMeasure.normal()
    dim: int = 1
    beta_N: float = math.inf
    dynamics: Optional[str] = None
    scheme: str = "rk4"
    dt: Optional[float] = None
    output_times: Optional[Sequence[float]] = None
    seed: int = 0
    sampler: str = "iid"
    masses: Optional[Sequence[float]] = None
    energy_every_step: Optional[bool] = None
    guard_energy: bool = False
    policy: str = "split"

    def resolved_dynamics(self):
        if self.dynamics is not None:
            if self.dynamics not in DYNAMICS:
                raise ValueError(f"unknown dynamics {self.dynamics!r}")
            return self.dynamics
        return "stochastic" if math.isfinite(self.beta_N) else "deterministic"

    def resolved_dt(self):
        return self.dt if self.dt is not None else default_dt(self.potential)

    def resolved_times(self):
        times = sorted(set(float(t) for t in (self.output_times or [self.T])) | {0.0})
        if times[-1] > self.T + 1e-12 or times[0] < 0:
            raise ValueError("output times must lie in [0, T]")
        return times


def initial_state(cfg, rng):
    if cfg.sampler == "quantile":
        if cfg.dim != 1:
            raise ValueError("quantile placement is one-dimensional")
        x = cfg.initial.quantile_positions(cfg.N)
    elif cfg.sampler == "iid":
        x = cfg.initial.sample(cfg.N, rng, cfg.dim)
    else:
        raise ValueError(f"unknown sampler {cfg.sampler!r}")
    if _keeps_order(cfg.potential, cfg.dim):
        x = np.sort(x, axis=0)
        if np.any(np.diff(x[:, 0]) <= 0):
            raise SingularityError("initial positions coincide under a singular kernel")
    masses = None
    if cfg.resolved_dynamics() == "sticky":
        masses = (np.full(cfg.N, 1.0 / cfg.N) if cfg.masses is None
                  else np.asarray(cfg.masses, dtype=float))
    return ParticleState(x, 0.0, cfg.beta_N, cfg.seed, masses)


def simulate(cfg: SimulationConfig, rng=None, state0=None):
    """Run one trajectory; snapshots at ``cfg.output_times`` (and t = 0)."""
    dyn = cfg.resolved_dynamics()
    if dyn == "stochastic" and not math.isfinite(cfg.beta_N):
        raise ValueError("stochastic dynamics need a finite beta_N")
    if dyn != "stochastic" and math.isfinite(cfg.beta_N):
        raise ValueError(f"{dyn} dynamics need beta_N = inf")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    state = initial_state(cfg, rng) if state0 is None else state0
    dt = cfg.resolved_dt()
    every = cfg.energy_every_step if cfg.energy_every_step is not None else dyn != "stochastic"
    traj = Trajectory()

    def record_energy(st):
        if dyn == "sticky":
            traj.energy_trace.append((st.time, sticky_energy(st.positions, st.masses, cfg.potential)))
        elif st.N >= 2:
            traj.energy_trace.append((st.time, energy_EN(st, cfg.potential) / st.N))

    traj.snapshots.append((0.0, state.copy()))
    record_energy(state)
    for target in cfg.resolved_times()[1:]:
        while state.time < target - 1e-12 * max(1.0, target):
            h = min(dt, target - state.time)
            if target - (state.time + h) < 1e-9 * dt:
                h = target - state.time
            if dyn == "deterministic":
                state = step_deterministic(state, cfg.potential, h, cfg.scheme,
                                           guard_energy=cfg.guard_energy)
            elif dyn == "stochastic":
                state = step_stochastic(state, cfg.potential, h, rng, policy=cfg.policy)
                traj.substeps += getattr(state, "_substeps", 1)
            else:
                state, _, events = step_sticky(state, None, cfg.potential, h)
                traj.merge_events.extend(events)
            if abs(state.time - target) < 1e-12 * max(1.0, target):
                state.time = target
            if every:
                record_energy(state)
        if not every:
            record_energy(state)
        traj.snapshots.append((target, state.copy()))
    return traj


def with_seed(cfg, seed):
    return replace(cfg, seed=int(seed))
