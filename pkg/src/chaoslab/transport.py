"""Wasserstein distances, empirical measures and 1D quantile representations."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment

ASSIGNMENT_CAP = 512
WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted discrete measure. ``positions`` has shape (n, D)."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        w = np.asarray(self.weights, dtype=float)
        if x.shape[0] != w.shape[0]:
            raise ValueError("positions and weights disagree in length")
        if not np.all(np.isfinite(x)):
            raise ValueError("atom positions must be finite")
        if np.any(w <= 0):
            raise ValueError("atom weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL * max(1, w.size):
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, positions):
        x = np.asarray(positions, dtype=float)
        n = x.shape[0]
        return cls(x, np.full(n, 1.0 / n))

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def merged(self):
        """Combine atoms sitting at identical positions."""
        uniq, inv = np.unique(self.positions, axis=0, return_inverse=True)
        w = np.bincount(inv.ravel(), weights=self.weights, minlength=uniq.shape[0])
        return EmpiricalMeasure(uniq, w)

    def mean(self):
        return self.weights @ self.positions

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow([f"x_{d + 1}" for d in range(self.dim)] + ["weight"])
            for x, w in zip(self.positions, self.weights):
                out.writerow([repr(float(v)) for v in x] + [repr(float(w))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in row] for row in rows[1:] if row])
        return cls(data[:, :-1], data[:, -1])


@dataclass(frozen=True)
class QuantileMeasure:
    """1D measure stored as quantiles ``U[k]`` at levels ``(k - 1/2)/M``."""

    U: np.ndarray

    def __post_init__(self):
        u = np.array(self.U, dtype=float)
        if u.ndim != 1 or u.size == 0:
            raise ValueError("quantile array must be one-dimensional and nonempty")
        if not np.all(np.isfinite(u)):
            raise ValueError("quantiles must be finite")
        if np.any(np.diff(u) < 0):
            raise ValueError("quantiles must be nondecreasing")
        u.setflags(write=False)
        object.__setattr__(self, "U", u)

    @property
    def M(self):
        return self.U.size

    @property
    def levels(self):
        return (np.arange(self.M) + 0.5) / self.M

    def mean(self):
        return float(np.mean(self.U))

    def variance(self):
        return float(np.var(self.U))

    def second_moment(self):
        return float(np.mean(self.U**2))

    def as_empirical(self):
        return EmpiricalMeasure(self.U[:, None], np.full(self.M, 1.0 / self.M))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"{self.M}\n")
            for u in self.U:
                fh.write(f"{float(u)!r}\n")

    @classmethod
    def from_csv(cls, path):
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
        m = int(lines[0])
        values = np.array([float(v) for v in lines[1:]])
        if values.size != m:
            raise ValueError(f"header announces M={m} but file holds {values.size} values")
        return cls(values)


# --------------------------------------------------------------------------


def empirical(state):
    """Empirical measure of a particle state (uniform weights unless the state carries masses)."""
    masses = getattr(state, "masses", None)
    x = np.asarray(state.positions, dtype=float)
    if masses is None:
        return EmpiricalMeasure.uniform(x)
    return EmpiricalMeasure(x, np.asarray(masses, dtype=float))


def _as_1d_atoms(a):
    if isinstance(a, QuantileMeasure):
        return a.U, np.full(a.M, 1.0 / a.M)
    if a.dim != 1:
        raise ValueError("one-dimensional measure required")
    x = a.positions[:, 0]
    order = np.argsort(x, kind="stable")
    return x[order], a.weights[order]


def _quantile_at(x, cw, s):
    idx = np.searchsorted(cw, s, side="left")
    return x[np.clip(idx, 0, x.size - 1)]


def wp_discrete_1d(a, b, p=2.0):
    """Exact W_p between two weighted 1D measures via the merged CDF breakpoints."""
    if p < 1:
        raise ValueError("p must be >= 1")
    xa, wa = _as_1d_atoms(a)
    xb, wb = _as_1d_atoms(b)
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    breaks = np.unique(np.concatenate([ca, cb]))
    lengths = np.diff(np.concatenate([[0.0], breaks]))
    keep = lengths > 0
    breaks, lengths = breaks[keep], lengths[keep]
    mids = breaks - 0.5 * lengths
    diff = np.abs(_quantile_at(xa, ca, mids) - _quantile_at(xb, cb, mids))
    return float(np.sum(lengths * diff**p) ** (1.0 / p))


def w2_quantile(a: QuantileMeasure, b: QuantileMeasure):
    if a.M != b.M:
        raise ValueError(f"grid sizes differ: {a.M} vs {b.M}")
    return float(np.sqrt(np.mean((a.U - b.U) ** 2)))


def w2_assignment(a: EmpiricalMeasure, b: EmpiricalMeasure, cap=ASSIGNMENT_CAP):
    """Exact W_2 between uniform clouds of equal size by optimal assignment."""
    if a.n != b.n:
        raise ValueError("assignment W2 needs equal atom counts")
    if a.n > cap:
        raise ValueError(f"assignment size {a.n} exceeds cap {cap}")
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    for m in (a, b):
        if not np.allclose(m.weights, 1.0 / m.n, rtol=0, atol=1e-12):
            raise ValueError("assignment W2 needs uniform weights")
    diff = a.positions[:, None, :] - b.positions[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / a.n))


def w2_sliced(a: EmpiricalMeasure, b: EmpiricalMeasure, n_projections=256, seed=0):
    """Sliced W_2 estimate (a lower bound on W_2) for clouds above the assignment cap."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_projections, a.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    total = 0.0
    for th in dirs:
        pa = EmpiricalMeasure(a.positions @ th, a.weights)
        pb = EmpiricalMeasure(b.positions @ th, b.weights)
        total += wp_discrete_1d(pa, pb, 2.0) ** 2
    return float(np.sqrt(total / n_projections))


def w2_distance(a, b):
    """W_2 with the best available method; returns ``(value, exact)``."""
    if isinstance(a, QuantileMeasure) or isinstance(b, QuantileMeasure) or a.dim == 1:
        return wp_discrete_1d(a, b, 2.0), True
    uniform = (a.n == b.n and np.allclose(a.weights, 1.0 / a.n, atol=1e-12)
               and np.allclose(b.weights, 1.0 / b.n, atol=1e-12))
    if uniform and a.n <= ASSIGNMENT_CAP:
        return w2_assignment(a, b), True
    return w2_sliced(a, b), False


def quantile_from_empirical(a, M):
    x, w = _as_1d_atoms(a)
    cw = np.cumsum(w)
    cw[-1] = 1.0
    return QuantileMeasure(_quantile_at(x, cw, (np.arange(M) + 0.5) / M))


def quantile_from_density(ppf, M):
    """Quantiles of a continuous law from its inverse CDF (callable or object with ``.ppf``)."""
    f = getattr(ppf, "ppf", ppf)
    return QuantileMeasure(np.asarray(f((np.arange(M) + 0.5) / M), dtype=float))


def quantile_from_cdf(cdf: Callable[[float], float], M, bracket=(-1e3, 1e3)):
    """Quantiles by root-finding on a CDF."""
    lo, hi = bracket
    out = [brentq(lambda x, s=s: cdf(x) - s, lo, hi, xtol=1e-14, rtol=1e-14)
           for s in (np.arange(M) + 0.5) / M]
    return QuantileMeasure(np.maximum.accumulate(np.array(out)))


def generalized_geodesic(mu0: QuantileMeasure, mu1: QuantileMeasure, s):
    """Linear interpolation of quantile functions (the 1D generalized geodesic)."""
    if mu0.M != mu1.M:
        raise ValueError("grid sizes differ")
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    if s == 0.0:
        return mu0
    if s == 1.0:
        return mu1
    return QuantileMeasure(np.maximum.accumulate((1.0 - s) * mu0.U + s * mu1.U))

