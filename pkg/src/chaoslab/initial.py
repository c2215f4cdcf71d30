"""Initial laws for particle runs, JKO flows and oracles."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .transport import EmpiricalMeasure, QuantileMeasure

FAMILIES = ("normal", "uniform", "atoms", "quantiles")


@dataclass(frozen=True)
class InitialMeasure:
    """A named family of initial laws.

    ``normal(mean, std)``, ``uniform(low, high)``, ``dirac(at)``,
    ``atoms(points, weights)`` or ``quantiles`` loaded from a quantile CSV.
    In ``D > 1`` the normal and uniform families are products over
    coordinates.
    """

    family: str
    params: dict = field(default_factory=dict)
    atoms: Optional[tuple] = None
    weights: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown initial family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "uniform" and not self.params["low"] < self.params["high"]:
            raise ValueError("uniform needs low < high")
        if self.family == "normal" and not self.params.get("std", 1.0) > 0:
            raise ValueError("normal needs std > 0")

    @classmethod
    def normal(cls, mean=0.0, std=1.0):
        return cls("normal", {"mean": float(mean), "std": float(std)})

    @classmethod
    def uniform(cls, low=0.0, high=1.0):
        return cls("uniform", {"low": float(low), "high": float(high)})

    @classmethod
    def dirac(cls, at=0.0):
        return cls("atoms", atoms=(float(at),), weights=(1.0,))

    @classmethod
    def from_atoms(cls, points, weights=None):
        pts = tuple(float(x) for x in points)
        w = tuple(float(x) for x in weights) if weights is not None else (1.0 / len(pts),) * len(pts)
        order = np.argsort(pts, kind="stable")
        return cls("atoms", atoms=tuple(pts[i] for i in order), weights=tuple(w[i] for i in order))

    @classmethod
    def from_quantile_csv(cls, path):
        q = QuantileMeasure.from_csv(Path(path))
        return cls("quantiles", atoms=tuple(q.U.tolist()))

    # ------------------------------------------------------------------

    @property
    def is_atomic(self):
        return self.family in ("atoms", "quantiles")

    def _atom_arrays(self):
        x = np.asarray(self.atoms, dtype=float)
        if self.family == "quantiles":
            return x, np.full(x.size, 1.0 / x.size)
        return x, np.asarray(self.weights, dtype=float)

    def ppf(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "normal":
            return self.params["mean"] + self.params["std"] * ndtri(s)
        if self.family == "uniform":
            lo, hi = self.params["low"], self.params["high"]
            return lo + (hi - lo) * s
        x, w = self._atom_arrays()
        cw = np.cumsum(w)
        cw[-1] = 1.0
        return x[np.clip(np.searchsorted(cw, s, side="left"), 0, x.size - 1)]

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "normal":
            return ndtr((y - self.params["mean"]) / self.params["std"])
        if self.family == "uniform":
            lo, hi = self.params["low"], self.params["high"]
            return np.clip((y - lo) / (hi - lo), 0.0, 1.0)
        x, w = self._atom_arrays()
        return np.sum(w * (y[..., None] >= x), axis=-1)

    def cdf_integral(self, y):
        """Primitive of the CDF, ``int_{-inf}^y F(z) dz``."""
        y = np.asarray(y, dtype=float)
        if self.family == "normal":
            m, sd = self.params["mean"], self.params["std"]
            z = (y - m) / sd
            return sd * (z * ndtr(z) + np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi))
        if self.family == "uniform":
            lo, hi = self.params["low"], self.params["high"]
            c = np.clip(y, lo, hi)
            return (c - lo) ** 2 / (2 * (hi - lo)) + np.maximum(y - hi, 0.0)
        x, w = self._atom_arrays()
        return np.sum(w * np.maximum(y[..., None] - x, 0.0), axis=-1)

    def support(self, mass_tol=1e-12):
        """Interval carrying all but ``mass_tol`` of the mass."""
        if self.family == "normal":
            return tuple(self.ppf([mass_tol / 2, 1 - mass_tol / 2]))
        if self.family == "uniform":
            return self.params["low"], self.params["high"]
        x, _ = self._atom_arrays()
        return float(x.min()), float(x.max())

    def quantile_measure(self, M):
        return QuantileMeasure(np.asarray(self.ppf((np.arange(M) + 0.5) / M), dtype=float))

    def mean(self):
        if self.family == "normal":
            return self.params["mean"]
        if self.family == "uniform":
            return 0.5 * (self.params["low"] + self.params["high"])
        x, w = self._atom_arrays()
        return float(w @ x)

    def as_empirical(self):
        x, w = self._atom_arrays()
        return EmpiricalMeasure(x[:, None], w)

    # ------------------------------------------------------------------

    def sample(self, n, rng, dim=1):
        """iid sample of shape (n, dim)."""
        if self.family == "normal":
            return self.params["mean"] + self.params["std"] * rng.standard_normal((n, dim))
        if self.family == "uniform":
            return rng.uniform(self.params["low"], self.params["high"], size=(n, dim))
        if dim != 1:
            raise ValueError("atomic initial laws are one-dimensional")
        return self.ppf(rng.uniform(size=n))[:, None]

    def quantile_positions(self, n):
        """Deterministic placement x_i = F^{-1}((i - 1/2)/n) (one dimension)."""
        return np.asarray(self.ppf((np.arange(n) + 0.5) / n), dtype=float)[:, None]
