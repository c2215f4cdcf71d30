"""Pair-interaction and external potentials.

A pair potential is described by its radial profile ``w(r)`` for ``r >= 0``;
the interaction between two points is ``w(|x - y|)`` (evenness is built in).
The spin-weighted kind is the exception: it multiplies the radial profile by
a symmetric weight ``g(x, y)`` and is therefore not translation invariant.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

CERT_TOL = 1e-8
FD_STEP = 1e-6


class SingularityError(ValueError):
    """Raised when a singular kernel is evaluated on the diagonal."""

    def __init__(self, message, radius=0.0, pairs=None):
        super().__init__(message)
        self.radius = radius
        self.pairs = pairs


class ExtrapolationError(ValueError):
    """Raised when a tabulated potential is queried outside its grid."""


class Kind(str, Enum):
    ZERO = "zero"
    REPULSIVE_POWER = "repulsive_power"
    LOGARITHMIC = "logarithmic"  # alias resolved to REPULSIVE_POWER with s=0
    ATTRACTIVE_POWER = "attractive_power"
    MORSE = "morse"
    SPIN_WEIGHTED = "spin_weighted"
    TABULATED = "tabulated"


# --------------------------------------------------------------------------
# radial profiles


def _power_profile(s, r, order):
    """Repulsive catalog: r^-s (s>0), -log r (s=0), -r^|s| (s<0)."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if s > 0:
            if order == 0:
                out = r ** (-s)
            elif order == 1:
                out = -s * r ** (-s - 1.0)
            else:
                out = s * (s + 1.0) * r ** (-s - 2.0)
        elif s == 0:
            if order == 0:
                out = -np.log(r)
            elif order == 1:
                out = -1.0 / r
            else:
                out = 1.0 / r**2
        else:
            a = -s
            if order == 0:
                out = -(r**a)
            elif order == 1:
                out = -a * r ** (a - 1.0)
            else:
                out = a * (1.0 - a) * r ** (a - 2.0)
            zero_val = (0.0, -np.inf, np.inf)[order]
            return np.where(r == 0, zero_val, out)
    # for s >= 0 the formulas already give the limits at r = 0
    return out


def _attractive_profile(alpha, r, order):
    r = np.asarray(r, dtype=float)
    e = 1.0 + alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        if order == 0:
            out = r**e
            zero_val = 0.0
        elif order == 1:
            out = e * r**alpha
            zero_val = 1.0 if alpha == 0 else 0.0  # one-sided w'(0+)
        else:
            out = e * alpha * r ** (alpha - 1.0) if alpha != 0 else np.zeros_like(r)
            if alpha == 0:
                zero_val = 0.0
            elif alpha < 1:
                zero_val = np.inf
            elif alpha == 1:
                zero_val = 2.0
            else:
                zero_val = 0.0
    return np.where(r == 0, zero_val, out)


def _morse_profile(prm, r, order):
    cr, lr, ca, la = prm["C_R"], prm["l_R"], prm["C_A"], prm["l_A"]
    r = np.asarray(r, dtype=float)
    return (cr * (-1.0 / lr) ** order * np.exp(-r / lr)
            - ca * (-1.0 / la) ** order * np.exp(-r / la))


# --------------------------------------------------------------------------
# external potentials


@dataclass(frozen=True)
class ExternalPotential:
    """External potential V.

    ``quadratic`` is ``c |x|^2 / 2`` in any dimension. ``polynomial`` is
    ``sum_k coeffs[k] x^k`` applied to each coordinate and summed.
    ``tabulated`` is a monotone-cubic interpolant (one dimension only).
    """

    kind: str = "zero"
    c: float = 0.0
    coeffs: tuple = ()
    table: Optional[tuple] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("zero", "quadratic", "polynomial", "tabulated"):
            raise ValueError(f"unknown external potential kind {self.kind!r}")
        if self.kind == "tabulated":
            if self.table is None:
                raise ValueError("tabulated V needs a (x, V) table")
            x, v = (np.asarray(a, dtype=float) for a in self.table)
            object.__setattr__(self, "_interp", PchipInterpolator(x, v, extrapolate=False))
        if self.lam is None:
            object.__setattr__(self, "lam", self._computed_lambda())

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def quadratic(cls, c=1.0):
        return cls(kind="quadratic", c=float(c))

    @classmethod
    def polynomial(cls, coeffs, lam=None):
        return cls(kind="polynomial", coeffs=tuple(float(a) for a in coeffs), lam=lam)

    def _computed_lambda(self):
        if self.kind == "zero":
            return 0.0
        if self.kind == "quadratic":
            return self.c
        if self.kind == "polynomial":
            d2 = np.polynomial.Polynomial(self.coeffs).deriv(2)
            if d2.degree() <= 0:
                return float(d2.coef[0]) if len(d2.coef) else 0.0
            if d2.degree() % 2 == 1 or d2.coef[-1] < 0:
                raise ValueError("polynomial V has unbounded-below second derivative; "
                                 "it is not lambda-convex")
            crit = d2.deriv().roots()
            crit = crit[np.abs(crit.imag) < 1e-12].real
            return float(np.min(d2(crit)))
        x = np.linspace(self.table[0][0], self.table[0][-1], 2001)
        return float(np.nanmin(self._interp(x, 2)))

    def _check_1d(self, x):
        if self.kind == "tabulated":
            lo, hi = self.table[0][0], self.table[0][-1]
            if np.any((x < lo) | (x > hi)):
                raise ExtrapolationError("external potential queried outside its table")

    def value(self, x):
        """V at each point. ``x`` has shape (N,) or (N, D); returns shape (N,)."""
        x = np.asarray(x, dtype=float)
        pts = x if x.ndim == 2 else x[:, None]
        if self.kind == "zero":
            return np.zeros(pts.shape[0])
        if self.kind == "quadratic":
            return 0.5 * self.c * np.sum(pts**2, axis=1)
        if self.kind == "polynomial":
            return np.sum(np.polynomial.polynomial.polyval(pts, self.coeffs), axis=1)
        self._check_1d(pts)
        return np.sum(self._interp(pts), axis=1)

    def grad(self, x):
        """Gradient of V, same shape as ``x``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "quadratic":
            return self.c * x
        if self.kind == "polynomial":
            dc = np.polynomial.polynomial.polyder(self.coeffs) if len(self.coeffs) > 1 else [0.0]
            return np.polynomial.polynomial.polyval(x, dc)
        self._check_1d(x)
        return self._interp(x, 1)

    def hess_diag(self, x):
        """Second derivative of V along each coordinate, same shape as ``x``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "quadratic":
            return np.full_like(x, self.c)
        if self.kind == "polynomial":
            dc = (np.polynomial.polynomial.polyder(self.coeffs, 2)
                  if len(self.coeffs) > 2 else [0.0])
            return np.polynomial.polynomial.polyval(x, dc)
        self._check_1d(x)
        return self._interp(x, 2)


# --------------------------------------------------------------------------
# pair potentials


@dataclass(frozen=True)
class PotentialSpec:
    """Pair potential ``w`` together with an external potential ``V``.

    Use the classmethod constructors (``logarithmic``, ``repulsive_power``,
    ``attractive_power``, ``morse``, ``spin_weighted``, ``tabulated``,
    ``zero``). ``lam`` is the convexity modulus of ``w`` on ``(0, inf)``; it
    is computed from the catalog when not declared, and a declared value is
    sample-checked at construction.
    """

    kind: Kind
    params: Mapping[str, float] = field(default_factory=dict)
    lam: Optional[float] = None
    external: ExternalPotential = field(default_factory=ExternalPotential)
    table: Optional[tuple] = None
    g: Optional[Callable] = None
    dg: Optional[Callable] = None

    def __post_init__(self):
        kind = Kind(self.kind)
        params = dict(self.params)
        if kind is Kind.LOGARITHMIC:
            kind, params = Kind.REPULSIVE_POWER, {"s": 0.0}
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", params)
        if kind in (Kind.REPULSIVE_POWER, Kind.SPIN_WEIGHTED):
            s = float(params["s"])
            if not -1.0 < s <= 1.0:
                raise ValueError(f"repulsive exponent s={s} outside (-1, 1]")
        if kind is Kind.ATTRACTIVE_POWER and params["alpha"] < 0:
            raise ValueError("attractive exponent alpha must be >= 0")
        if kind is Kind.MORSE:
            for key in ("C_R", "l_R", "C_A", "l_A"):
                if not params[key] > 0:
                    raise ValueError(f"Morse parameter {key} must be positive")
        if kind is Kind.SPIN_WEIGHTED and self.g is None:
            raise ValueError("spin-weighted kind needs a weight function g(x, y)")
        if kind is Kind.TABULATED:
            if self.table is None:
                raise ValueError("tabulated kind needs an (r, w) table")
            r, w = (np.asarray(a, dtype=float) for a in self.table)
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ValueError("tabulated radii must be nonnegative and increasing")
            object.__setattr__(self, "_interp", PchipInterpolator(r, w, extrapolate=False))
        declared = self.lam is not None
        if not declared:
            object.__setattr__(self, "lam", self._catalog_lambda())
        object.__setattr__(self, "sign", self._sampled_sign())
        if declared:
            self._check_declared_lambda()

    # constructors ---------------------------------------------------------

    @classmethod
    def zero(cls, external=None):
        return cls(Kind.ZERO, external=external or ExternalPotential())

    @classmethod
    def logarithmic(cls, external=None):
        return cls(Kind.REPULSIVE_POWER, {"s": 0.0}, external=external or ExternalPotential())

    @classmethod
    def repulsive_power(cls, s, external=None):
        return cls(Kind.REPULSIVE_POWER, {"s": float(s)}, external=external or ExternalPotential())

    @classmethod
    def attractive_power(cls, alpha, external=None):
        return cls(Kind.ATTRACTIVE_POWER, {"alpha": float(alpha)},
                   external=external or ExternalPotential())

    @classmethod
    def morse(cls, C_R, l_R, C_A, l_A, lam=None, external=None):
        prm = {"C_R": float(C_R), "l_R": float(l_R), "C_A": float(C_A), "l_A": float(l_A)}
        return cls(Kind.MORSE, prm, lam=lam, external=external or ExternalPotential())

    @classmethod
    def spin_weighted(cls, s, g, dg=None, lam=0.0, external=None):
        return cls(Kind.SPIN_WEIGHTED, {"s": float(s)}, lam=lam, g=g, dg=dg,
                   external=external or ExternalPotential())

    @classmethod
    def tabulated(cls, r, w, lam=None, external=None):
        table = (tuple(float(a) for a in r), tuple(float(a) for a in w))
        return cls(Kind.TABULATED, {}, lam=lam, table=table,
                   external=external or ExternalPotential())

    @classmethod
    def from_csv(cls, path, lam=None, external=None):
        r, w = load_table_csv(path)
        return cls.tabulated(r, w, lam=lam, external=external)

    # metadata -------------------------------------------------------------

    @property
    def strongly_singular(self):
        """True when ``w(0) = +inf`` (repulsive kinds with ``s >= 0``)."""
        return (self.kind in (Kind.REPULSIVE_POWER, Kind.SPIN_WEIGHTED)
                and self.params["s"] >= 0)

    @property
    def repulsive_singular(self):
        # kinds whose gradient has no meaning on the diagonal
        return self.kind in (Kind.REPULSIVE_POWER, Kind.SPIN_WEIGHTED)

    @property
    def translation_invariant(self):
        return self.kind is not Kind.SPIN_WEIGHTED

    @property
    def functional_lambda(self):
        """Convexity modulus of the mean-field free energy: min(lam, 0) + lam_V."""
        return min(self.lam, 0.0) + self.external.lam

    @property
    def label(self):
        if self.kind is Kind.REPULSIVE_POWER and self.params["s"] == 0:
            return "logarithmic"
        if self.params:
            inner = ",".join(f"{k}={v:g}" for k, v in self.params.items())
            return f"{self.kind.value}({inner})"
        return self.kind.value

    # radial profile -------------------------------------------------------

    def _profile(self, r, order):
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind is Kind.ZERO:
            return np.zeros_like(r)
        if self.kind in (Kind.REPULSIVE_POWER, Kind.SPIN_WEIGHTED):
            return _power_profile(self.params["s"], r, order)
        if self.kind is Kind.ATTRACTIVE_POWER:
            return _attractive_profile(self.params["alpha"], r, order)
        if self.kind is Kind.MORSE:
            return _morse_profile(self.params, r, order)
        lo, hi = self.table[0][0], self.table[0][-1]
        if np.any((r < lo) | (r > hi)):
            raise ExtrapolationError(
                f"tabulated potential queried outside [{lo}, {hi}]")
        return self._interp(r, order)

    def w(self, r):
        return self._profile(r, 0)

    def dw(self, r):
        """Radial derivative w'(r); the one-sided value w'(0+) at r = 0."""
        return self._profile(r, 1)

    def d2w(self, r):
        return self._profile(r, 2)

    def odd_dw(self, d):
        """sign(d) * w'(|d|) for nonzero separations ``d``."""
        d = np.asarray(d, dtype=float)
        if self.kind is Kind.ZERO:
            return np.zeros_like(d)
        if self.kind is Kind.REPULSIVE_POWER and self.params["s"] == 0:
            return -1.0 / d
        if self.kind is Kind.ATTRACTIVE_POWER:
            alpha = self.params["alpha"]
            if alpha == 0:
                return np.sign(d)
            if alpha == 1:
                return 2.0 * d
        return np.sign(d) * self.dw(np.abs(d))

    # pair-level evaluation (needed for the spin-weighted kind) ------------

    def pair_value(self, x, y):
        d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        if self.kind is Kind.SPIN_WEIGHTED:
            return self.g(x, y) * self.w(d)
        return self.w(d)

    def pair_grad_x(self, x, y):
        """d/dx W(x, y) in one dimension (zero at coincidence for non-singular kinds)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = x - y
        r = np.abs(d)
        with np.errstate(invalid="ignore"):
            radial = np.where(r > 0, np.sign(d) * self.dw(r), 0.0)
        if self.kind is not Kind.SPIN_WEIGHTED:
            return radial
        gx = (self.dg(x, y) if self.dg is not None
              else (self.g(x + FD_STEP, y) - self.g(x - FD_STEP, y)) / (2 * FD_STEP))
        return gx * self.w(r) + self.g(x, y) * radial

    # construction checks --------------------------------------------------

    def _catalog_lambda(self):
        if self.kind in (Kind.ZERO, Kind.REPULSIVE_POWER, Kind.SPIN_WEIGHTED):
            return 0.0
        if self.kind is Kind.ATTRACTIVE_POWER:
            return 2.0 if self.params["alpha"] == 1 else 0.0
        if self.kind is Kind.MORSE:
            return morse_min_curvature(**self.params)
        r = np.linspace(self.table[0][0], self.table[0][-1], 4001)
        return float(np.min(self._interp(r, 2)))

    def _sample_grid(self):
        if self.kind is Kind.TABULATED:
            lo, hi = self.table[0][0], self.table[0][-1]
            return np.geomspace(lo, hi, 400) if lo > 0 else np.linspace(lo, hi, 401)[1:]
        return np.geomspace(1e-3, 1e3, 400)

    def _sampled_sign(self):
        if self.kind in (Kind.REPULSIVE_POWER, Kind.SPIN_WEIGHTED):
            return "repulsive"
        if self.kind in (Kind.ZERO, Kind.ATTRACTIVE_POWER):
            return "attractive"
        dw = self.dw(self._sample_grid())
        if np.all(dw <= 0):
            return "repulsive"
        if np.all(dw >= 0):
            return "attractive"
        return "mixed"

    def _check_declared_lambda(self):
        grid = self._sample_grid()
        phi = self.w(grid) - 0.5 * self.lam * grid**2
        dd = second_divided_differences(grid, phi)
        h = np.diff(grid)
        roundoff = 8 * np.finfo(float).eps * np.max(np.abs(phi)) / (h[1:] * h[:-1])
        if np.any(dd < -(roundoff + CERT_TOL * (1 + abs(self.lam)))):
            raise ValueError(
                f"declared lambda={self.lam} is not certified for {self.label}: "
                f"min second difference {dd.min():.3e}")


def morse_min_curvature(C_R, l_R, C_A, l_A):
    """Infimum over r > 0 of w'' for the Morse potential (0 is the limit at infinity)."""
    def d2(r):
        return C_R / l_R**2 * math.exp(-r / l_R) - C_A / l_A**2 * math.exp(-r / l_A)

    grid = np.geomspace(1e-8, 200 * max(l_R, l_A), 20001)
    vals = C_R / l_R**2 * np.exp(-grid / l_R) - C_A / l_A**2 * np.exp(-grid / l_A)
    k = int(np.argmin(vals))
    best = min(float(vals[k]), d2(0.0), 0.0)
    if 0 < k < len(grid) - 1:
        res = minimize_scalar(d2, bounds=(grid[k - 1], grid[k + 1]), method="bounded",
                              options={"xatol": 1e-14})
        best = min(best, float(res.fun))
    return best


def second_divided_differences(x, f):
    """Twice the second divided difference of f on a (possibly nonuniform) grid."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    return 2.0 * ((f[2:] - f[1:-1]) / h1 - (f[1:-1] - f[:-2]) / h0) / (h0 + h1)


def load_table_csv(path):
    """Read a two-column (r, w) CSV; a non-numeric first row is a header."""
    rows = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if rows:
                    raise
    r, w = zip(*rows)
    return np.array(r), np.array(w)


# --------------------------------------------------------------------------
# regularization


@dataclass(frozen=True)
class RegularizedPotential:
    """Tangent-line regularization of a pair potential.

    With ``lam`` the base modulus, the convex part ``phi = w - lam r^2/2`` is
    replaced by its tangent line at ``epsilon`` on ``[0, epsilon)`` and by its
    tangent at ``R`` on ``(R, inf)``. The result is continuous at 0, agrees
    with ``w`` on ``[epsilon, R]`` and never exceeds ``w``.
    """

    base: PotentialSpec
    epsilon: float
    R: float
    one_sided: bool = False

    def __post_init__(self):
        if not 0 < self.epsilon < self.R:
            raise ValueError("regularization needs 0 < epsilon < R")
        if self.base.kind is Kind.SPIN_WEIGHTED:
            raise ValueError("spin-weighted kernels are not regularized")
        lam_s = self.base.lam
        knots = {}
        for name, a in (("eps", self.epsilon), ("R", self.R)):
            wa = float(self.base.w(a))
            if self.base.kind is Kind.TABULATED:
                h = min(FD_STEP, a * 1e-3)
                side = -h if name == "eps" else h
                slope = float((self.base.w(a) - self.base.w(a + side)) / -side)
                object.__setattr__(self, "one_sided", True)
            else:
                slope = float(self.base.dw(a))
            knots[name] = (a, wa - 0.5 * lam_s * a * a, slope - lam_s * a)
        object.__setattr__(self, "_lam_s", lam_s)
        object.__setattr__(self, "_knots", knots)

    kind = "regularized"
    strongly_singular = False
    repulsive_singular = False
    translation_invariant = True

    @property
    def external(self):
        return self.base.external

    @property
    def lam(self):
        return self.base.lam

    @property
    def sign(self):
        return self.base.sign

    @property
    def functional_lambda(self):
        return min(self.lam, 0.0) + self.external.lam

    @property
    def label(self):
        return f"{self.base.label}[eps={self.epsilon:g},R={self.R:g}]"

    def _profile(self, r, order):
        r = np.abs(np.asarray(r, dtype=float))
        lam = self._lam_s
        # outside [epsilon, R] the convex part continues along its tangent at
        # the clipped radius c, which gives one closed form for all r
        if self.one_sided:
            return self._profile_knots(r, order)
        c = np.clip(r, self.epsilon, self.R)
        if order == 2:
            return np.where(c == r, self.base._profile(c, 2), lam)
        base = self.base._profile(c, order)
        if lam == 0.0:
            dphi = base if order == 1 else self.base._profile(c, 1)
            return base if order == 1 else base + dphi * (r - c)
        dphi = (base if order == 1 else self.base._profile(c, 1)) - lam * c
        out = dphi + lam * r if order == 1 else \
            base - 0.5 * lam * c * c + dphi * (r - c) + 0.5 * lam * r * r
        # exact base values on [epsilon, R]
        return np.where(c == r, base, out)

    def _profile_knots(self, r, order):
        # tabulated kernels: tangents use the one-sided slopes stored at the knots
        lam = self._lam_s
        inner = (r >= self.epsilon) & (r <= self.R)
        rr = np.where(inner, r, 0.5 * (self.epsilon + self.R))
        out = np.asarray(self.base._profile(rr, order), dtype=float).copy()
        for name, mask in (("eps", r < self.epsilon), ("R", r > self.R)):
            a, phi_a, dphi_a = self._knots[name]
            if order == 0:
                val = phi_a + dphi_a * (r - a) + 0.5 * lam * r * r
            elif order == 1:
                val = dphi_a + lam * r
            else:
                val = np.full_like(r, lam)
            out = np.where(mask, val, out)
        return out

    def w(self, r):
        return self._profile(r, 0)

    def dw(self, r):
        return self._profile(r, 1)

    def d2w(self, r):
        return self._profile(r, 2)

    def odd_dw(self, d):
        d = np.asarray(d, dtype=float)
        return np.sign(d) * self.dw(np.abs(d))

    def pair_value(self, x, y):
        return self.w(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))

    def pair_grad_x(self, x, y):
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        r = np.abs(d)
        return np.where(r > 0, np.sign(d) * self.dw(r), 0.0)


# --------------------------------------------------------------------------
# public operations


def eval_w(p, r):
    """Value of the pair potential at radius ``r >= 0`` (``+inf`` on the singular diagonal)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("eval_w expects r >= 0")
    out = p.w(r)
    return float(out) if out.ndim == 0 else out


def eval_grad_w(p, r_vec):
    """Gradient of ``x -> w(|x|)`` at ``r_vec``, with the convention grad w(0) = 0.

    Repulsive power kernels have no subgradient at the origin and raise
    :class:`SingularityError` there.
    """
    v = np.atleast_1d(np.asarray(r_vec, dtype=float))
    r = float(np.linalg.norm(v))
    if r == 0.0:
        if p.repulsive_singular:
            raise SingularityError(f"gradient of {p.label} undefined at the origin", radius=0.0)
        return np.zeros_like(v)
    return float(p.dw(r)) * v / r


def regularize(p, epsilon, R):
    return RegularizedPotential(p, float(epsilon), float(R))


@dataclass(frozen=True)
class LambdaCertificate:
    lambda_observed: float
    passed: bool

    def __bool__(self):
        return self.passed


def certify_lambda(p, grid: Sequence[float], tol=CERT_TOL):
    """Smallest sampled second difference of ``w`` on ``grid`` versus ``p.lam``."""
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size < 3:
        raise ValueError("certify_lambda needs at least 3 grid points")
    if np.any(grid < 0) or (grid[0] == 0 and p.strongly_singular):
        raise ValueError("grid must lie in (0, inf) for singular kernels")
    dd = second_divided_differences(grid, p.w(grid))
    observed = float(np.min(dd))
    return LambdaCertificate(observed, observed >= p.lam - tol * max(1.0, abs(p.lam)))
