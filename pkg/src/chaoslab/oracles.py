"""Reference solutions that do not depend on the JKO solver or the particle code.

* heat and Ornstein-Uhlenbeck flows of Gaussians (closed form);
* the entropy solution of the aggregation equation with ``w = |x|``,
  through the Burgers correspondence ``u = 2 F - 1`` (Lagrangian convex hull
  for beta = inf, Cole-Hopf quadrature for beta < inf);
* the equilibrium of the logarithmic gas in a quadratic well, by its own
  Newton minimization in quantile coordinates (cached on disk);
* Hilbert transforms by truncated principal values with extrapolation.
"""
from __future__ import annotations

import hashlib
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp, ndtri, roots_hermite

from .initial import InitialMeasure
from .transport import EmpiricalMeasure, QuantileMeasure

FD_STEP = 1e-3
HULL_NODES = 1 << 15
DEFAULT_M = 512


@dataclass
class OracleSolution:
    """A reference law ``evaluate(t)`` plus its validity domain and self-check residuals."""

    kind: str
    evaluate: Callable
    validity: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    def __call__(self, t):
        return self.evaluate(t)

    @property
    def passed(self):
        return all(r <= tol for r, tol in self.residuals.values())


# --------------------------------------------------------------------------
# Gaussian flows


def _gaussian_quantiles(mean, std, M):
    if std == 0:
        return QuantileMeasure(np.full(M, float(mean)))
    return QuantileMeasure(mean + std * ndtri((np.arange(M) + 0.5) / M))


def ou_moments(mean, std, c, beta, t):
    """Mean and standard deviation of the OU law at time ``t`` (c = 0 is the heat flow)."""
    if c == 0:
        var = std**2 + (2.0 * t / beta if math.isfinite(beta) else 0.0)
        return mean, math.sqrt(var)
    decay = math.exp(-c * t)
    var = std**2 * decay**2
    if math.isfinite(beta):
        var += -math.expm1(-2.0 * c * t) / (c * beta)
    return mean * decay, math.sqrt(var)


def heat_flow(mean, std, beta, t, M=DEFAULT_M):
    """Quantiles of N(mean, std^2 + 2t/beta)."""
    if not math.isfinite(beta):
        raise ValueError("the heat flow oracle needs beta < inf")
    m, s = ou_moments(mean, std, 0.0, beta, t)
    return _gaussian_quantiles(m, s, M)


def ou_flow(mean, std, c, beta, t, M=DEFAULT_M):
    """Quantiles of the Ornstein-Uhlenbeck law for V = c x^2 / 2."""
    if c <= 0:
        raise ValueError("ou_flow needs c > 0")
    m, s = ou_moments(mean, std, c, beta, t)
    return _gaussian_quantiles(m, s, M)


def _gaussian_density(x, m, s):
    return np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))


def gaussian_pde_residual(mean, std, c, beta, times=(0.1, 0.5, 1.0), xs=None):
    """Max |rho_t - rho_xx/beta - (c x rho)_x| by five-point differences."""
    h = FD_STEP
    out = 0.0
    for t in times:
        m, s = ou_moments(mean, std, c, beta, t)
        x = np.linspace(m - 4 * s, m + 4 * s, 41) if xs is None else np.asarray(xs)

        def rho(tt, xx):
            mm, ss = ou_moments(mean, std, c, beta, tt)
            return _gaussian_density(xx, mm, ss)

        def d1(f, z):
            return (-f(z + 2 * h) + 8 * f(z + h) - 8 * f(z - h) + f(z - 2 * h)) / (12 * h)

        def d2(f, z):
            return (-f(z + 2 * h) + 16 * f(z + h) - 30 * f(z) + 16 * f(z - h)
                    - f(z - 2 * h)) / (12 * h * h)

        rt = d1(lambda tt: rho(tt, x), t)
        rxx = d2(lambda xx: rho(t, xx), x)
        flux = d1(lambda xx: c * xx * rho(t, xx), x)
        res = rt - rxx / beta - flux
        out = max(out, float(np.max(np.abs(res))))
    return out


def gaussian_oracle(mean, std, c, beta, M=DEFAULT_M):
    kind = "heat" if c == 0 else "ou"
    sol = OracleSolution(kind, lambda t: _gaussian_quantiles(*ou_moments(mean, std, c, beta, t), M),
                         {"beta": beta, "V": f"{c} x^2/2", "mu0": f"N({mean}, {std}^2)"})
    if math.isfinite(beta):
        sol.residuals["fokker_planck"] = (gaussian_pde_residual(mean, std, c, beta), 1e-8)
    return sol


# --------------------------------------------------------------------------
# aggregation with w = |x| and the Burgers correspondence


def _lower_hull(x, y):
    """Indices of the vertices of the lower convex hull of points sorted by x."""
    hull = []
    for i in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies on or above the chord from a to i
            if (y[b] - y[a]) * (x[i] - x[a]) >= (y[i] - y[a]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull)


def _lagrangian_primitive(mu0: InitialMeasure, s, t):
    """Exact primitive of X_0(s) + t (1 - 2 s) at the mass levels ``s``.

    The primitive of the quantile function is computed from the CDF
    primitive: int_0^s X_0 = s X_0(s) - int_{-inf}^{X_0(s)} F_0 for
    continuous laws; atomic laws are integrated atom by atom.
    """
    s = np.asarray(s, dtype=float)
    if mu0.is_atomic:
        x, w = mu0._atom_arrays()
        cw = np.concatenate([[0.0], np.cumsum(w)])
        cw[-1] = 1.0
        idx = np.clip(np.searchsorted(cw, s, side="right") - 1, 0, x.size - 1)
        base = np.concatenate([[0.0], np.cumsum(w * x)])
        prim = base[idx] + (s - cw[idx]) * x[idx]
    else:
        inner = np.clip(s, 1e-300, 1.0 - 1e-16)
        q = mu0.ppf(inner)
        prim = inner * q - mu0.cdf_integral(q)
    return prim + t * (s - s * s)


def _hull_quantiles(mu0, t, nodes=HULL_NODES):
    """Slopes of the convex minorant of the Lagrangian primitive on a level grid.

    Returns level breakpoints ``s`` (length K+1) and the value of X_t on each
    level cell (length K), i.e. a K-atom measure with cell masses diff(s).
    """
    s = np.linspace(0.0, 1.0, nodes + 1)
    if mu0.is_atomic:
        _, w = mu0._atom_arrays()
        s = np.union1d(s, np.clip(np.cumsum(w)[:-1], 0, 1))
    P = _lagrangian_primitive(mu0, s, t)
    hull = _lower_hull(s, P)
    slopes = np.diff(P[hull]) / np.diff(s[hull])
    seg = np.clip(np.searchsorted(s[hull], s[:-1], side="right") - 1, 0, slopes.size - 1)
    return s, slopes[seg]


def burgers_quantiles(mu0, t, nodes=HULL_NODES):
    """X_t on a fine level grid as an empirical measure (beta = inf)."""
    s, X = _hull_quantiles(mu0, t, nodes)
    return EmpiricalMeasure(X[:, None], np.diff(s)).merged()


def _clusters(s, X, rtol=1e-12):
    """Maximal level intervals on which X_t is constant (atoms of mu_t)."""
    scale = max(1.0, float(np.max(np.abs(X))))
    edges = np.nonzero(np.abs(np.diff(X)) > rtol * scale)[0] + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [X.size]])
    out = []
    for a, b in zip(starts, stops):
        mass = s[b] - s[a]
        if b - a > 1:
            out.append((s[a], s[b], X[a], mass))
    return out


def rankine_hugoniot_residual(mu0, t, dt=1e-6, nodes=HULL_NODES, min_mass=1e-3):
    """Max |shock speed - (v_L + v_R)/2| over the atoms present at time ``t``.

    In terms of ``v = 1 - 2F`` the left and right states of an atom with
    level range [a, b] are ``1 - 2a`` and ``1 - 2b``; the atom's speed is
    measured by a centered difference of its position in time.
    """
    s0, X0 = _hull_quantiles(mu0, t - dt, nodes)
    s1, X1 = _hull_quantiles(mu0, t + dt, nodes)
    s, X = _hull_quantiles(mu0, t, nodes)
    worst = 0.0
    for a, b, pos, mass in _clusters(s, X):
        if mass < min_mass:
            continue
        mid = 0.5 * (a + b)
        p0 = X0[min(np.searchsorted(s0, mid) - 1, X0.size - 1)]
        p1 = X1[min(np.searchsorted(s1, mid) - 1, X1.size - 1)]
        speed = (p1 - p0) / (2 * dt)
        rh = 0.5 * ((1 - 2 * a) + (1 - 2 * b))
        worst = max(worst, abs(speed - rh))
    return worst


def _cole_hopf_cdf(mu0, t, beta, xs, ny=1 << 13):
    """F(x, t) = (1 - v)/2 with v from the Cole-Hopf formula (beta < inf)."""
    lo, hi = mu0.support(1e-14)
    width = math.sqrt(2.0 * t / beta)
    pad = 12.0 * width + t
    y = np.linspace(min(lo, xs.min()) - pad, max(hi, xs.max()) + pad, ny)
    V0 = y - 2.0 * mu0.cdf_integral(y) + 2.0 * mu0.cdf_integral(np.array(0.0))
    # exponent -(beta/2) [V0(y) + (x - y)^2 / (2t)]
    expo = -0.5 * beta * (V0[None, :] + (xs[:, None] - y[None, :]) ** 2 / (2.0 * t))
    wts = np.full(ny, y[1] - y[0])
    wts[[0, -1]] *= 0.5
    lw = np.log(wts)[None, :] + expo
    num_pos = logsumexp(lw, b=np.maximum(xs[:, None] - y[None, :], 0.0), axis=1)
    num_neg = logsumexp(lw, b=np.maximum(y[None, :] - xs[:, None], 0.0), axis=1)
    den = logsumexp(lw, axis=1)
    v = (np.exp(num_pos - den) - np.exp(num_neg - den)) / t
    return np.clip(0.5 * (1.0 - v), 0.0, 1.0)


def burgers_entropy(mu0, t, beta=math.inf, M=DEFAULT_M, mass_tol=1e-12, nodes=HULL_NODES,
                    nx=4096):
    """Law at time ``t`` of the aggregation equation with ``w = |x|`` and ``V = 0``.

    ``beta = inf`` returns an :class:`EmpiricalMeasure` (atoms appear where
    mass has aggregated); ``beta < inf`` returns a :class:`QuantileMeasure`
    with ``M`` levels.
    """
    if not isinstance(mu0, InitialMeasure):
        raise TypeError("burgers_entropy expects an InitialMeasure")
    if mu0.family == "normal":
        warnings.warn(f"initial law is not compactly supported; truncating at mass {mass_tol:g}",
                      RuntimeWarning, stacklevel=2)
    if t < 0:
        raise ValueError("t must be >= 0")
    if not math.isfinite(beta):
        return burgers_quantiles(mu0, t, nodes)
    if t == 0:
        return mu0.quantile_measure(M)
    lo, hi = mu0.support(mass_tol)
    width = math.sqrt(2.0 * t / beta)
    xs = np.linspace(lo - 10 * width - t, hi + 10 * width + t, nx)
    F = np.maximum.accumulate(_cole_hopf_cdf(mu0, t, beta, xs))
    levels = (np.arange(M) + 0.5) / M
    keep = np.concatenate([[True], np.diff(F) > 0])
    return QuantileMeasure(np.interp(levels, F[keep], xs[keep]))


def burgers_oracle(mu0, beta=math.inf, M=DEFAULT_M, check_times=(0.25,)):
    sol = OracleSolution("burgers", lambda t: burgers_entropy(mu0, t, beta, M),
                         {"w": "|x|", "V": "0", "beta": beta})
    if not math.isfinite(beta):
        rh = max(rankine_hugoniot_residual(mu0, t) for t in check_times)
        sol.residuals["rankine_hugoniot"] = (rh, 1e-6)
        m = burgers_quantiles(mu0, max(check_times))
        sol.residuals["mass"] = (abs(float(m.weights.sum()) - 1.0), 1e-12)
    return sol


# --------------------------------------------------------------------------
# logarithmic gas equilibrium


def _dyson_grad(U):
    M = U.size
    d = U[:, None] - U[None, :]
    np.fill_diagonal(d, 1.0)
    inv = 1.0 / d
    np.fill_diagonal(inv, 0.0)
    return U - inv.sum(axis=1) / M, d


def _dyson_energy(U):
    M = U.size
    iu = np.triu_indices(M, 1)
    return float(np.mean(U**2) / 2 - np.sum(np.log(U[iu[1]] - U[iu[0]])) / M**2)


def dyson_optimality_residual(U):
    """max_k |U_k - 1/M sum_{l != k} 1/(U_k - U_l)| (stationarity of the discrete energy)."""
    g, _ = _dyson_grad(np.asarray(U, dtype=float))
    return float(np.max(np.abs(g)))


def _semicircle_ppf(s):
    """Quantiles of the density sqrt(2 - x^2)/pi by bisection on the closed-form CDF.

    With x = sqrt(2) sin(phi) the CDF is (phi + sin(phi) cos(phi))/pi + 1/2.
    """
    s = np.asarray(s, dtype=float)
    lo = np.full(s.shape, -np.pi / 2)
    hi = np.full(s.shape, np.pi / 2)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = (mid + np.sin(mid) * np.cos(mid)) / np.pi + 0.5 < s
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return math.sqrt(2.0) * np.sin(0.5 * (lo + hi))


def _solve_dyson(M, tol=1e-12, max_iter=100):
    U = _semicircle_ppf((np.arange(M) + 0.5) / M)
    # start slightly inside the support to keep every gap positive
    U = 0.999 * U
    E = _dyson_energy(U)
    for _ in range(max_iter):
        g, d = _dyson_grad(U)
        if np.max(np.abs(g)) <= tol:
            break
        inv2 = 1.0 / d**2
        np.fill_diagonal(inv2, 0.0)
        H = -inv2 / M
        H[np.diag_indices(M)] = 1.0 + inv2.sum(axis=1) / M
        step = -cho_solve(cho_factor(H), g)
        # symmetrize: the minimizer is odd under k -> M + 1 - k
        step = 0.5 * (step - step[::-1])
        dd = np.diff(step)
        s = 1.0
        neg = dd < 0
        if np.any(neg):
            s = min(1.0, 0.99 * float(np.min(-np.diff(U)[neg] / dd[neg])))
        while True:
            Un = U + s * step
            En = _dyson_energy(Un) if np.all(np.diff(Un) > 0) else math.inf
            if En <= E + 1e-4 * s * float(g @ step) or s < 1e-12:
                break
            s *= 0.5
        U, E = Un, En
    else:
        raise RuntimeError("equilibrium minimization did not converge")
    U = 0.5 * (U - U[::-1])
    return U


def _cache_dir():
    return Path(os.environ.get("CHAOSLAB_CACHE", Path.home() / ".cache" / "chaoslab"))


def dyson_equilibrium(M=4096, cache=True, tol=1e-12):
    """Quantiles of the minimizer of int x^2/2 - 1/2 iint log|x - y| on M levels.

    Damped Newton with symmetrization, started from the semicircle quantiles
    and independent of the JKO solver. Results are cached in
    ``$CHAOSLAB_CACHE`` (default ``~/.cache/chaoslab``).
    """
    key = hashlib.sha256(f"dyson-v1-{M}-{tol}".encode()).hexdigest()[:16]
    path = _cache_dir() / f"dyson_{M}_{key}.npy"
    if cache and path.exists():
        U = np.load(path)
    else:
        U = _solve_dyson(M, tol)
        if cache:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                np.save(path, U)
            except OSError:
                pass
    return QuantileMeasure(U)


def hermite_equilibrium(M):
    """Closed-form discrete minimizer: zeros of the Hermite polynomial H_M over sqrt(M)."""
    x, _ = roots_hermite(M)
    return QuantileMeasure(np.sort(x) / math.sqrt(M))


def semicircle_second_moment():
    val, _ = quad(lambda x: x * x * math.sqrt(2.0 - x * x) / math.pi, -math.sqrt(2), math.sqrt(2))
    return val


def dyson_oracle(M=4096, cache=True):
    U = dyson_equilibrium(M, cache)
    sol = OracleSolution("dyson", lambda t=None: U, {"w": "-log|x|", "V": "x^2/2", "beta": "inf"})
    sol.residuals["optimality"] = (dyson_optimality_residual(U.U), 1e-6)
    return sol


# --------------------------------------------------------------------------
# Hilbert transform


@dataclass(frozen=True)
class HilbertValue:
    value: float
    error: float
    diverged: bool
    sequence: tuple


def _cells_from_quantiles(U):
    """Piecewise-uniform cells (a, b, mass) of a quantile grid, including half-cells."""
    M = U.size
    if M == 1:
        return np.array([U[0]]), np.array([U[0]]), np.array([1.0])
    g = np.diff(U)
    a = np.concatenate([[U[0] - 0.5 * g[0]], U[:-1], [U[-1]]])
    b = np.concatenate([[U[0]], U[1:], [U[-1] + 0.5 * g[-1]]])
    m = np.concatenate([[0.5 / M], np.full(M - 1, 1.0 / M), [0.5 / M]])
    return a, b, m


def _truncated_cells(a, b, m, x, eps):
    """sum over cells of int_{cell, |x-y| >= eps} density/(x - y) dy."""
    total = 0.0
    width = b - a
    point = width <= 0
    if np.any(point):
        d = x - a[point]
        keep = np.abs(d) >= eps
        total += float(np.sum(m[point][keep] / d[keep]))
    a, b, m, width = a[~point], b[~point], m[~point], width[~point]
    dens = m / width
    for lo, hi in ((a, np.minimum(b, x - eps)), (np.maximum(a, x + eps), b)):
        ok = hi > lo
        # int_lo^hi dy/(x - y) = log|x - lo| - log|x - hi|
        total += float(np.sum(dens[ok] * (np.log(np.abs(x - lo[ok])) - np.log(np.abs(x - hi[ok])))))
    return total


def hilbert_transform(mu, x, epsilon_sequence: Optional[Sequence[float]] = None):
    """Principal value of int dmu(y)/(x - y) along a decreasing epsilon sequence.

    Consecutive truncations are combined by first-order Richardson
    extrapolation; the last increment is the error estimate and increments
    that fail to decay set the divergence flag.
    """
    eps = (np.asarray(epsilon_sequence, dtype=float) if epsilon_sequence is not None
           else 0.1 * 0.5 ** np.arange(12))
    if isinstance(mu, QuantileMeasure):
        a, b, m = _cells_from_quantiles(mu.U)
    else:
        if mu.dim != 1:
            raise ValueError("Hilbert transform needs a 1D measure")
        pts = mu.positions[:, 0]
        if np.any(pts == x):
            raise ValueError("x coincides with an atom")
        a = b = pts
        m = mu.weights
    vals = np.array([_truncated_cells(a, b, m, float(x), e) for e in eps])
    if vals.size >= 2:
        ratio = eps[:-1] / eps[1:]
        rich = (ratio * vals[1:] - vals[:-1]) / (ratio - 1.0)
    else:
        rich = vals
    inc = np.abs(np.diff(rich)) if rich.size >= 2 else np.array([0.0])
    # a principal value that exists has raw increments decaying with eps; a
    # logarithmic blow-up keeps them constant
    raw = np.abs(np.diff(vals))
    diverged = bool(raw.size >= 3 and raw[-1] > 0.5 * raw[0])
    return HilbertValue(float(rich[-1]), float(inc[-1]), diverged, tuple(float(v) for v in vals))
