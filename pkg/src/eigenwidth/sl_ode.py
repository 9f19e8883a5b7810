"""Weighted Neumann problem -(h phi')' = mu h phi on [0, d].

The main solver is a conforming piecewise-linear Galerkin method; a shooting
integrator gives an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from ._eigen import SolverError, smallest_nonconstant
from .profile import HeightProfile, merge_grid, norm_x, regularize, uniform_points

GAUSS2 = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))
REGULARIZATION_KS = (100, 1000, 10000)


@dataclass(frozen=True)
class WeightedEigenSolution:
    mu1N: float
    grid: np.ndarray
    phi: np.ndarray
    x0: float
    residual: float
    zeta: np.ndarray | None = None
    flux: np.ndarray | None = None
    extrapolation: dict = field(default_factory=dict)

    @property
    def slopes(self) -> np.ndarray:
        """Per-element derivative of phi."""
        return np.diff(self.phi) / np.diff(self.grid)

    def with_zeta(self, utilde0: float) -> "WeightedEigenSolution":
        """Attach zeta = -utilde0 * phi, i.e. the copy with zeta(0) = utilde0."""
        return replace(self, zeta=-utilde0 * self.phi)

    def active(self) -> np.ndarray:
        return self.phi if self.zeta is None else self.zeta

    def active_flux(self) -> np.ndarray:
        """h * (eigenfunction)' at the nodes, matching :meth:`active`."""
        if self.zeta is None:
            return self.flux
        return self.flux * (self.zeta[0] / self.phi[0])


def _element_weights(g, h):
    """Per-element 2-point Gauss nodes (as local coordinates) and h values there."""
    dx = np.diff(g)
    hq = [(1 - s) * h[:-1] + s * h[1:] for s in GAUSS2]
    return dx, hq


def assemble(grid, h):
    """Weighted stiffness and mass matrices of the P1 space on ``grid``.

    Both use 2-point Gauss per element, exact for linear ``h``.
    """
    g = np.asarray(grid, dtype=float)
    h = np.asarray(h, dtype=float)
    n = len(g)
    dx, hq = _element_weights(g, h)
    kel = 0.5 * (hq[0] + hq[1]) / dx
    # mass: sum_q w_q h_q N_a(s_q) N_b(s_q) dx with w_q = 1/2
    m00 = sum(0.5 * hqi * (1 - s) ** 2 for hqi, s in zip(hq, GAUSS2)) * dx
    m11 = sum(0.5 * hqi * s**2 for hqi, s in zip(hq, GAUSS2)) * dx
    m01 = sum(0.5 * hqi * s * (1 - s) for hqi, s in zip(hq, GAUSS2)) * dx
    i = np.arange(n - 1)
    rows = np.concatenate([i, i + 1, i, i + 1])
    cols = np.concatenate([i, i + 1, i + 1, i])
    K = sp.coo_matrix((np.concatenate([kel, kel, -kel, -kel]), (rows, cols)), shape=(n, n)).tocsc()
    M = sp.coo_matrix((np.concatenate([m00, m11, m01, m01]), (rows, cols)), shape=(n, n)).tocsc()
    return K, M


def weighted_integral(grid, h, f, g=None) -> float:
    """2-point Gauss integral of h*f*g for piecewise-linear h, f, g."""
    x = np.asarray(grid, dtype=float)
    dx = np.diff(x)
    g = f if g is None else g
    tot = 0.0
    for s in GAUSS2:
        hq = (1 - s) * h[:-1] + s * h[1:]
        fq = (1 - s) * f[:-1] + s * f[1:]
        gq = (1 - s) * g[:-1] + s * g[1:]
        tot += 0.5 * float(np.sum(hq * fq * gq * dx))
    return tot


def weighted_mean_zero(grid, h, f):
    """Subtract the h-weighted mean from ``f``."""
    one = np.ones_like(f)
    return f - weighted_integral(grid, h, f, one) / weighted_integral(grid, h, one, one)


def rayleigh_quotient(profile: HeightProfile, f, grid=None) -> float:
    """Weighted Rayleigh quotient of a sampled function.

    ``f`` lives on ``grid`` (default the profile grid) and is projected onto
    the h-weighted mean-zero space first.
    """
    g = profile.grid if grid is None else np.asarray(grid, dtype=float)
    h = profile(g)
    f = np.asarray(f, dtype=float)
    f = weighted_mean_zero(g, h, f)
    den = weighted_integral(g, h, f)
    if not den > 1e-300:
        raise ValueError("degenerate test function")
    slope = np.diff(f) / np.diff(g)
    num = float(np.sum(0.5 * (h[:-1] + h[1:]) * slope**2 * np.diff(g)))
    return num / den


def _flux(grid, h, phi, mu):
    """Recovered flux h*phi' at nodes: -mu times the running integral of h*phi."""
    dx = np.diff(grid)
    inc = np.zeros(len(dx))
    for s in GAUSS2:
        inc += 0.5 * ((1 - s) * h[:-1] + s * h[1:]) * ((1 - s) * phi[:-1] + s * phi[1:]) * dx
    return -mu * np.concatenate([[0.0], np.cumsum(inc)])


def _zero_crossing(grid, phi) -> float:
    idx = np.flatnonzero((phi[:-1] < 0) & (phi[1:] >= 0))
    if len(idx) == 0:
        return float("nan")
    i = idx[0]
    return float(grid[i] - phi[i] * (grid[i + 1] - grid[i]) / (phi[i + 1] - phi[i]))


def _galerkin(grid, h, tol=1e-12):
    d = grid[-1]
    K, M = assemble(grid, h)
    # sin(pi x / d) is orthogonal to the answer for symmetric weights
    start = -np.cos(np.pi * grid / d)
    res = smallest_nonconstant(K, M, start, tol=tol, maxiter=400, block=3)
    phi = res.vector / -res.vector[0]
    return res.value, phi, res.residual


def solve_weighted_neumann(
    profile: HeightProfile,
    n_elements: int = 2048,
    regularized: bool | None = None,
) -> WeightedEigenSolution:
    """First nonzero eigenpair of the weighted Neumann problem.

    The grid is the profile grid merged with ``n_elements`` uniform cells.
    When h vanishes at an end (or ``regularized`` is True) the eigenvalue is
    extrapolated from the lifted weights h_k, k in ``REGULARIZATION_KS``,
    linearly in 1/k; the eigenfunction is the Galerkin one for h itself,
    which remains well posed because the weighted forms stay definite.

    The lift is applied to h / max h.  The eigenvalue does not see the scale
    of h, and without this a fixed 1/k swamps thin profiles (h of order
    the width) long before k reaches its largest value.
    """
    if n_elements < 16:
        raise ValueError("n_elements must be >= 16")
    d = profile.d
    grid = merge_grid(profile.grid, uniform_points(d, n_elements), d)
    h = profile(grid)
    if not np.any(h > 0):
        raise ValueError("weight vanishes identically")
    if np.any(h[1:-1] <= 0):
        raise ValueError("weight must be positive inside (0, d)")

    mu, phi, resid = _galerkin(grid, h)
    extra = {"direct": mu}
    degenerate = h[0] == 0.0 or h[-1] == 0.0
    if regularized is None:
        regularized = degenerate
    if regularized:
        mus = []
        unit = profile.scaled(1.0 / profile.hmax)
        for k in REGULARIZATION_KS:
            hk = regularize(unit, k)(grid)
            mus.append(_galerkin(grid, hk)[0])
        diffs = np.diff(mus)
        if not (np.all(diffs <= 0) or np.all(diffs >= 0)):
            raise SolverError(f"regularization failure: non-monotone mu(k) {mus}")
        t1, t2 = 1.0 / REGULARIZATION_KS[-2], 1.0 / REGULARIZATION_KS[-1]
        mu_ex = mus[-1] - (mus[-2] - mus[-1]) * t2 / (t1 - t2)
        extra.update({f"k={k}": v for k, v in zip(REGULARIZATION_KS, mus)})
        extra["extrapolated"] = mu_ex
        mu = mu_ex

    return WeightedEigenSolution(
        mu1N=float(mu),
        grid=grid,
        phi=phi,
        x0=_zero_crossing(grid, phi),
        residual=float(resid),
        flux=_flux(grid, h, phi, extra["direct"]),
        extrapolation=extra,
    )


def shooting_cross_check(
    profile: HeightProfile,
    delta: float | None = None,
    bracket=(math.pi**2 / 8, 50.0),
    rtol: float = 1e-11,
    xtol: float = 1e-11,
) -> float:
    """Eigenvalue by shooting on (phi, p = h phi') from x = delta.

    Bisection on mu uses the oscillation count: below the first eigenvalue
    phi has no zero, or one zero with p(d - delta) > 0.
    """
    d = profile.d
    if delta is None:
        delta = 0.0 if (profile.h[0] > 0 and profile.h[-1] > 0) else 1e-6 * d
    a, b = delta, d - delta
    if not np.all(profile([a, b]) > 0):
        raise ValueError("weight must be positive at the truncation points")
    knots = profile.grid[(profile.grid > a) & (profile.grid < b)]
    # integrate piece by piece between kinks of h so the RHS stays smooth
    if len(knots) > 64:
        knots = np.array([])
    pieces = np.concatenate([[a], knots, [b]])

    def run(mu):
        y = np.array([-1.0, 0.0])
        zeros = 0
        for lo, hi in zip(pieces[:-1], pieces[1:]):

            def rhs(x, y):
                hx = np.interp(x, profile.grid, profile.h)
                return [y[1] / hx, -mu * hx * y[0]]

            def ev(x, y):
                return y[0]

            sol = solve_ivp(rhs, (lo, hi), y, method="DOP853", rtol=rtol, atol=1e-13, events=ev)
            zeros += len(sol.t_events[0])
            y = sol.y[:, -1]
        return zeros, y[1]

    def below(mu):
        z, p = run(mu)
        return z == 0 or (z == 1 and p > 0)

    lo, hi = bracket
    if not below(lo) or below(hi):
        raise SolverError("shooting bracket does not contain the first eigenvalue")
    while hi - lo > xtol * hi:
        mid = 0.5 * (lo + hi)
        if below(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class GradientReport:
    min_slope: float
    ratio_min: float
    ratio_max: float
    x0: float
    x0_ok: bool
    sup_abs: float

    def as_dict(self):
        return dict(self.__dict__)


def verify_gradient_bounds(sol: WeightedEigenSolution, profile: HeightProfile, near: float = 1e-2) -> GradientReport:
    """Monotonicity, linear growth of phi' near both ends, zero location, sup |phi|."""
    g = sol.grid
    d = g[-1]
    h = profile(g)
    slopes = sol.slopes
    # phi' at nodes from the recovered flux, exact zero at the ends
    with np.errstate(divide="ignore", invalid="ignore"):
        dphi = np.where(h > 0, sol.flux / h, np.nan)
    nx = norm_x(g, d)
    sel = (nx > 0) & (nx <= near) & np.isfinite(dphi)
    ratios = dphi[sel] / nx[sel]
    lim = 10.0 ** (-profile.n)
    return GradientReport(
        min_slope=float(slopes.min()),
        ratio_min=float(ratios.min()) if len(ratios) else float("nan"),
        ratio_max=float(ratios.max()) if len(ratios) else float("nan"),
        x0=sol.x0,
        x0_ok=bool(lim <= sol.x0 <= d - lim),
        sup_abs=float(np.abs(sol.phi).max()),
    )


@dataclass
class L2Report:
    int_h_phi2: float
    int_h_dphi2: float
    r1: float
    r2: float
    ibp_residual: float

    def as_dict(self):
        return dict(self.__dict__)


def l2_bounds(sol: WeightedEigenSolution, profile: HeightProfile) -> L2Report:
    """Weighted L2 norms of phi and phi' and their ratios to the volume."""
    g = sol.grid
    h = profile(g)
    a = weighted_integral(g, h, sol.phi)
    slopes = sol.slopes
    b = float(np.sum(0.5 * (h[:-1] + h[1:]) * slopes**2 * np.diff(g)))
    mu = sol.extrapolation.get("direct", sol.mu1N)
    V = profile.volume
    return L2Report(
        int_h_phi2=a,
        int_h_dphi2=b,
        r1=a / V,
        r2=b / V,
        ibp_residual=abs(b - mu * a) / (mu * a),
    )
