"""Liouville transformation of the weighted Neumann problem.

With p = h*zeta' the flux, w = p / sqrt(h) = sqrt(h)*zeta' solves a Dirichlet
problem -w'' + V w = mu w with V = (3/4)(h'/h)**2 - h''/(2h).  For a
piecewise-linear h the second term lives only at the kinks, as point masses
-jump(h')/(2h) >= 0 (h concave), which are tracked separately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .profile import HeightProfile, merge_grid, norm_x
from .sl_ode import WeightedEigenSolution

# 4-point Gauss-Legendre on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
GL_NODES = 0.5 * (_GL_X + 1.0)
GL_WEIGHTS = 0.5 * _GL_W

# the end set A = [0, A_WIDTH] U [d - A_WIDTH, d]
A_WIDTH = 1e-2


@dataclass(frozen=True)
class LiouvilleData:
    """Transformed eigenfunction w and potential on ``grid``.

    ``V`` holds the smooth part (3/4)(h'/h)**2 at interval midpoints and
    ``V_gauss`` the same at the 4 Gauss points of each interval;
    ``kink_x``/``kink_mass`` are the point masses -jump(h')/(2h) at interior
    kinks.  ``truncation`` is the distance from each end below which w was
    not sampled (0 when the whole interval is used).
    """

    grid: np.ndarray
    w: np.ndarray
    V: np.ndarray
    V_gauss: np.ndarray
    h: np.ndarray
    kink_x: np.ndarray
    kink_mass: np.ndarray
    mu1N: float
    truncation: float
    mu_identity_residual: float = float("nan")

    @property
    def dropped_mass(self) -> float:
        """Total kink contribution sum(mass * w**2) the smooth V leaves out."""
        wk = np.interp(self.kink_x, self.grid, self.w)
        return float(np.sum(self.kink_mass * wk**2))


def _gauss(a, b):
    """Gauss nodes and weights on every interval [a_i, b_i]."""
    dx = (b - a)[:, None]
    return a[:, None] + dx * GL_NODES[None, :], dx * GL_WEIGHTS[None, :]


def _kinks(profile: HeightProfile, grid):
    s = profile.slopes()
    jump = np.diff(s)
    xs = profile.grid[1:-1]
    keep = np.abs(jump) > 1e-12 * (1.0 + np.abs(s[:-1]))
    xs, jump = xs[keep], jump[keep]
    hk = profile(xs)
    if np.any(hk <= 0):
        raise ValueError("h vanishes at an interior kink")
    return xs, -jump / (2.0 * hk)


def transform(profile: HeightProfile, sol: WeightedEigenSolution, truncation: float = 0.0) -> LiouvilleData:
    """w = sqrt(h) zeta' from the recovered flux, plus the potential.

    The flux h*zeta' = -mu * int_0^x h*zeta is continuous and vanishes at both
    ends, so w(0) = w(d) = 0 even where h does.  With ``truncation > 0`` only
    the part of the grid in [truncation, d - truncation] is kept.
    """
    g = sol.grid
    h = profile(g)
    d = g[-1]
    if np.any(h[1:-1] <= 0):
        raise ValueError("h must be positive at interior samples")
    p = sol.active_flux() if sol.zeta is not None else sol.flux
    w = np.zeros_like(p)
    inner = h > 0
    w[inner] = p[inner] / np.sqrt(h[inner])
    # Neumann ends: the flux is zero there, and w -> 0 when h -> 0 as well
    w[0] = w[-1] = 0.0
    if truncation > 0:
        keep = (g >= truncation) & (g <= d - truncation)
        g, h, w = g[keep], h[keep], w[keep]
    slopes = np.diff(h) / np.diff(g)
    # smooth part of V; only interior points are used, where h > 0
    xq, _ = _gauss(g[:-1], g[1:])
    Vq = 0.75 * (slopes[:, None] / profile(xq)) ** 2
    mid = 0.5 * (g[:-1] + g[1:])
    V = 0.75 * (slopes / profile(mid)) ** 2
    kx, km = _kinks(profile, g)
    if truncation > 0:
        sel = (kx > g[0]) & (kx < g[-1])
        kx, km = kx[sel], km[sel]
    data = LiouvilleData(
        grid=g,
        w=w,
        V=V,
        V_gauss=Vq,
        h=h,
        kink_x=kx,
        kink_mass=km,
        mu1N=float(sol.mu1N),
        truncation=float(truncation),
    )
    rq = dirichlet_rayleigh(data)
    object.__setattr__(data, "mu_identity_residual", abs(rq - sol.mu1N) / sol.mu1N)
    return data


def dirichlet_rayleigh(data: LiouvilleData, kinks: bool = True) -> float:
    """(int w'^2 + V w^2 + kink terms) / int w^2 for the piecewise-linear w.

    The potential term uses 4-point Gauss per interval.  ``kinks=False``
    leaves out the point masses, giving the smooth-potential quotient.
    """
    g, w = data.grid, data.w
    dx = np.diff(g)
    den = float(np.sum(dx * (w[:-1] ** 2 + w[:-1] * w[1:] + w[1:] ** 2) / 3.0))
    if not den > 0:
        raise ValueError("zero denominator in the Dirichlet Rayleigh quotient")
    dw = np.diff(w) / dx
    num = float(np.sum(dx * dw**2))
    xq, wq = _gauss(g[:-1], g[1:])
    t = (xq - g[:-1, None]) / dx[:, None]
    wv = (1 - t) * w[:-1, None] + t * w[1:, None]
    num += float(np.sum(wq * data.V_gauss * wv**2))
    if kinks:
        num += data.dropped_mass
    return num / den


def smooth_potential(profile: HeightProfile, x):
    """(3/4)(h'/h)**2 with the one-sided slope; the kink masses are not included."""
    x = np.asarray(x, dtype=float)
    return 0.75 * (profile.derivative(x) / profile(x)) ** 2


@dataclass
class SecondTerm:
    T_A: float
    T_full: float
    T_zeta: float
    zeta_energy: float

    def __iter__(self):
        return iter((self.T_A, self.T_full, self.T_zeta))

    def as_dict(self):
        return dict(self.__dict__)


def _eval_grid(profile: HeightProfile, sol: WeightedEigenSolution | None, extra):
    d = profile.d
    base = profile.grid if sol is None else merge_grid(profile.grid, sol.grid, d)
    return merge_grid(base, np.asarray([x for x in extra if 0 < x < d]), d)


def _check_positive(profile: HeightProfile):
    if np.any(profile.h[1:-1] <= 0):
        raise ValueError("h vanishes inside (0, d)")


def _weighted_integral(profile: HeightProfile, grid, lo, hi):
    """int_lo^hi (h'^2/h) * ||x||^2 by Gauss on the grid intervals."""
    g = grid[(grid >= lo) & (grid <= hi)]
    if len(g) < 2:
        return 0.0
    xq, wq = _gauss(g[:-1], g[1:])
    sl = (np.diff(profile(g)) / np.diff(g))[:, None]
    return float(np.sum(wq * sl**2 / profile(xq) * norm_x(xq, profile.d) ** 2))


def second_term(profile: HeightProfile, sol: WeightedEigenSolution, a_width: float = A_WIDTH) -> SecondTerm:
    """T_A, T_full and T_zeta; also the Dirichlet energy int h*zeta'^2 for ratios.

    T_A integrates (h'^2/h)||x||^2 over [0, a] U [d - a, d], T_full over
    [0, d], and T_zeta = int (3/4)(h'^2/h)(zeta')^2.  Every integral is split
    at the kinks of h so the one-sided slope is exact on each piece.
    """
    _check_positive(profile)
    d = profile.d
    g = _eval_grid(profile, sol, [a_width, d - a_width, d / 2])
    t_a = _weighted_integral(profile, g, 0.0, a_width) + _weighted_integral(profile, g, d - a_width, d)
    t_full = _weighted_integral(profile, g, 0.0, d)
    # zeta' = flux / h from the recovered flux, evaluated on the solver grid
    sg = sol.grid
    p = sol.active_flux()
    xq, wq = _gauss(sg[:-1], sg[1:])
    t = (xq - sg[:-1, None]) / np.diff(sg)[:, None]
    pq = (1 - t) * p[:-1, None] + t * p[1:, None]
    hq = profile(xq)
    dz = pq / hq
    sl = (np.diff(profile(sg)) / np.diff(sg))[:, None]
    t_zeta = float(np.sum(wq * 0.75 * sl**2 / hq * dz**2))
    energy = float(np.sum(wq * hq * dz**2))
    return SecondTerm(T_A=t_a, T_full=t_full, T_zeta=t_zeta, zeta_energy=energy)


def major_term(profile: HeightProfile, upper: float = 0.1) -> float:
    """int_0^upper (h'^2/h)||x||^2, the near-end term that dominates for thin domains."""
    _check_positive(profile)
    g = _eval_grid(profile, None, [upper, profile.d / 2])
    return _weighted_integral(profile, g, 0.0, min(upper, profile.d))


def decomposition_slack(profile: HeightProfile, sol: WeightedEigenSolution, data: LiouvilleData | None = None) -> float:
    """mu1N - (pi^2/d^2 + T_zeta / int h zeta'^2) + residual * mu1N; must be >= 0."""
    data = transform(profile, sol) if data is None else data
    st = second_term(profile, sol)
    lower = np.pi**2 / profile.d**2 + st.T_zeta / st.zeta_energy
    return float(sol.mu1N - lower + data.mu_identity_residual * sol.mu1N)
