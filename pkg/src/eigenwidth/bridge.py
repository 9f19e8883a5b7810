"""From the 2-D eigenfunction to the 1-D weighted problem.

Vertical chords of the mesh give the cross-sectional average ubar; clamping
near the ends and recentring give utilde; eta = h*utilde' + mu1 * int_0^x h*utilde
measures how far utilde is from solving the weighted ODE with the 2-D
eigenvalue.  The report collects those samples together with the ratios the
near-end and integral estimates predict to stay bounded.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .fem2d import MeshSolution, gradients
from .liouville import second_term
from .profile import HeightProfile
from .sl_ode import WeightedEigenSolution

POINCARE_SLACK = 0.05


@dataclass(frozen=True)
class Chords:
    """Vertical chords of a P1 function at abscissas ``x``.

    ``seg_*`` are flat arrays of segments (one per crossed triangle) and
    ``owner`` maps every segment to its sample index.
    """

    x: np.ndarray
    length: np.ndarray
    owner: np.ndarray
    seg_len: np.ndarray
    seg_ua: np.ndarray
    seg_ub: np.ndarray
    seg_tri: np.ndarray

    def integral(self) -> np.ndarray:
        """int u dy along every chord."""
        v = self.seg_len * 0.5 * (self.seg_ua + self.seg_ub)
        return np.bincount(self.owner, weights=v, minlength=len(self.x))

    def integral_sq(self) -> np.ndarray:
        v = self.seg_len * (self.seg_ua**2 + self.seg_ua * self.seg_ub + self.seg_ub**2) / 3.0
        return np.bincount(self.owner, weights=v, minlength=len(self.x))

    def energy_y(self, gy) -> np.ndarray:
        """int (du/dy)^2 dy along every chord from the per-triangle gradient."""
        v = self.seg_len * gy[self.seg_tri] ** 2
        return np.bincount(self.owner, weights=v, minlength=len(self.x))


def slice_mesh(sol: MeshSolution, xs, tol: float = 1e-9) -> Chords:
    """Intersect every vertical line x = xs[i] with the mesh.

    A triangle owns the half-open x-range [xmin, xmax) (closed at the right
    end of the domain), so a vertical edge on the line is counted once.
    """
    mesh = sol.mesh
    xs = np.asarray(xs, dtype=float)
    p = mesh.nodes[mesh.triangles]
    uu = sol.u[mesh.triangles]
    order = np.argsort(p[:, :, 0], axis=1, kind="stable")
    P = np.take_along_axis(p, order[:, :, None], axis=1)
    U = np.take_along_axis(uu, order, axis=1)
    x0, x1, x2 = P[:, 0, 0], P[:, 1, 0], P[:, 2, 0]
    d = mesh.polygon.xmax
    owners, lens, uas, ubs, tris = [], [], [], [], []
    chord = np.zeros(len(xs))

    def cross(i, j, x, sel):
        xa, xb = P[sel, i, 0], P[sel, j, 0]
        dx = xb - xa
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dx > 0, (x - xa) / dx, 0.0)
        y = P[sel, i, 1] + t * (P[sel, j, 1] - P[sel, i, 1])
        u = U[sel, i] + t * (U[sel, j] - U[sel, i])
        return y, u

    for k, x in enumerate(xs):
        if x >= d:
            sel = np.flatnonzero((x0 < x) & (x2 >= x))
        else:
            sel = np.flatnonzero((x0 <= x) & (x2 > x))
        if len(sel) == 0:
            continue
        ya, ua = cross(0, 2, x, sel)
        lower = x < x1[sel]
        yb = np.empty_like(ya)
        ub = np.empty_like(ua)
        if np.any(lower):
            s = sel[lower]
            yb[lower], ub[lower] = cross(0, 1, x, s)
        if np.any(~lower):
            s = sel[~lower]
            yb[~lower], ub[~lower] = cross(1, 2, x, s)
        seg = np.abs(yb - ya)
        owners.append(np.full(len(sel), k))
        lens.append(seg)
        uas.append(ua)
        ubs.append(ub)
        tris.append(sel)
        chord[k] = seg.sum()
    if owners:
        owner = np.concatenate(owners)
        cat = [np.concatenate(a) for a in (lens, uas, ubs)]
        seg_tri = np.concatenate(tris)
    else:
        owner = np.zeros(0, dtype=int)
        cat = [np.zeros(0)] * 3
        seg_tri = np.zeros(0, dtype=int)
    return Chords(xs, chord, owner, cat[0], cat[1], cat[2], seg_tri)


def bridge_grid(d: float, eps: float, n_samples: int = 1024) -> np.ndarray:
    """Uniform grid on [eps, d - eps] with ``n_samples`` cells, plus end pieces of similar spacing."""
    if n_samples < 64:
        raise ValueError("n_samples must be >= 64")
    if not eps < d / 2:
        raise ValueError("domain too thick for the thin pipeline (eps >= d/2)")
    mid = eps + (d - 2 * eps) * (np.arange(n_samples + 1) / n_samples)
    step = (d - 2 * eps) / n_samples
    m = max(2, math.ceil(eps / step))
    left = eps * (np.arange(m) / m)
    right = (d - eps) + eps * (np.arange(1, m + 1) / m)
    right[-1] = d
    mid[-1] = d - eps
    return np.concatenate([left, mid, right])


def cross_sectional_average(sol: MeshSolution, profile: HeightProfile, n_samples: int = 1024, grid=None):
    """ubar(x) = (1/h(x)) int u(x, y) dy on the bridge grid.

    Returns ``(grid, ubar)``.  Samples where the chord degenerates (h = 0 at a
    pointed end) are extrapolated linearly from the two nearest samples.
    """
    d = profile.d
    eps = sol.eps
    xs = bridge_grid(d, eps, n_samples) if grid is None else np.asarray(grid, dtype=float)
    ch = slice_mesh(sol, xs)
    h = profile(xs)
    scale = max(profile.hmax, 1e-300)
    bad = np.abs(ch.length - h) > 1e-8 * scale
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"slicing failure at x = {float(xs[i])!r}: chord {float(ch.length[i])!r} vs h {float(h[i])!r}")
    ubar = np.full(len(xs), np.nan)
    ok = h > 1e-12 * scale
    ubar[ok] = ch.integral()[ok] / h[ok]
    for i in np.flatnonzero(~ok):
        j = (i + 1, i + 2) if i == 0 else (i - 1, i - 2)
        xa, xb = xs[j[0]], xs[j[1]]
        ubar[i] = ubar[j[0]] + (ubar[j[0]] - ubar[j[1]]) * (xs[i] - xa) / (xa - xb)
    return xs, ubar


def weighted_trapezoid(grid, h, f) -> float:
    return float(np.trapezoid(h * f, grid))


def modify_average(ubar, eps: float, profile: HeightProfile, grid):
    """Clamp ubar to its values at eps and d - eps, then remove the h-weighted mean.

    Returns ``(uhat, utilde, c1)``.  ``grid`` must contain eps and d - eps.
    """
    grid = np.asarray(grid, dtype=float)
    d = profile.d
    if not eps < d / 2:
        raise ValueError("domain too thick for the thin pipeline (eps >= d/2)")
    il = np.flatnonzero(np.isclose(grid, eps, rtol=0, atol=1e-12 * d))
    ir = np.flatnonzero(np.isclose(grid, d - eps, rtol=0, atol=1e-12 * d))
    if len(il) == 0 or len(ir) == 0:
        raise ValueError("grid must contain eps and d - eps")
    il, ir = il[0], ir[-1]
    uhat = np.array(ubar, dtype=float)
    uhat[:il] = ubar[il]
    uhat[ir + 1 :] = ubar[ir]
    h = profile(grid)
    c1 = weighted_trapezoid(grid, h, uhat) / weighted_trapezoid(grid, h, np.ones_like(h))
    return uhat, uhat - c1, c1


def _end_indices(grid, eps, d):
    il = int(np.flatnonzero(np.isclose(grid, eps, rtol=0, atol=1e-12 * d))[0])
    ir = int(np.flatnonzero(np.isclose(grid, d - eps, rtol=0, atol=1e-12 * d))[-1])
    return il, ir


def derivative(grid, f, eps: float, d: float, stride: int = 1, breaks=()) -> np.ndarray:
    """f' on the uniform part [eps, d - eps]; 0 outside.

    Central differences over ``stride`` cells on each side.  Where that
    stencil would leave [eps, d - eps] or reach across one of ``breaks``
    (kinks of h, where f'' jumps) a second-order one-sided difference with
    the same stride on the smooth side is used instead; exactly at a break
    the two one-sided values are averaged.  A stride spanning a mesh cell
    keeps the stencil from resolving the kinks a P1 function leaves in the
    averages.
    """
    il, ir = _end_indices(grid, eps, d)
    x = grid[il : ir + 1]
    y = np.asarray(f, dtype=float)[il : ir + 1]
    n = len(x)
    s = int(stride)
    if s < 1 or n < 2 * s + 1:
        raise ValueError(f"stride {stride} does not fit {n} samples on [eps, d - eps]")
    i = np.arange(n)
    fwd = np.full(n, np.nan)
    bwd = np.full(n, np.nan)
    cen = np.full(n, np.nan)
    a = i[i + 2 * s < n]
    fwd[a] = (-3 * y[a] + 4 * y[a + s] - y[a + 2 * s]) / (x[a + 2 * s] - x[a])
    b = i[i - 2 * s >= 0]
    bwd[b] = (3 * y[b] - 4 * y[b - s] + y[b - 2 * s]) / (x[b] - x[b - 2 * s])
    c = i[(i >= s) & (i < n - s)]
    cen[c] = (y[c + s] - y[c - s]) / (x[c + s] - x[c - s])
    du = cen.copy()
    du[:s] = fwd[:s]
    du[n - s :] = bwd[n - s :]
    tol = 1e-9 * (x[-1] - x[0])
    for xb in np.asarray(breaks, dtype=float):
        if not (x[0] + tol < xb < x[-1] - tol):
            continue
        lo = np.clip(i - s, 0, n - 1)
        hi = np.clip(i + s, 0, n - 1)
        at = np.abs(x - xb) <= tol
        left = (x > xb + tol) & (x[lo] < xb - tol)  # stencil reaches back across
        right = (x < xb - tol) & (x[hi] > xb + tol)  # stencil reaches forward across
        du[left] = np.where(np.isfinite(fwd[left]), fwd[left], du[left])
        du[right] = np.where(np.isfinite(bwd[right]), bwd[right], du[right])
        both = at & np.isfinite(fwd) & np.isfinite(bwd)
        du[both] = 0.5 * (fwd[both] + bwd[both])
    out = np.zeros(len(grid))
    out[il : ir + 1] = du
    return out


def profile_breaks(profile: HeightProfile) -> np.ndarray:
    """Interior abscissas where the slope of h jumps."""
    sl = profile.slopes()
    jump = np.abs(np.diff(sl)) > 1e-12 * (1.0 + np.abs(sl[:-1]))
    return profile.grid[1:-1][jump]


def mesh_stride(sol: MeshSolution, grid, eps: float) -> int:
    """Smallest stride whose stencil half-width covers the mesh spacing."""
    il, ir = _end_indices(grid, eps, sol.d)
    step = (grid[ir] - grid[il]) / (ir - il)
    spacing = sol.mesh.base_edge / 2**sol.mesh.level
    if not math.isfinite(spacing):
        return 1
    return max(1, math.ceil(spacing / step - 1e-9))


def error_term(utilde, profile: HeightProfile, mu1: float, grid, eps: float, stride: int = 1) -> np.ndarray:
    """eta = h*utilde' + mu1 * int_0^x h*utilde on the whole grid (cumulative trapezoid)."""
    grid = np.asarray(grid, dtype=float)
    h = profile(grid)
    du = derivative(grid, utilde, eps, profile.d, stride, profile_breaks(profile))
    running = cumulative_trapezoid(h * utilde, grid, initial=0.0)
    return h * du + mu1 * running


def eigenvalue_identity_residual(mu1: float, utilde, eta, profile: HeightProfile, grid, eps: float, du=None, stride: int = 1):
    """|mu1 - (int h utilde'^2 - int eta utilde') / int h utilde^2| / mu1 by trapezoid sums.

    Returns ``(residual, parts)`` with the three integrals in ``parts``.
    """
    grid = np.asarray(grid, dtype=float)
    h = profile(grid)
    du = derivative(grid, utilde, eps, profile.d, stride, profile_breaks(profile)) if du is None else np.asarray(du)
    # utilde' vanishes on the clamped ends and jumps at eps and d - eps, so the
    # integrals carrying it run over the middle piece only
    il, ir = _end_indices(grid, eps, profile.d)
    mid = slice(il, ir + 1)
    a = float(np.trapezoid(h[mid] * du[mid] ** 2, grid[mid]))
    b = float(np.trapezoid(eta[mid] * du[mid], grid[mid]))
    c = float(np.trapezoid(h * utilde**2, grid))
    if c < 1e-14:
        raise ValueError("int h*utilde^2 is too small for the identity")
    value = (a - b) / c
    return abs(mu1 - value) / mu1, {"int_h_du2": a, "int_eta_du": b, "int_h_u2": c, "value": value}


def zeta_on(grid, sol_ode: WeightedEigenSolution, profile: HeightProfile):
    """zeta and zeta' (flux / h, exact 0 at vanishing ends) interpolated onto ``grid``."""
    z = sol_ode.active()
    p = sol_ode.active_flux()
    zg = np.interp(grid, sol_ode.grid, z)
    pg = np.interp(grid, sol_ode.grid, p)
    h = profile(grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        dz = np.where(h > 0, pg / h, 0.0)
    return zg, dz


@dataclass
class Gaps:
    sup_u: float
    sup_du: float
    ratio_u: float
    ratio_du: float

    @property
    def total_ratio(self) -> float:
        return self.ratio_u + self.ratio_du


def ode_pde_gap(utilde, sol_ode: WeightedEigenSolution, profile: HeightProfile, grid, eps: float, stride: int = 1) -> Gaps:
    """sup |utilde - zeta| over [0, d] and sup |utilde' - zeta'| over [eps, d - eps]."""
    grid = np.asarray(grid, dtype=float)
    zg, dz = zeta_on(grid, sol_ode, profile)
    il, ir = _end_indices(grid, eps, profile.d)
    du = derivative(grid, utilde, eps, profile.d, stride, profile_breaks(profile))
    su = float(np.max(np.abs(utilde - zg)))
    sd = float(np.max(np.abs(du[il : ir + 1] - dz[il : ir + 1])))
    return Gaps(sup_u=su, sup_du=sd, ratio_u=su / eps, ratio_du=sd / eps)


def vertical_energy(sol: MeshSolution):
    """(E_y, E_y / (eps * area)) with E_y the integral of (du/dy)^2."""
    g = gradients(sol.mesh, sol.u)
    e_y = float(sol.mesh.areas() @ g[:, 1] ** 2)
    return e_y, e_y / (sol.eps * sol.polygon.area())


def poincare_slices(sol: MeshSolution, chords: Chords, eps: float):
    """Worst ratio int (u - ubar)^2 / ((eps^2/pi^2) int u_y^2) over chords.

    Chords with no variation (both sides below 1e-14 of the scale) are skipped.
    """
    gy = gradients(sol.mesh, sol.u)[:, 1]
    lhs_sq = chords.integral_sq()
    mean = np.zeros(len(chords.x))
    ok = chords.length > 0
    mean[ok] = chords.integral()[ok] / chords.length[ok]
    lhs = lhs_sq - mean**2 * chords.length
    rhs = (eps**2 / math.pi**2) * chords.energy_y(gy)
    floor = 1e-14 * max(1.0, float(np.max(lhs_sq)))
    use = (rhs > floor) | (lhs > floor)
    if not np.any(use):
        return 0.0
    with np.errstate(divide="ignore"):
        r = np.where(rhs[use] > 0, np.maximum(lhs[use], 0) / rhs[use], np.inf)
    return float(r.max())


@dataclass
class ImprovedEta:
    r_eta10: float
    r_int10: float
    int_abs_eta_du: float


def improved_eta_report(
    sol: MeshSolution,
    profile: HeightProfile,
    utilde,
    eta,
    grid,
    chords: Chords,
    t_full: float,
    stride: int = 1,
) -> ImprovedEta:
    """Ratios of |eta| and int |eta utilde'| to their near-end and integral bounds.

    The slice energy int_{Omega_x} |D_y u|^2 is taken along the exact chord
    at every sample.
    """
    eps = sol.eps
    d = profile.d
    grid = np.asarray(grid, dtype=float)
    il, ir = _end_indices(grid, eps, d)
    sl = slice(il, ir + 1)
    h = profile(grid)
    # one-sided slope of h; at a kink take the larger magnitude of the two
    hp = np.maximum(np.abs(profile.derivative(grid)), np.abs(profile.derivative(np.maximum(grid - 1e-12 * d, 0.0))))
    gy = gradients(sol.mesh, sol.u)[:, 1]
    ey = chords.energy_y(gy)
    bound = hp * np.sqrt(h) * np.sqrt(ey) + h * eps**3
    num = np.abs(eta)
    keep = np.zeros(len(grid), dtype=bool)
    keep[sl] = True
    keep &= ~((num < 1e-14) & (bound < 1e-14))
    with np.errstate(divide="ignore"):
        r = np.where(bound[keep] > 0, num[keep] / bound[keep], np.inf)
    du = derivative(grid, utilde, eps, d, stride, profile_breaks(profile))
    integral = float(np.trapezoid(np.abs(eta[sl] * du[sl]), grid[sl]))
    V = profile.volume
    den = eps**1.5 * math.sqrt(V) * math.sqrt(max(t_full, 0.0)) + V * eps**3
    return ImprovedEta(r_eta10=float(r.max()) if len(r) else 0.0, r_int10=integral / den, int_abs_eta_du=integral)


@dataclass
class BridgeReport:
    grid: np.ndarray
    ubar: np.ndarray
    uhat: np.ndarray
    utilde: np.ndarray
    c1: float
    eta: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    mu1: float
    mu1N: float
    eps: float
    d: float
    volume: float
    gaps: Gaps
    identity_residual: float
    identity_parts: dict
    r_eta5: float
    r_vert: float
    E_y: float
    r_eta10: float
    r_int10: float
    poincare_ratio: float
    mean_residual: float
    eta_end_mismatch: float
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        """Scalar fields only (JSON friendly)."""
        out = {
            "mu1": self.mu1,
            "mu1N": self.mu1N,
            "eps": self.eps,
            "d": self.d,
            "volume": self.volume,
            "c1": self.c1,
            "c1_ratio": abs(self.c1) / self.eps**3,
            "gap_u": self.gaps.sup_u,
            "gap_du": self.gaps.sup_du,
            "r_gap": self.gaps.total_ratio,
            "identity_residual": self.identity_residual,
            "r_eta5": self.r_eta5,
            "r_vert": self.r_vert,
            "E_y": self.E_y,
            "r_eta10": self.r_eta10,
            "r_int10": self.r_int10,
            "poincare_ratio": self.poincare_ratio,
            "mean_residual": self.mean_residual,
            "eta_end_mismatch": self.eta_end_mismatch,
        }
        out.update(self.identity_parts)
        out.update(self.extra)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "ubar", "utilde", "zeta", "eta", "xi"])
            for row in zip(self.grid, self.ubar, self.utilde, self.zeta, self.eta, self.xi):
                w.writerow([repr(float(v)) for v in row])


def build_report(
    sol: MeshSolution,
    profile: HeightProfile,
    sol_ode: WeightedEigenSolution,
    n_samples: int = 1024,
) -> BridgeReport:
    """Run every bridge computation for one domain.

    ``profile`` and ``sol_ode`` must describe ``sol.polygon`` (the mesh
    solution may have mirrored the frame).
    """
    eps = sol.eps
    d = profile.d
    grid = bridge_grid(d, eps, n_samples)
    chords = slice_mesh(sol, grid)
    _, ubar = cross_sectional_average(sol, profile, grid=grid)
    uhat, utilde, c1 = modify_average(ubar, eps, profile, grid)
    stride = mesh_stride(sol, grid, eps)
    du = derivative(grid, utilde, eps, d, stride, profile_breaks(profile))
    eta = error_term(utilde, profile, sol.mu1, grid, eps, stride)
    h = profile(grid)
    V = profile.volume
    res, parts = eigenvalue_identity_residual(sol.mu1, utilde, eta, profile, grid, eps, du=du)
    ode = sol_ode.with_zeta(float(utilde[0]))
    gaps = ode_pde_gap(utilde, ode, profile, grid, eps, stride)
    zg, _ = zeta_on(grid, ode, profile)
    il, ir = _end_indices(grid, eps, d)
    mid = slice(il, ir + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r5 = np.abs(eta[mid]) / (h[mid] * eps)
    e_y, r_vert = vertical_energy(sol)
    st = second_term(profile, ode)
    imp = improved_eta_report(sol, profile, utilde, eta, grid, chords, st.T_full, stride)
    # eta at d - eps from the right-hand side: h utilde' - mu1 int_{d-eps}^d h utilde
    tail = float(np.trapezoid(h[ir:] * utilde[ir:], grid[ir:]))
    eta_right = h[ir] * du[ir] - sol.mu1 * tail
    mismatch = abs(eta_right - eta[ir]) / max(1.0, abs(eta[ir]))
    return BridgeReport(
        grid=grid,
        ubar=ubar,
        uhat=uhat,
        utilde=utilde,
        c1=float(c1),
        eta=eta,
        zeta=zg,
        xi=utilde - zg,
        mu1=sol.mu1,
        mu1N=sol_ode.mu1N,
        eps=eps,
        d=d,
        volume=V,
        gaps=gaps,
        identity_residual=res,
        identity_parts=parts,
        r_eta5=float(np.nanmax(r5)),
        r_vert=r_vert,
        E_y=e_y,
        r_eta10=imp.r_eta10,
        r_int10=imp.r_int10,
        poincare_ratio=poincare_slices(sol, chords, eps),
        mean_residual=abs(weighted_trapezoid(grid, h, utilde)) / V,
        eta_end_mismatch=mismatch,
        extra={"T_full": st.T_full, "int_abs_eta_du": imp.int_abs_eta_du, "stride": stride},
    )


def identity_at(sol: MeshSolution, profile: HeightProfile, n_samples: int = 1024) -> float:
    """Only the eigenvalue identity residual, for refinement studies."""
    eps = sol.eps
    grid = bridge_grid(profile.d, eps, n_samples)
    _, ubar = cross_sectional_average(sol, profile, grid=grid)
    _, utilde, _ = modify_average(ubar, eps, profile, grid)
    stride = mesh_stride(sol, grid, eps)
    eta = error_term(utilde, profile, sol.mu1, grid, eps, stride)
    return eigenvalue_identity_residual(sol.mu1, utilde, eta, profile, grid, eps, stride=stride)[0]
