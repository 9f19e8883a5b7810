"""Height profiles h(x) = |Omega_x| on [0, d] and the boundary graphs h_-, h_+."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import ConvexPolygon, projective_width, slice_at, vertex_abscissas


@dataclass(frozen=True)
class HeightProfile:
    """Piecewise-linear weight on a strictly increasing grid from 0 to d.

    ``n`` is the ambient dimension, so ``h**(1/(n-1))`` is the concave
    quantity.  ``stale`` marks profiles whose ``h`` no longer equals
    ``h_plus - h_minus`` (after regularization).
    """

    grid: np.ndarray
    h: np.ndarray
    h_minus: np.ndarray
    h_plus: np.ndarray
    n: int = 2
    stale: bool = False

    def __post_init__(self):
        for name in ("grid", "h", "h_minus", "h_plus"):
            a = np.asarray(getattr(self, name), dtype=float).copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        g = self.grid
        if g.ndim != 1 or len(g) < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("profile grid must be strictly increasing with >= 2 points")
        if g[0] != 0.0:
            raise ValueError("profile grid must start at 0")
        if not (len(self.h) == len(self.h_minus) == len(self.h_plus) == len(g)):
            raise ValueError("profile arrays must match the grid")
        if np.any(self.h < 0):
            raise ValueError("negative height")
        if not np.any(self.h > 0):
            raise ValueError("profile height vanishes identically")

    @property
    def d(self) -> float:
        return float(self.grid[-1])

    @property
    def volume(self) -> float:
        """Integral of h, exact for the piecewise-linear interpretation."""
        return float(np.trapezoid(self.h, self.grid))

    @property
    def tau0(self) -> float:
        """Leftmost abscissa where h is maximal."""
        hmax = self.h.max()
        return float(self.grid[np.flatnonzero(self.h >= hmax * (1 - 1e-12))[0]])

    @property
    def hmax(self) -> float:
        return float(self.h.max())

    def slopes(self) -> np.ndarray:
        """Per-interval slope of h."""
        return np.diff(self.h) / np.diff(self.grid)

    def __call__(self, x):
        return np.interp(x, self.grid, self.h)

    def derivative(self, x):
        """One-sided (right) slope of h at ``x``; the left slope at ``x = d``."""
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.grid, x, side="right") - 1, 0, len(self.grid) - 2)
        return self.slopes()[i]

    def norm(self, x):
        return norm_x(x, self.d)

    def refined(self, points) -> "HeightProfile":
        """Same profile on ``grid`` merged with ``points`` (interpolated)."""
        g = merge_grid(self.grid, np.asarray(points, dtype=float), self.d)
        return replace(
            self,
            grid=g,
            h=np.interp(g, self.grid, self.h),
            h_minus=np.interp(g, self.grid, self.h_minus),
            h_plus=np.interp(g, self.grid, self.h_plus),
        )

    def scaled(self, c: float) -> "HeightProfile":
        return replace(self, h=c * self.h, h_minus=c * self.h_minus, h_plus=c * self.h_plus)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "h", "h_minus", "h_plus"])
            for row in zip(self.grid, self.h, self.h_minus, self.h_plus):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, n: int = 2) -> "HeightProfile":
        rows = list(csv.DictReader(Path(path).read_text().splitlines()))
        if not rows:
            raise ValueError(f"empty profile file {path}")
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        x, h = col("x"), col("h")
        hm = col("h_minus") if "h_minus" in rows[0] else np.zeros_like(h)
        hp = col("h_plus") if "h_plus" in rows[0] else h.copy()
        return cls(grid=x - x[0], h=h, h_minus=hm, h_plus=hp, n=n)


def merge_grid(base, extra, d, rel_tol=1e-9):
    """Union of two sorted grids on [0, d].

    Points of ``extra`` closer than ``rel_tol * d`` to a point of ``base``
    are dropped so that no sliver intervals appear.
    """
    base = np.asarray(base, dtype=float)
    extra = np.asarray(extra, dtype=float)
    extra = extra[(extra > 0) & (extra < d)]
    if len(extra):
        idx = np.clip(np.searchsorted(base, extra), 1, len(base) - 1)
        gap = np.minimum(np.abs(extra - base[idx - 1]), np.abs(base[idx] - extra))
        extra = extra[gap > rel_tol * d]
    return np.unique(np.concatenate([base, extra]))


def uniform_points(d: float, n: int) -> np.ndarray:
    """``n + 1`` uniform points; nested under doubling of ``n`` (bitwise)."""
    return d * (np.arange(n + 1) / n)


def profile_from_function(f, d: float, samples: int = 2048, n: int = 2) -> HeightProfile:
    """Synthetic weight sampled on a uniform grid (no boundary graphs)."""
    g = uniform_points(d, samples)
    h = np.asarray(f(g), dtype=float) * np.ones_like(g)
    return HeightProfile(grid=g, h=h, h_minus=np.zeros_like(h), h_plus=h.copy(), n=n)


def build_profile(poly: ConvexPolygon, extra_samples: int = 0) -> HeightProfile:
    """Sample h, h_- and h_+ of a w-framed polygon.

    The grid contains every vertex abscissa, so the piecewise-linear profile
    is exact everywhere.
    """
    if extra_samples < 0:
        raise ValueError("extra_samples must be >= 0")
    x0, d = poly.xmin, poly.xmax
    eps, _ = projective_width(poly)
    ys = poly.vertices[:, 1]
    if x0 != 0.0 or ys.min() != 0.0 or abs(ys.max() - eps) > 1e-9 * max(eps, 1.0):
        raise ValueError("polygon is not in the w-frame; call normalize_w_frame first")
    knots = vertex_abscissas(poly)
    grid = merge_grid(knots, uniform_points(d, extra_samples) if extra_samples else [], d)
    hm, hp = slice_at(poly, grid)
    return HeightProfile(grid=grid, h=hp - hm, h_minus=hm, h_plus=hp, n=2)


def derivative_identity_residual(profile: HeightProfile) -> float:
    """Worst per-interval mismatch of |h'| against |h_+'| + |h_-'|, relative to 1 + |h'|."""
    dx = np.diff(profile.grid)
    s = np.diff(profile.h) / dx
    sp = np.diff(profile.h_plus) / dx
    sm = np.diff(profile.h_minus) / dx
    r = np.abs(np.abs(s) - (np.abs(sp) + np.abs(sm))) / (1.0 + np.abs(s))
    return float(r.max())


def concavity_defect(profile: HeightProfile) -> float:
    """Largest positive second divided difference of h**(1/(n-1))."""
    g = profile.grid
    q = profile.h ** (1.0 / (profile.n - 1))
    if len(g) < 3:
        return 0.0
    s = np.diff(q) / np.diff(g)
    dd = np.diff(s) / (0.5 * (g[2:] - g[:-2]))
    return float(max(dd.max(), 0.0))


def regularize(profile: HeightProfile, k: int) -> HeightProfile:
    """Lift the weight: h_k = (h**(1/(n-1)) + 1/k)**(n-1).

    Boundary graphs are kept but flagged stale.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    p = 1.0 / (profile.n - 1)
    hk = (profile.h**p + 1.0 / k) ** (profile.n - 1)
    return replace(profile, h=hk, stale=True)


def norm_x(x, d: float):
    """Distance to the nearer end of [0, d]."""
    xa = np.asarray(x, dtype=float)
    tol = 1e-12 * max(1.0, d)
    if np.any(xa < -tol) or np.any(xa > d + tol):
        raise ValueError(f"x out of range [0, {d}]")
    r = np.clip(np.minimum(xa, d - xa), 0.0, None)
    return float(r) if r.ndim == 0 else r
