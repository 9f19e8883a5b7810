"""Convex polygon primitives: diameter, width, projective width, slicing and
the width-aligned coordinate frame used by every downstream module.

All polygons are immutable counterclockwise vertex arrays.  Widths are
computed over edge-normal candidate directions, which is exact for polygons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

COLLINEAR_TOL = 1e-12
TIE_TOL = 1e-12


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (
        b[..., 0] - o[..., 0]
    )


def signed_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _clean_vertices(vertices) -> np.ndarray:
    v = np.array(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise ValueError("vertices must be an (n, 2) array")
    if not np.all(np.isfinite(v)):
        raise ValueError("vertices must be finite")
    # drop consecutive duplicates (including wrap-around)
    keep = np.any(v != np.roll(v, 1, axis=0), axis=1)
    v = v[keep] if keep.any() else v[:1]
    if len(v) < 3:
        raise ValueError("degenerate polygon: fewer than 3 distinct vertices")
    area = signed_area(v)
    scale = float(np.max(np.ptp(v, axis=0)))
    if scale == 0.0 or abs(area) <= COLLINEAR_TOL * scale * scale:
        raise ValueError("degenerate polygon: zero area")
    if area < 0:
        v = v[::-1].copy()

    # merge collinear vertices; repeat until stable since removals can chain
    changed = True
    while changed and len(v) > 3:
        prev = np.roll(v, 1, axis=0)
        nxt = np.roll(v, -1, axis=0)
        cr = _cross(prev, v, nxt)
        la = np.hypot(*(v - prev).T)
        lb = np.hypot(*(nxt - v).T)
        flat = np.abs(cr) <= COLLINEAR_TOL * la * lb
        changed = bool(flat.any())
        if changed:
            # remove one at a time to stay robust on long collinear runs
            v = np.delete(v, int(np.argmax(flat)), axis=0)

    prev = np.roll(v, 1, axis=0)
    nxt = np.roll(v, -1, axis=0)
    cr = _cross(prev, v, nxt)
    la = np.hypot(*(v - prev).T)
    lb = np.hypot(*(nxt - v).T)
    if np.any(cr <= COLLINEAR_TOL * la * lb):
        raise ValueError("polygon is not strictly convex")
    # a simple strictly-left-turning loop could still wind twice
    turn = np.arctan2(cr, np.einsum("ij,ij->i", v - prev, nxt - v)).sum()
    if abs(turn - 2 * math.pi) > 1e-6:
        raise ValueError("polygon is not simple")
    return v


class ConvexPolygon:
    """Strictly convex polygon stored as a counterclockwise vertex array.

    Clockwise input is reversed, repeated points are dropped and collinear
    vertices are merged.  Degenerate or non-convex input raises ``ValueError``.
    """

    __slots__ = ("_v",)

    def __init__(self, vertices):
        v = _clean_vertices(vertices)
        v.setflags(write=False)
        self._v = v

    @property
    def vertices(self) -> np.ndarray:
        return self._v

    def __len__(self):
        return len(self._v)

    def __repr__(self):
        return f"ConvexPolygon(n={len(self._v)}, area={self.area():.6g})"

    def edges(self) -> np.ndarray:
        return np.roll(self._v, -1, axis=0) - self._v

    def outward_normals(self):
        """Unit outward normals and offsets ``c`` so that the polygon is
        ``{p : n_i . p <= c_i}``."""
        e = self.edges()
        length = np.hypot(e[:, 0], e[:, 1])
        n = np.column_stack([e[:, 1], -e[:, 0]]) / length[:, None]
        c = np.einsum("ij,ij->i", n, self._v)
        return n, c

    def area(self) -> float:
        return signed_area(self._v)

    def centroid(self) -> np.ndarray:
        v = self._v
        w = np.roll(v, -1, axis=0)
        cr = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = cr.sum() / 2.0
        cx = ((v[:, 0] + w[:, 0]) * cr).sum() / (6.0 * a)
        cy = ((v[:, 1] + w[:, 1]) * cr).sum() / (6.0 * a)
        return np.array([cx, cy])

    def transformed(self, rotation: float = 0.0, scale: float = 1.0, shift=(0.0, 0.0), reflect_y=False):
        """Rotate about the origin, scale, optionally reflect y, then shift."""
        c, s = math.cos(rotation), math.sin(rotation)
        R = np.array([[c, -s], [s, c]])
        p = scale * (self._v @ R.T)
        if reflect_y:
            p[:, 1] = -p[:, 1]
        p = p + np.asarray(shift, dtype=float)
        return ConvexPolygon(p)

    @property
    def xmin(self) -> float:
        return float(self._v[:, 0].min())

    @property
    def xmax(self) -> float:
        return float(self._v[:, 0].max())


@dataclass(frozen=True)
class Direction:
    """Unit vector with angle ``theta`` in ``[0, pi)``."""

    theta: float

    @property
    def vector(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @classmethod
    def from_vector(cls, v) -> "Direction":
        theta = math.atan2(v[1], v[0]) % math.pi
        if theta >= math.pi - 1e-15:
            theta = 0.0
        return cls(theta)


def _edge_angle(e) -> np.ndarray:
    """Angle in [0, pi) of each edge vector (row)."""
    th = np.mod(np.arctan2(e[:, 1], e[:, 0]), math.pi)
    th[th >= math.pi - 1e-15] = 0.0
    return th


def _pick_min(values: np.ndarray, thetas: np.ndarray):
    """Index of the minimum, ties (relative TIE_TOL) broken by smallest angle."""
    vmin = values.min()
    tied = np.flatnonzero(values <= vmin * (1 + TIE_TOL))
    return int(tied[np.argmin(thetas[tied])])


def _dist(p, q) -> float:
    return float(math.hypot(p[0] - q[0], p[1] - q[1]))


def diameter(poly: ConvexPolygon) -> float:
    """Largest vertex-to-vertex distance, by rotating calipers over antipodal pairs."""
    v = poly.vertices
    n = len(v)
    if n == 3:
        return max(_dist(v[0], v[1]), _dist(v[1], v[2]), _dist(v[2], v[0]))
    best = 0.0
    j = 1
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        # advance j while the triangle (a, b, v[j+1]) is at least as tall
        steps = 0
        while steps < n and _tri2(a, b, v[(j + 1) % n]) >= _tri2(a, b, v[j % n]):
            j += 1
            steps += 1
        for k in (j - 1, j, j + 1):
            vk = v[k % n]
            best = max(best, _dist(a, vk), _dist(b, vk))
    return best


def _tri2(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def diameter_brute(poly: ConvexPolygon) -> float:
    v = poly.vertices
    best = 0.0
    for i in range(len(v)):
        for j in range(i + 1, len(v)):
            best = max(best, _dist(v[i], v[j]))
    return best


def _caliper_widths(poly: ConvexPolygon) -> np.ndarray:
    """For each edge, the largest distance of a vertex from the edge's line."""
    v = poly.vertices
    n = len(v)
    e = poly.edges()
    length = np.hypot(e[:, 0], e[:, 1])
    out = np.empty(n)
    j = 1
    for i in range(n):
        a = v[i]

        def h(k):
            return _tri2(a, v[(i + 1) % n], v[k % n]) / length[i]

        steps = 0
        while steps < n and h(j + 1) >= h(j):
            j += 1
            steps += 1
        out[i] = max(h(j - 1), h(j), h(j + 1))
    return out


def _caliper_widths_brute(poly: ConvexPolygon) -> np.ndarray:
    v = poly.vertices
    n = len(v)
    e = poly.edges()
    length = np.hypot(e[:, 0], e[:, 1])
    out = np.empty(n)
    for i in range(n):
        out[i] = max(_tri2(v[i], v[(i + 1) % n], v[k]) / length[i] for k in range(n))
    return out


def projective_width(poly: ConvexPolygon):
    """Smallest extent of the polygon's projection onto a line.

    Returns ``(width, v)`` where projecting along ``v`` (onto the line
    perpendicular to ``v``) gives the minimal extent; ``v`` is parallel to the
    supporting edge of the optimal caliper pair.
    """
    widths = _caliper_widths(poly)
    thetas = _edge_angle(poly.edges())
    i = _pick_min(widths, thetas)
    return float(widths[i]), Direction(float(thetas[i]))


def projective_width_brute(poly: ConvexPolygon) -> float:
    return float(_caliper_widths_brute(poly).min())


def max_chord(poly: ConvexPolygon, direction) -> float:
    """Longest chord of the polygon parallel to ``direction``.

    The chord length is concave along the sweep, so it peaks on a line
    through a vertex; every vertex line is clipped against all half-planes.
    """
    u = np.asarray(direction, dtype=float)
    u = u / math.hypot(u[0], u[1])
    n, c = poly.outward_normals()
    v = poly.vertices
    nu = n @ u  # (m,)
    slack = c[None, :] - v @ n.T  # (k, m), >= 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        bound = slack / nu[None, :]
    hi = np.where(nu[None, :] > 1e-15, bound, np.inf).min(axis=1)
    lo = np.where(nu[None, :] < -1e-15, bound, -np.inf).max(axis=1)
    return float(np.max(hi - lo))


def width(poly: ConvexPolygon):
    """Width as min over directions ``v`` of the longest slice perpendicular to ``v``.

    Returns ``(width, v)``.  Candidate chord directions are the edge normals.
    """
    n, _ = poly.outward_normals()
    chords = np.array([max_chord(poly, ni) for ni in n])
    # slices are perpendicular to v, so v is the edge direction
    thetas = _edge_angle(poly.edges())
    i = _pick_min(chords, thetas)
    return float(chords[i]), Direction(float(thetas[i]))


def area(poly: ConvexPolygon) -> float:
    return poly.area()


@dataclass(frozen=True)
class WFrame:
    rotation: float
    translation: tuple
    scale: float
    reflected: bool
    d: float
    eps: float

    @property
    def thin(self) -> bool:
        return self.eps <= 0.05


def normalize_w_frame(poly: ConvexPolygon):
    """Rigidly move and rescale ``poly`` into the width-aligned frame.

    Afterwards the diameter is 2, the width-minimizing direction is the
    x-axis, x ranges over ``[0, d]`` and y over ``[0, eps]``.  The y-reflection
    is fixed by keeping the centroid in the lower half of the y-range.
    """
    _, v = projective_width(poly)
    rot = -v.theta
    scale = 2.0 / diameter(poly)
    p = poly.transformed(rotation=rot, scale=scale)
    ys = p.vertices[:, 1]
    cy_mid = 0.5 * (ys.min() + ys.max())
    reflect = bool(p.centroid()[1] - cy_mid > 1e-12 * (ys.max() - ys.min()))
    if reflect:
        p = p.transformed(reflect_y=True)
    shift = (-p.xmin, -float(p.vertices[:, 1].min()))
    p = p.transformed(shift=shift)
    # snap roundoff so that vertical end edges stay exactly vertical
    q = p.vertices.copy()
    for col in (0, 1):
        top = q[:, col].max()
        q[np.abs(q[:, col]) <= 1e-12 * top, col] = 0.0
        q[np.abs(q[:, col] - top) <= 1e-12 * top, col] = top
    p = ConvexPolygon(q)
    d = p.xmax
    eps, _ = projective_width(p)
    frame = WFrame(rotation=rot, translation=shift, scale=scale, reflected=reflect, d=d, eps=eps)
    return p, frame


def vertex_abscissas(poly: ConvexPolygon, rel_tol: float = 1e-10) -> np.ndarray:
    """Sorted distinct vertex x-coordinates, merging values closer than rel_tol * extent.

    Symmetric polygons produce pairs of abscissas differing only by roundoff;
    keeping both would create sliver intervals downstream.
    """
    xs = np.unique(poly.vertices[:, 0])
    tol = rel_tol * (poly.xmax - poly.xmin)
    keep = np.concatenate([[True], np.diff(xs) > tol])
    out = xs[keep]
    out[-1] = xs[-1]
    return out


def slice_at(poly: ConvexPolygon, x):
    """Lower and upper ordinates ``(h_minus, h_plus)`` of the vertical chord at ``x``.

    Vectorized over ``x``.  Raises if any ``x`` lies outside the x-range.
    """
    x = np.asarray(x, dtype=float)
    x0, x1 = poly.xmin, poly.xmax
    tol = 1e-12 * max(1.0, x1 - x0)
    if np.any(x < x0 - tol) or np.any(x > x1 + tol):
        raise ValueError(f"slice abscissa out of range [{x0}, {x1}]")
    xs = np.clip(np.atleast_1d(x), x0, x1)
    n, c = poly.outward_normals()
    up = n[:, 1] > 1e-14
    dn = n[:, 1] < -1e-14
    hp = ((c[up][None, :] - xs[:, None] * n[up, 0][None, :]) / n[up, 1][None, :]).min(axis=1)
    hm = ((c[dn][None, :] - xs[:, None] * n[dn, 0][None, :]) / n[dn, 1][None, :]).max(axis=1)
    hp = np.maximum(hp, hm)
    # at the extreme abscissas read the chord straight off the vertices, so
    # pointed ends give an exactly degenerate chord
    vx, vy = poly.vertices[:, 0], poly.vertices[:, 1]
    for xe in (x0, x1):
        at = xs == xe
        if np.any(at):
            ys = vy[vx == xe]
            hm[at], hp[at] = ys.min(), ys.max()
    if x.ndim == 0:
        return float(hm[0]), float(hp[0])
    return hm, hp


def read_polygon(path) -> ConvexPolygon:
    """Read ``x y`` pairs, one per line; ``#`` starts a comment."""
    pts = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"bad polygon line: {line!r}")
        pts.append((float(parts[0]), float(parts[1])))
    return ConvexPolygon(pts)


def write_polygon(poly: ConvexPolygon, path, comment: str | None = None) -> None:
    lines = [f"# {comment}"] if comment else []
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in poly.vertices]
    Path(path).write_text("\n".join(lines) + "\n")
