"""Piecewise-linear finite elements for the Neumann Laplacian on a convex polygon.

Meshes are built in the width-aligned frame as columns: every polygon vertex
abscissa is a column, each column is split into layers between h_- and h_+,
and neighbouring columns are stitched with triangles.  Uniform 4-way (red)
refinement gives nested meshes, on which the discrete eigenvalue decreases
monotonically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

from ._eigen import SolverError, smallest_nonconstant
from .geometry import ConvexPolygon, slice_at, vertex_abscissas
from .profile import HeightProfile, merge_grid, norm_x, uniform_points

DEFAULT_MAX_NODES = 400_000
THIN_LAYERS = 8
# every nondegenerate column gets at least this many layers, so chords near
# pointed ends still resolve variation in y
MIN_COLUMN_LAYERS = 4


@dataclass(frozen=True)
class Mesh:
    """Triangulation of a w-framed polygon.

    ``triangles`` are counterclockwise index triples into ``nodes``;
    ``boundary`` flags nodes on the polygon boundary.  ``level`` counts the
    red refinements applied since :func:`triangulate`.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    polygon: ConvexPolygon
    level: int = 0
    base_edge: float = float("nan")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        return self.n_nodes - len(self.edges()) + len(self.triangles)

    def area_defect(self) -> float:
        return abs(float(self.areas().sum()) - self.polygon.area()) / self.polygon.area()

    def max_edge(self) -> float:
        e = self.edges()
        return float(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1).max())

    def angles(self) -> np.ndarray:
        """Interior angles (degrees), one row per triangle."""
        p = self.nodes[self.triangles]
        out = np.empty((len(p), 3))
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            out[:, i] = np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))
        return out

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def mirrored(self) -> "Mesh":
        """The mesh of the polygon reflected by x -> d - x."""
        d = self.polygon.xmax
        nodes = self.nodes.copy()
        nodes[:, 0] = d - nodes[:, 0]
        poly = ConvexPolygon(np.column_stack([d - self.polygon.vertices[:, 0], self.polygon.vertices[:, 1]]))
        return replace(self, nodes=nodes, triangles=self.triangles[:, ::-1].copy(), polygon=poly)


def _column_nodes(x, hm, hp, spacing, min_layers=1):
    """Layer ordinates for one column; a degenerate chord gives a single node."""
    h = hp - hm
    if h <= 0.0:
        return np.array([hm])
    m = max(min_layers, math.ceil(h / spacing - 1e-9))
    return hm + h * (np.arange(m + 1) / m)


def _pick_diagonal(p_keep_left, p_adv_left, p_keep_right, p_adv_right, center):
    """True to advance on the left column, False to advance on the right.

    The shorter new diagonal wins.  Exact ties go to the diagonal through the
    quad corner nearest ``center``, which makes the mesh of a mirrored domain
    the mirror of the mesh.
    """
    la = math.dist(p_adv_left, p_keep_right)
    lb = math.dist(p_keep_left, p_adv_right)
    if abs(la - lb) > 1e-9 * max(la, lb):
        return la < lb
    corners = [p_keep_left, p_adv_left, p_adv_right, p_keep_right]
    dist = [math.dist(c, center) for c in corners]
    best = min(dist)
    near = [i for i, v in enumerate(dist) if v <= best * (1 + 1e-9) + 1e-15]
    if len(near) == 1:
        # diagonal A joins corners 1 and 3, diagonal B joins 0 and 2
        return near[0] in (1, 3)
    return False


def _column_mesh(poly: ConvexPolygon, spacing: float, min_layers: int = MIN_COLUMN_LAYERS):
    d = poly.xmax
    xs = merge_grid(vertex_abscissas(poly), uniform_points(d, max(1, math.ceil(d / spacing - 1e-9))), d)
    hm, hp = slice_at(poly, xs)
    center = (0.5 * d, 0.5 * float(poly.vertices[:, 1].max() + poly.vertices[:, 1].min()))
    nodes = []
    bflag = []
    cols = []
    for i, x in enumerate(xs):
        ys = _column_nodes(x, hm[i], hp[i], spacing, min_layers)
        start = len(nodes)
        end_col = i == 0 or i == len(xs) - 1
        for j, y in enumerate(ys):
            nodes.append((x, y))
            bflag.append(end_col or j == 0 or j == len(ys) - 1)
        cols.append(np.arange(start, start + len(ys)))
    nodes = np.array(nodes)
    tris = []
    for L, R in zip(cols[:-1], cols[1:]):
        a = b = 0
        while a < len(L) - 1 or b < len(R) - 1:
            if a == len(L) - 1:
                left = False
            elif b == len(R) - 1:
                left = True
            else:
                left = _pick_diagonal(nodes[L[a]], nodes[L[a + 1]], nodes[R[b]], nodes[R[b + 1]], center)
            if left:
                tris.append((L[a], R[b], L[a + 1]))
                a += 1
            else:
                tris.append((L[a], R[b], R[b + 1]))
                b += 1
    tris = np.array(tris, dtype=np.int64)
    return nodes, tris, np.array(bflag)


def _orient(nodes, tris):
    p = nodes[tris]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    tris = tris.copy()
    neg = cross < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement: every triangle is split into four similar ones."""
    t = mesh.triangles
    n = mesh.n_nodes
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    es = np.sort(e, axis=1)
    uniq, inv = np.unique(es, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    nodes = np.vstack([mesh.nodes, mid])
    # an edge is on the boundary iff exactly one triangle uses it
    counts = np.bincount(inv, minlength=len(uniq))
    bflag = np.concatenate([mesh.boundary, counts == 1])
    nt = len(t)
    m01, m12, m20 = (n + inv[k * nt : (k + 1) * nt] for k in range(3))
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    new = np.concatenate(
        [
            np.column_stack([a, m01, m20]),
            np.column_stack([m01, b, m12]),
            np.column_stack([m20, m12, c]),
            np.column_stack([m01, m12, m20]),
        ]
    )
    return replace(mesh, nodes=nodes, triangles=new, boundary=bflag, level=mesh.level + 1)


def _lattice_mesh(poly: ConvexPolygon, spacing: float):
    """Delaunay triangulation of boundary samples plus an interior triangular lattice.

    The lattice is centred on the middle of the bounding box, so it is
    symmetric under x -> d - x and y -> eps - y and a mirrored polygon gets
    the mirrored mesh.
    """
    v = poly.vertices
    bpts = []
    for p0, p1 in zip(v, np.roll(v, -1, axis=0)):
        m = max(1, math.ceil(math.dist(p0, p1) / spacing - 1e-9))
        t = np.arange(m)[:, None] / m
        bpts.append(p0[None, :] + t * (p1 - p0)[None, :])
    bpts = np.vstack(bpts)
    d = poly.xmax
    ylo, yhi = float(v[:, 1].min()), float(v[:, 1].max())
    cx, cy = 0.5 * d, 0.5 * (ylo + yhi)
    dy = spacing * math.sqrt(3.0) / 2.0
    nj = math.ceil((yhi - ylo) / (2 * dy)) + 1
    ni = math.ceil(d / (2 * spacing)) + 2
    j = np.arange(-nj, nj + 1)
    i = np.arange(-ni, ni + 1)
    jj, ii = np.meshgrid(j, i, indexing="ij")
    px = cx + (ii + 0.5 * (jj % 2)) * spacing
    py = cy + jj * dy
    cand = np.column_stack([px.ravel(), py.ravel()])
    n, c = poly.outward_normals()
    gap = (c[None, :] - cand @ n.T).min(axis=1)
    inner = cand[gap >= 0.5 * spacing]
    pts = np.vstack([bpts, inner])
    tri = Delaunay(pts).simplices.astype(np.int64)
    pts_t = pts[tri]
    area = 0.5 * np.abs(
        (pts_t[:, 1, 0] - pts_t[:, 0, 0]) * (pts_t[:, 2, 1] - pts_t[:, 0, 1])
        - (pts_t[:, 1, 1] - pts_t[:, 0, 1]) * (pts_t[:, 2, 0] - pts_t[:, 0, 0])
    )
    tri = tri[area > 1e-12 * spacing**2]
    bflag = np.zeros(len(pts), dtype=bool)
    bflag[: len(bpts)] = True
    return pts, tri, bflag


def smooth(mesh: Mesh, passes: int = 10) -> Mesh:
    """Laplacian smoothing of interior nodes (Jacobi sweeps).

    A node move is undone when it would make an incident triangle's area
    drop below a quarter of its previous value or flip sign.
    """
    nodes = mesh.nodes.copy()
    t = mesh.triangles
    e = mesh.edges()
    n = mesh.n_nodes
    deg = np.bincount(e.ravel(), minlength=n).astype(float)
    interior = ~mesh.boundary
    for _ in range(passes):
        acc = np.zeros_like(nodes)
        np.add.at(acc, e[:, 0], nodes[e[:, 1]])
        np.add.at(acc, e[:, 1], nodes[e[:, 0]])
        trial = nodes.copy()
        trial[interior] = acc[interior] / deg[interior, None]
        old = replace(mesh, nodes=nodes).areas()
        new = replace(mesh, nodes=trial).areas()
        bad_tri = new < 0.25 * old
        if np.any(bad_tri):
            bad_nodes = np.unique(t[bad_tri])
            trial[bad_nodes] = nodes[bad_nodes]
            if np.any(replace(mesh, nodes=trial).areas() <= 0):
                break
        nodes = trial
    return replace(mesh, nodes=nodes)


def column_mesh_suitable(poly: ConvexPolygon, max_slope: float = 0.5) -> bool:
    """Columns give well-shaped cells only when no boundary edge is steep (vertical ends are fine)."""
    e = poly.edges()
    slanted = np.abs(e[:, 0]) > 1e-12 * np.abs(e[:, 1])
    return bool(np.all(np.abs(e[slanted, 1]) <= max_slope * np.abs(e[slanted, 0])))


def triangulate(
    poly: ConvexPolygon,
    target_edge: float,
    eps: float | None = None,
    max_nodes: int = DEFAULT_MAX_NODES,
    method: str = "auto",
    smoothing_passes: int = 10,
) -> Mesh:
    """Triangulate a w-framed polygon with node spacing about ``target_edge``.

    For thin polygons (eps <= 0.05) the target is capped at eps/8 so that at
    least eight layers span the widest chord.  ``method`` is "columns"
    (vertical columns between h_- and h_+, stitched by triangles), "lattice"
    (boundary samples plus a triangular lattice, Delaunay, then smoothing)
    or "auto", which picks columns unless a boundary edge is steep.  Nested
    refinements of the result come from :func:`refine`.
    """
    if not target_edge > 0:
        raise ValueError("target_edge must be positive")
    if poly.xmin != 0.0 or float(poly.vertices[:, 1].min()) != 0.0:
        raise ValueError("polygon is not in the w-frame; call normalize_w_frame first")
    if eps is None:
        eps = float(poly.vertices[:, 1].max())
    if eps <= 0.05:
        target_edge = min(target_edge, eps / THIN_LAYERS)
    est = 1.2 * poly.area() / (0.5 * math.sqrt(3.0) * target_edge**2) + 4 * poly.xmax / target_edge
    if est > max_nodes:
        raise ValueError(f"mesh budget exceeded: about {int(est)} nodes > {max_nodes}")
    if method == "auto":
        method = "columns" if column_mesh_suitable(poly) else "lattice"
    if method == "columns":
        nodes, tris, bflag = _column_mesh(poly, target_edge)
    elif method == "lattice":
        nodes, tris, bflag = _lattice_mesh(poly, target_edge)
    else:
        raise ValueError(f"unknown mesh method {method!r}")
    mesh = Mesh(nodes=nodes, triangles=_orient(nodes, tris), boundary=bflag, polygon=poly, base_edge=target_edge)
    if method == "lattice" and smoothing_passes:
        mesh = smooth(mesh, smoothing_passes)
    if mesh.n_nodes > max_nodes:
        raise ValueError(f"mesh budget exceeded: {mesh.n_nodes} nodes > {max_nodes}")
    return mesh


def assemble(mesh: Mesh):
    """P1 stiffness and consistent mass matrices (CSC)."""
    p = mesh.nodes[mesh.triangles]
    area = mesh.areas()
    if np.any(area <= 0):
        raise ValueError("mesh has non-positive triangle areas")
    # gradients of the barycentric coordinates
    x, y = p[:, :, 0], p[:, :, 1]
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / (2 * area[:, None])
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / (2 * area[:, None])
    ke = area[:, None, None] * (bx[:, :, None] * bx[:, None, :] + by[:, :, None] * by[:, None, :])
    me = area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))[None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsc()
    M = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsc()
    return K, M


def gradients(mesh: Mesh, u) -> np.ndarray:
    """Constant gradient of the P1 function ``u`` on every triangle, shape (T, 2)."""
    p = mesh.nodes[mesh.triangles]
    uu = np.asarray(u)[mesh.triangles]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    du1 = uu[:, 1] - uu[:, 0]
    du2 = uu[:, 2] - uu[:, 0]
    gx = (du1 * b[:, 1] - du2 * a[:, 1]) / det
    gy = (du2 * a[:, 0] - du1 * b[:, 0]) / det
    return np.column_stack([gx, gy])


@dataclass(frozen=True)
class MeshSolution:
    """First nonconstant Neumann eigenpair on ``mesh``.

    ``u`` is scaled to max u = 1 with min u = -k, k in (0, 1], and is positive
    near x = d.  When the raw eigenvector is larger in magnitude at its
    negative end the domain is mirrored (x -> d - x) so that both conventions
    hold; ``mirrored`` records this and ``mesh`` is the mirrored mesh.
    """

    mesh: Mesh
    mu1: float
    u: np.ndarray
    k: float
    residual: float
    relative_residual: float
    iterations: int
    mirrored: bool
    mu2: float = float("nan")
    refinement_change: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def polygon(self) -> ConvexPolygon:
        return self.mesh.polygon

    @property
    def d(self) -> float:
        return self.mesh.polygon.xmax

    @property
    def eps(self) -> float:
        return float(self.mesh.polygon.vertices[:, 1].max())

    def mass_mean(self) -> float:
        _, M = assemble(self.mesh)
        return float((M @ self.u).sum() / M.sum())

    def energy(self):
        """(int |D_x u|^2, int |D_y u|^2, int u^2) for the P1 function."""
        g = gradients(self.mesh, self.u)
        a = self.mesh.areas()
        _, M = assemble(self.mesh)
        return float(a @ g[:, 0] ** 2), float(a @ g[:, 1] ** 2), float(self.u @ (M @ self.u))


def solve_neumann_eig(
    mesh: Mesh,
    tol: float = 1e-12,
    maxiter: int = 500,
    check_refinement: bool = False,
) -> MeshSolution:
    """Smallest nonzero eigenpair of K u = mu M u with constants deflated.

    The start block is (x, y, (x - d/2)**2) with the mass mean removed.  With
    ``check_refinement`` the problem is also solved on the red-refined mesh
    and the relative eigenvalue change is stored.
    """
    K, M = assemble(mesh)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    d = mesh.polygon.xmax
    start = np.column_stack([x, y, (x - 0.5 * d) ** 2])
    res = smallest_nonconstant(K, M, start, tol=tol, maxiter=maxiter, block=3)
    u = res.vector
    mu = res.value
    # sign: positive mean over the end strip x > d - eps
    eps = float(mesh.polygon.vertices[:, 1].max())
    strip = x > d - min(eps, 0.5 * d)
    if (M @ u)[strip].sum() < 0:
        u = -u
    mirrored = False
    if -u.min() > u.max():
        mesh = mesh.mirrored()
        u = -u
        mirrored = True
    u = u / u.max()
    k = float(-u.min())
    if not (0 < k <= 1):
        raise SolverError(f"eigenvector normalization failed (k = {k})")
    Mu = M @ u
    abs_res = float(np.linalg.norm(K @ u - mu * Mu) / np.linalg.norm(Mu))
    change = float("nan")
    if check_refinement:
        fine = solve_neumann_eig(refine(mesh if not mirrored else mesh.mirrored()), tol=tol, maxiter=maxiter)
        change = abs(mu - fine.mu1) / fine.mu1
    return MeshSolution(
        mesh=mesh,
        mu1=float(mu),
        u=u,
        k=k,
        residual=abs_res,
        relative_residual=float(res.residual),
        iterations=res.iterations,
        mirrored=mirrored,
        mu2=res.second,
        refinement_change=change,
    )


def mirror_polygon(poly: ConvexPolygon) -> ConvexPolygon:
    d = poly.xmax
    return ConvexPolygon(np.column_stack([d - poly.vertices[:, 0], poly.vertices[:, 1]]))


@dataclass
class LiYauReport:
    max_ratio: float
    argmax_centroid: tuple
    flagged: bool
    slack: float = 0.1

    def as_dict(self):
        return dict(self.__dict__)


def gradient_bound_check(sol: MeshSolution, slack: float = 0.1) -> LiYauReport:
    """max over triangles of |Du| / (sqrt(mu) * sqrt(1 - ubar_T**2))."""
    g = np.linalg.norm(gradients(sol.mesh, sol.u), axis=1)
    ubar = sol.u[sol.mesh.triangles].mean(axis=1)
    den = math.sqrt(sol.mu1) * np.sqrt(np.maximum(1e-12, 1.0 - ubar**2))
    r = g / den
    i = int(np.argmax(r))
    c = sol.mesh.centroids()[i]
    return LiYauReport(
        max_ratio=float(r[i]),
        argmax_centroid=(float(c[0]), float(c[1])),
        flagged=bool(r[i] > 1 + slack),
        slack=slack,
    )


@dataclass
class DirectionalReport:
    bin_edges: np.ndarray
    max_grad: np.ndarray
    ratio: np.ndarray
    max_ratio: float
    end_max_grad: float
    end_ratio: float

    def as_dict(self):
        return {
            "max_ratio": self.max_ratio,
            "end_max_grad": self.end_max_grad,
            "end_ratio": self.end_ratio,
        }


def directional_profile(sol: MeshSolution, profile: HeightProfile | None = None, n_bins: int = 200) -> DirectionalReport:
    """Per-bin max |Du| against max(eps, ||x||), bins by triangle centroid x.

    ``end_ratio`` is max |Du| / eps over triangles with centroid in
    [0, eps] or [d - eps, d].
    """
    d = sol.d if profile is None else profile.d
    eps = sol.eps
    g = np.linalg.norm(gradients(sol.mesh, sol.u), axis=1)
    cx = np.clip(sol.mesh.centroids()[:, 0], 0.0, d)
    edges = np.linspace(0.0, d, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, cx, side="right") - 1, 0, n_bins - 1)
    mg = np.zeros(n_bins)
    np.maximum.at(mg, idx, g)
    occupied = np.bincount(idx, minlength=n_bins) > 0
    # smallest max(eps, ||x||) inside each bin, so the ratio is conservative
    lo = np.maximum(eps, np.minimum(norm_x(edges[:-1], d), norm_x(edges[1:], d)))
    ratio = np.where(occupied, mg / lo, np.nan)
    ends = (cx <= eps) | (cx >= d - eps)
    end_max = float(g[ends].max()) if np.any(ends) else float("nan")
    return DirectionalReport(
        bin_edges=edges,
        max_grad=np.where(occupied, mg, np.nan),
        ratio=ratio,
        max_ratio=float(np.nanmax(ratio)),
        end_max_grad=end_max,
        end_ratio=end_max / eps,
    )


def write_vtk(sol: MeshSolution, path) -> None:
    """Legacy ASCII VTK unstructured grid with the eigenfunction as point data."""
    m = sol.mesh
    lines = [
        "# vtk DataFile Version 3.0",
        f"neumann eigenfunction mu1={float(sol.mu1)!r}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {m.n_nodes} double",
    ]
    lines += [f"{float(x)!r} {float(y)!r} 0.0" for x, y in m.nodes]
    nt = len(m.triangles)
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in m.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    lines += [f"POINT_DATA {m.n_nodes}", "SCALARS u double 1", "LOOKUP_TABLE default"]
    lines += [repr(float(v)) for v in sol.u]
    Path(path).write_text("\n".join(lines) + "\n")
