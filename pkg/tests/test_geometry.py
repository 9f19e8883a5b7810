import math

import numpy as np
import pytest
from conftest import convex_polygons, random_polygons
from hypothesis import given
from hypothesis import strategies as st

from eigenwidth.geometry import (
    ConvexPolygon,
    Direction,
    area,
    diameter,
    diameter_brute,
    max_chord,
    normalize_w_frame,
    projective_width,
    projective_width_brute,
    read_polygon,
    slice_at,
    vertex_abscissas,
    width,
    write_polygon,
)

SQUARE = ConvexPolygon([(0, 0), (1, 0), (1, 1), (0, 1)])


def box(a, b):
    return ConvexPolygon([(0, 0), (a, 0), (a, b), (0, b)])


def regular(n, r=1.0):
    t = 2 * np.pi * np.arange(n) / n
    return ConvexPolygon(np.column_stack([r * np.cos(t), r * np.sin(t)]))


# -- construction ---------------------------------------------------------------


def test_clockwise_input_is_reversed():
    p = ConvexPolygon([(0, 0), (0, 1), (1, 1), (1, 0)])
    assert p.area() == pytest.approx(1.0)


def test_collinear_and_repeated_vertices_are_merged():
    p = ConvexPolygon([(0, 0), (0.5, 0), (1, 0), (1, 0), (1, 1), (0, 1)])
    assert len(p) == 4


@pytest.mark.parametrize(
    "pts",
    [
        [(0, 0), (1, 0)],
        [(0, 0), (1, 0), (2, 0)],
        [(0, 0), (1, 1), (1, 1), (0, 0)],
    ],
)
def test_degenerate_polygons_raise(pts):
    with pytest.raises(ValueError, match="degenerate"):
        ConvexPolygon(pts)


def test_nonconvex_polygon_raises():
    with pytest.raises(ValueError, match="convex"):
        ConvexPolygon([(0, 0), (2, 0), (1, 0.2), (2, 1), (0, 1)])


def test_direction_is_unit():
    for theta in np.linspace(0, math.pi, 7, endpoint=False):
        assert np.linalg.norm(Direction(theta).vector) == pytest.approx(1.0, abs=1e-12)
    assert Direction.from_vector((-1.0, 0.0)).theta == 0.0


# -- diameter, width, area examples --------------------------------------------


def test_unit_square():
    assert diameter(SQUARE) == pytest.approx(math.sqrt(2))
    assert width(SQUARE)[0] == pytest.approx(1.0)
    assert projective_width(SQUARE)[0] == pytest.approx(1.0)
    assert area(SQUARE) == pytest.approx(1.0)


def test_rectangle_width_is_short_side():
    r = box(1.9, 0.1)
    assert width(r)[0] == pytest.approx(0.1)
    assert projective_width(r)[0] == pytest.approx(0.1)
    assert area(r) == pytest.approx(0.19)


def test_sharpness_rectangle_has_diameter_two():
    eps = 0.2
    assert diameter(box(math.sqrt(4 - eps**2), eps)) == pytest.approx(2.0, abs=1e-12)


def test_equilateral_triangle_width_is_altitude():
    tri = ConvexPolygon([(0, 0), (2, 0), (1, math.sqrt(3))])
    assert width(tri)[0] == pytest.approx(math.sqrt(3), rel=1e-12)


def test_64gon_diameter_matches_brute_force():
    p = regular(64)
    assert diameter(p) == diameter_brute(p)


def test_fan_area_oracle():
    p = random_polygons(1, seed=3, n_points=40)[0]
    v = p.vertices
    fan = 0.0
    for i in range(1, len(v) - 1):
        a, b = v[i] - v[0], v[i + 1] - v[0]
        fan += 0.5 * (a[0] * b[1] - a[1] * b[0])
    assert area(p) == pytest.approx(fan, rel=1e-13)


def test_width_tie_breaks_to_smallest_angle():
    # every edge normal of a square gives the same width
    assert width(SQUARE)[1].theta == 0.0
    assert projective_width(SQUARE)[1].theta == 0.0


# -- properties -----------------------------------------------------------------


@given(convex_polygons())
def test_width_equals_projective_width(poly):
    w, _ = width(poly)
    pw, _ = projective_width(poly)
    assert abs(w - pw) <= 1e-9 * pw
    assert w <= diameter(poly) * (1 + 1e-12)


@given(convex_polygons())
def test_calipers_match_brute_force(poly):
    assert diameter(poly) == diameter_brute(poly)
    assert projective_width(poly)[0] == pytest.approx(projective_width_brute(poly), rel=1e-12)


@given(convex_polygons(), st.floats(0, 2 * math.pi), st.floats(0.1, 10.0), st.floats(-5, 5), st.floats(-5, 5))
def test_rigid_motion_and_dilation(poly, rot, scale, sx, sy):
    moved = poly.transformed(rotation=rot, shift=(sx, sy))
    for f in (diameter, lambda p: width(p)[0], lambda p: projective_width(p)[0]):
        base = f(poly)
        assert f(moved) == pytest.approx(base, rel=1e-9)
        assert f(poly.transformed(scale=scale)) == pytest.approx(scale * base, rel=1e-12)


def test_max_chord_in_width_direction():
    w, v = width(box(2.0, 0.3))
    assert max_chord(box(2.0, 0.3), (math.cos(v.theta + math.pi / 2), math.sin(v.theta + math.pi / 2))) == pytest.approx(w)


# -- w-frame ----------------------------------------------------------------------


def test_frame_of_axis_aligned_rectangle():
    r = box(1.98, 0.1)
    diam = math.hypot(1.98, 0.1)
    p, f = normalize_w_frame(r)
    assert f.rotation == 0.0
    assert f.scale == pytest.approx(2 / diam)
    assert f.d == pytest.approx(2 * 1.98 / diam, rel=1e-12)
    assert f.eps == pytest.approx(2 * 0.1 / diam, rel=1e-12)
    assert p.xmin == 0.0 and p.vertices[:, 1].min() == 0.0


def _vertex_set_match(a, b, tol=1e-9):
    va = np.array(sorted(map(tuple, np.round(a.vertices / tol) * tol)))
    vb = np.array(sorted(map(tuple, np.round(b.vertices / tol) * tol)))
    return va.shape == vb.shape and np.allclose(va, vb, atol=10 * tol)


def test_frame_is_rotation_invariant():
    r = box(1.98, 0.1)
    p0, _ = normalize_w_frame(r)
    p1, _ = normalize_w_frame(r.transformed(rotation=math.radians(37), shift=(0.3, -2.0)))
    eps = p0.vertices[:, 1].max()
    flipped = ConvexPolygon(np.column_stack([p1.vertices[:, 0], eps - p1.vertices[:, 1]]))
    assert _vertex_set_match(p0, p1) or _vertex_set_match(p0, flipped)


def test_frame_of_square_with_diameter_two():
    _, f = normalize_w_frame(box(math.sqrt(2), math.sqrt(2)))
    assert f.d == pytest.approx(math.sqrt(2))
    assert f.eps == pytest.approx(math.sqrt(2))


@given(convex_polygons())
def test_frame_invariants(poly):
    p, f = normalize_w_frame(poly)
    assert diameter(p) == pytest.approx(2.0, abs=1e-9)
    assert p.xmin == 0.0 and p.xmax == f.d
    assert p.vertices[:, 1].min() == 0.0
    assert f.eps == pytest.approx(width(poly)[0] * f.scale, rel=1e-9)
    assert 0 < f.eps <= f.d <= 2.0 + 1e-12
    # in 2-D the longest vertical chord is the height
    xs = vertex_abscissas(p)
    hm, hp = slice_at(p, xs)
    assert (hp - hm).max() == pytest.approx(f.eps, abs=1e-9)
    # centroid in the lower half of the y-range
    assert p.centroid()[1] <= 0.5 * f.eps + 1e-9


def test_thin_flag():
    _, f = normalize_w_frame(box(2.0, 0.05))
    assert f.thin
    _, f = normalize_w_frame(box(2.0, 0.2))
    assert not f.thin


# -- slicing ----------------------------------------------------------------------


def test_slice_examples():
    assert slice_at(box(1.9, 0.1), 0.5) == pytest.approx((0.0, 0.1))
    tri = ConvexPolygon([(0, 0), (2, 0), (2, 0.2)])
    assert slice_at(tri, 1.0) == pytest.approx((0.0, 0.1))


def test_slice_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        slice_at(box(1.9, 0.1), 2.0)


def _brute_chord(poly, x):
    ys = []
    v = poly.vertices
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        lo, hi = sorted((a[0], b[0]))
        if lo <= x <= hi:
            if a[0] == b[0]:
                ys += [a[1], b[1]]
            else:
                t = (x - a[0]) / (b[0] - a[0])
                ys.append(a[1] + t * (b[1] - a[1]))
    return min(ys), max(ys)


@given(convex_polygons(), st.floats(0.0, 1.0))
def test_slice_matches_edge_intersections(poly, t):
    p, f = normalize_w_frame(poly)
    x = t * f.d
    hm, hp = slice_at(p, x)
    bm, bp = _brute_chord(p, x)
    assert hp >= hm
    assert hm == pytest.approx(bm, abs=1e-12)
    assert hp == pytest.approx(bp, abs=1e-12)


def test_pointed_end_chord_is_degenerate():
    p, _ = normalize_w_frame(ConvexPolygon([(0, 0), (2, 0), (1, 0.1)]))
    hm, hp = slice_at(p, 0.0)
    assert hp - hm == 0.0


def test_vertex_abscissas_merge_roundoff_twins():
    p = ConvexPolygon([(0, 0), (1, -0.1), (2, 0), (1 + 1e-14, 0.1)])
    assert len(vertex_abscissas(p)) == 3


# -- files --------------------------------------------------------------------------


def test_polygon_file_roundtrip(tmp_path):
    p = random_polygons(1, seed=5)[0]
    path = tmp_path / "poly.txt"
    write_polygon(p, path, comment="random hull")
    text = path.read_text()
    assert text.startswith("# random hull")
    q = read_polygon(path)
    assert np.array_equal(p.vertices, q.vertices)


def test_polygon_file_comments_and_errors(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("# square\n0 0\n1 0  # corner\n\n1 1\n0 1\n")
    assert len(read_polygon(path)) == 4
    path.write_text("0 0 0\n")
    with pytest.raises(ValueError, match="bad polygon line"):
        read_polygon(path)
