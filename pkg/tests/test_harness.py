import functools
import json
import math

import numpy as np
import pytest
from conftest import PW, record

import eigenwidth.harness as harness
from eigenwidth.geometry import diameter, normalize_w_frame, width
from eigenwidth.harness import (
    RATIO_FIELDS,
    SCHEMA_VERSION,
    FamilySpec,
    SweepConfig,
    check_records,
    fit_constant,
    generate_family,
    hex_lens,
    isoceles_triangle,
    load_caps,
    random_convex,
    read_csv,
    rectangle,
    rectangle_oracle,
    sharpness_check,
    sweep,
    write_csv,
)

RECT_EPS = (0.2, 0.1, 0.05)


@functools.lru_cache(maxsize=None)
def rectangle_records():
    return tuple(sweep(FamilySpec("rectangle", RECT_EPS), workers=1))


# -- FamilySpec ---------------------------------------------------------------------------


def test_family_spec_normalizes_eps():
    spec = FamilySpec("rectangle", 0.1)
    assert spec.eps == (0.1,)
    assert FamilySpec.from_dict(spec.as_dict()) == spec


@pytest.mark.parametrize(
    "kw, match",
    [
        ({"kind": "disk", "eps": [0.1]}, "unknown family kind"),
        ({"kind": "rectangle", "eps": []}, "empty"),
        ({"kind": "rectangle", "eps": [0.5]}, r"\(0, 0.5\)"),
        ({"kind": "rectangle", "eps": [0.0]}, r"\(0, 0.5\)"),
        ({"kind": "rectangle", "eps": [0.1], "refinement": -1}, "refinement"),
        ({"kind": "rectangle", "eps": [0.1], "count": 0}, "count"),
    ],
)
def test_family_spec_validation(kw, match):
    with pytest.raises(ValueError, match=match):
        FamilySpec(**kw)


def test_family_spec_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        FamilySpec.from_dict({"kind": "rectangle", "eps": [0.1], "mesh": 3})


# -- families -------------------------------------------------------------------------------


def test_rectangle_vertices():
    v = rectangle(0.2).vertices
    a = math.sqrt(3.96)
    assert np.allclose(sorted(map(tuple, v)), sorted([(0, 0), (a, 0), (a, 0.2), (0, 0.2)]), atol=1e-15)


@pytest.mark.parametrize("builder", [rectangle, isoceles_triangle, hex_lens])
@pytest.mark.parametrize("eps", [0.4, 0.1, 0.025])
def test_deterministic_families_have_diameter_two_and_width_eps(builder, eps):
    poly = builder(eps)
    assert diameter(poly) == pytest.approx(2.0, abs=1e-9)
    assert width(poly)[0] == pytest.approx(eps, abs=1e-9)
    _, f = normalize_w_frame(poly)
    assert f.eps == pytest.approx(eps, abs=1e-9)


def test_random_family_is_reproducible():
    spec = FamilySpec("random_convex", (0.1, 0.05), seed=7, count=3)
    a = generate_family(spec)
    b = generate_family(spec)
    assert [i for i, _ in a] == [i for i, _ in b]
    for (_, p), (_, q) in zip(a, b):
        assert p.vertices.tobytes() == q.vertices.tobytes()
    assert len(a) == 6
    for (did, p), eps in zip(a, [0.1] * 3 + [0.05] * 3):
        assert did.startswith(f"random_convex-eps{eps:.4f}-")
        assert diameter(p) == pytest.approx(2.0, abs=1e-9)
        assert abs(width(p)[0] - eps) <= 0.1 * eps


def test_random_seeds_differ():
    a = generate_family(FamilySpec("random_convex", 0.1, seed=7))[0][1]
    b = generate_family(FamilySpec("random_convex", 0.1, seed=8))[0][1]
    assert not np.array_equal(a.vertices, b.vertices)


def test_random_convex_gives_up():
    with pytest.raises(ValueError, match="after 5 attempts"):
        random_convex(0.1, np.random.default_rng(0), n_points=3, attempts=5)


# -- sweeps ---------------------------------------------------------------------------------


def test_rectangle_sweep_against_the_oracle():
    records = rectangle_records()
    assert [r.domain_id for r in records] == sorted(r.domain_id for r in records)
    for r in records:
        assert r.ok
        assert r.mu1 == pytest.approx(rectangle_oracle(r.eps_target), rel=5e-3)
        assert r.c_hat == pytest.approx(math.pi**2 / (4 * (4 - r.eps_target**2)), rel=0.02)
        assert r.c_hat >= 0.6


def test_rectangle_sweep_inequalities():
    for r in rectangle_records():
        assert r.mu1N >= PW * (1 - 1e-3)
        assert r.slack >= -1e-3
        # mu1 >= mu1N - allowance - identity residual
        assert r.gap_ode >= -(r.ode_gap_allowance + r.identity_residual * r.mu1)
        assert r.ode_gap_margin >= 0
        assert r.decomposition_slack >= 0
        assert r.identity_order >= 1


def test_sweep_writes_outputs(tmp_path):
    records = sweep(FamilySpec("rectangle", 0.2), out_dir=tmp_path, workers=1, cfg=SweepConfig(identity_order=False))
    assert (tmp_path / "records.csv").exists()
    data = json.loads((tmp_path / "records.json").read_text())
    assert data["schema_version"] == SCHEMA_VERSION
    assert data["families"] == [FamilySpec("rectangle", 0.2).as_dict()]
    assert data["records"][0]["domain_id"] == records[0].domain_id
    assert data["records"][0]["identity_order"] is None
    back = read_csv(tmp_path / "records.csv")
    assert [r.domain_id for r in back] == [r.domain_id for r in records]
    write_csv(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "records.csv").read_bytes()


def test_sweep_isolates_failures(tmp_path, monkeypatch):
    real = harness.solve_domain

    def flaky(poly, cfg):
        if poly.vertices[:, 1].max() < 0.15:
            raise ValueError("mesher gave up")
        return real(poly, cfg)

    monkeypatch.setattr(harness, "solve_domain", flaky)
    cfg = SweepConfig(identity_order=False)
    records = sweep(FamilySpec("rectangle", (0.2, 0.1)), out_dir=tmp_path, workers=1, cfg=cfg)
    status = {r.eps_target: r.status for r in records}
    assert status == {0.2: "ok", 0.1: "failed"}
    bad = [r for r in records if not r.ok][0]
    assert bad.error == "ValueError: mesher gave up"
    assert math.isnan(bad.mu1)
    rep = check_records(records)
    assert [f.check for f in rep.failures] == ["status"]


def test_sweep_all_failed(tmp_path, monkeypatch):
    def broken(poly, cfg):
        raise ValueError("no mesh")

    monkeypatch.setattr(harness, "solve_domain", broken)
    with pytest.raises(RuntimeError, match="every domain"):
        sweep(FamilySpec("rectangle", 0.2), out_dir=tmp_path, workers=1)
    assert len(read_csv(tmp_path / "records.csv")) == 1


def test_sweep_rejects_empty_input():
    with pytest.raises(ValueError, match="no domains"):
        sweep([])


def test_csv_roundtrip_preserves_floats(tmp_path):
    r = record(mu1=0.1 + 0.2, slack=-0.0, nodes=12, mirrored=True, error="x, y")
    path = tmp_path / "r.csv"
    write_csv([r], path)
    (back,) = read_csv(path)
    assert back.mu1 == 0.1 + 0.2
    assert back.mirrored is True and back.nodes == 12 and back.error == "x, y"
    assert math.isnan(back.r_eta5)


# -- fitting ---------------------------------------------------------------------------------


def test_fit_constant_single_record():
    fit = fit_constant([record(domain_id="a", c_hat=0.7)])
    assert fit.c_min == 0.7 and fit.argmin == "a" and fit.n_records == 1


def test_fit_constant_per_family_and_thin_filter():
    recs = [
        record(domain_id="r1", family="rectangle", c_hat=0.62, thin=True),
        record(domain_id="r2", family="rectangle", c_hat=0.64),
        record(domain_id="t1", family="isoceles_triangle", c_hat=0.3),
        record(domain_id="f", family="hex_lens", c_hat=0.01, status="failed"),
    ]
    fit = fit_constant(recs)
    assert fit.c_min == 0.3 and fit.argmin == "t1"
    assert fit.per_family == {
        "isoceles_triangle": {"c_min": 0.3, "argmin": "t1"},
        "rectangle": {"c_min": 0.62, "argmin": "r1"},
    }
    thin = fit_constant(recs, thin_only=True)
    assert thin.c_min == 0.62 and thin.n_records == 1


def test_fit_constant_empty():
    with pytest.raises(ValueError, match="no successful records"):
        fit_constant([record(status="failed")])


def test_rectangle_constant_trend():
    # oracle slack / eps^2 = pi^2 / (4 (4 - eps^2)) decreases to pi^2/16
    fit = fit_constant(rectangle_records())
    assert fit.argmin.startswith("rectangle-eps0.0500")
    assert fit.c_min == pytest.approx(math.pi**2 / 16, rel=0.02)


# -- sharpness -------------------------------------------------------------------------------


def test_sharpness_oracle_values():
    assert rectangle_oracle(0.2) == math.pi**2 / 3.96
    assert rectangle_oracle(0.2) == pytest.approx(2.49232, abs=1e-5)
    table = sharpness_check([0.1])
    assert table.rows[0].ratio_oracle == pytest.approx(0.61840, abs=1e-5)


def test_sharpness_table():
    table = sharpness_check([0.2, 0.1])
    assert table.all_ok
    assert table.ratio_monotone
    for row in table.rows:
        assert row.mu1_oracle == rectangle_oracle(row.eps)
        assert row.rel_error <= 0.01
        assert row.ratio_rel_error <= 0.02
    d = table.as_dict()
    assert d["limit"] == pytest.approx(math.pi**2 / 16)
    assert len(d["rows"]) == 2


def test_sharpness_rejects_thick_rectangles():
    with pytest.raises(ValueError, match="0.3"):
        sharpness_check([0.4])


# -- checks ----------------------------------------------------------------------------------


def test_caps_file_has_provenance():
    caps = load_caps()
    assert set(caps["caps"]) == set(RATIO_FIELDS)
    assert set(caps["provenance"]["families"]) == {"rectangle", "isoceles_triangle", "hex_lens"}
    assert all(v > 0 for v in caps["caps"].values())


def good_record(**kw):
    base = dict(
        slack=0.01, mu1N=2.5, ode_gap_margin=0.0, decomposition_slack=0.1, identity_residual=1e-3,
        liyau_ratio=1.0, poincare_ratio=0.5, identity_order=2.0,
    )
    base.update({name: 0.0 for name in RATIO_FIELDS})
    base.update(kw)
    return record(**base)


def test_check_records_passes_and_fails():
    assert check_records([good_record()]).ok
    rep = check_records([good_record(slack=-0.01, liyau_ratio=1.2, r_eta10=1e9)])
    assert sorted(f.check for f in rep.failures) == ["liyau_ratio", "r_eta10", "slack"]
    assert "slack = -0.01" in str(rep.failures[[f.check for f in rep.failures].index("slack")])


def test_check_records_caps_apply_to_capped_families_only():
    caps = {"caps": {"r_eta10": 1.0}, "provenance": {"families": ["rectangle"]}}
    assert not check_records([good_record(r_eta10=2.0)], caps).ok
    assert check_records([good_record(r_eta10=2.0, family="random_convex")], caps).ok


def test_check_records_one_minus_k_only_on_thin_records():
    caps = {"caps": {"r_one_minus_k": 1e-8}, "provenance": {"families": ["rectangle"]}}
    assert check_records([good_record(r_one_minus_k=1.0, thin=False)], caps).ok
    assert not check_records([good_record(r_one_minus_k=1.0, thin=True)], caps).ok
