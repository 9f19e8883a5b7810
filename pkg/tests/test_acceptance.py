"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line through the ``acceptance`` fixture; the
lines are printed in the terminal summary.  Tolerances are pinned below.
"""

import math
import time

import numpy as np
import pytest
from conftest import FAMILIES, PW, random_polygons
from scipy.optimize import brentq

from eigenwidth.cli import SUITE_EPS
from eigenwidth.geometry import normalize_w_frame, projective_width, width
from eigenwidth.harness import (
    DETERMINISTIC_KINDS,
    FamilySpec,
    fit_constant,
    generate_family,
    load_caps,
    sharpness_check,
    sweep,
)
from eigenwidth.liouville import transform
from eigenwidth.profile import build_profile, derivative_identity_residual, profile_from_function, regularize
from eigenwidth.sl_ode import shooting_cross_check, solve_weighted_neumann

# criterion 1
SHARP_EPS = (0.2, 0.1, 0.05)
SHARP_MU_TOL = 0.01
SHARP_RATIO_TOL = 0.02
SHARP_SECONDS = 180.0
# criterion 2
CONST_TOL = 1e-5
BESSEL_TOL = 1e-4
SHOOTING_TOL = 1e-4
# criterion 3
MU_N_LOW = PW * 0.999
MU_N_HIGH = 25.025
# criterion 4
N_RANDOM = 500
WIDTH_TOL = 1e-9
# criterion 5
IDENTITY_TOL = 1e-2
IDENTITY_ORDER = 1.0
# criterion 7
C_MIN_FLOOR = 0.05
SLACK_FLOOR = -1e-3
RECT_LIMIT_TOL = 0.05
# criterion 8
LIOUVILLE_TOL = 1e-2
REG_K = 10_000
# criterion 9
LIYAU_CAP = 1.1
DIRECTIONAL_FIELDS = ("dir_ratio", "dir_end_ratio")


def suite_specs():
    return [FamilySpec(kind, SUITE_EPS) for kind in DETERMINISTIC_KINDS]


@pytest.fixture(scope="module")
def standard_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep_a")
    records = sweep(suite_specs(), out_dir=out, workers=1)
    return records, out / "records.csv"


def suite_profiles():
    """Profiles of the deterministic families at every suite eps, plus seeded random hulls."""
    out = {}
    for kind in DETERMINISTIC_KINDS:
        for eps in SUITE_EPS:
            poly, _ = normalize_w_frame(FAMILIES[kind](eps))
            out[f"{kind}-{eps}"] = build_profile(poly)
    for did, poly in generate_family(FamilySpec("random_convex", SUITE_EPS, seed=7, count=3)):
        framed, _ = normalize_w_frame(poly)
        out[did] = build_profile(framed)
    return out


def bessel_j1(x, terms=40):
    s, term = 0.0, x / 2
    for m in range(terms):
        s += term
        term *= -((x / 2) ** 2) / ((m + 1) * (m + 2))
    return s


def test_criterion_01_rectangle_sharpness(acceptance):
    t0 = time.perf_counter()
    table = sharpness_check(SHARP_EPS)
    elapsed = time.perf_counter() - t0
    mu_err = max(r.rel_error for r in table.rows)
    ratio_err = max(r.ratio_rel_error for r in table.rows)
    for r in table.rows:
        assert r.mu1_oracle == math.pi**2 / (4 - r.eps**2)
        assert r.ratio_oracle == pytest.approx(math.pi**2 / (4 * (4 - r.eps**2)), rel=1e-14)
    ok = mu_err <= SHARP_MU_TOL and ratio_err <= SHARP_RATIO_TOL and elapsed <= SHARP_SECONDS
    acceptance(1, ok, f"max mu1 rel err {mu_err:.2e}, max slack/eps^2 rel err {ratio_err:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_ode_analytics(acceptance):
    const = solve_weighted_neumann(profile_from_function(lambda x: 1.0, 2.0, 16))
    err_const = abs(const.mu1N - PW) / PW
    j11 = brentq(bessel_j1, 3.0, 4.5, xtol=1e-14)
    assert abs(j11 - 3.8317059702) <= 1e-10
    linear = solve_weighted_neumann(profile_from_function(lambda x: x, 2.0, 2048))
    err_lin = abs(linear.mu1N - (j11 / 2) ** 2) / (j11 / 2) ** 2
    worst, worst_id = 0.0, ""
    for did, prof in suite_profiles().items():
        g = solve_weighted_neumann(prof).mu1N
        s = shooting_cross_check(prof)
        if abs(g - s) / s > worst:
            worst, worst_id = abs(g - s) / s, did
    ok = err_const <= CONST_TOL and err_lin <= BESSEL_TOL and worst <= SHOOTING_TOL
    acceptance(2, ok, f"h=1 {err_const:.1e}, h=x {err_lin:.1e}, Galerkin vs shooting {worst:.1e} ({worst_id})")
    assert ok


def test_criterion_03_universal_ode_bounds(acceptance):
    mus = {did: solve_weighted_neumann(prof).mu1N for did, prof in suite_profiles().items()}
    lo, hi = min(mus.values()), max(mus.values())
    ok = lo >= MU_N_LOW and hi <= MU_N_HIGH
    acceptance(3, ok, f"{len(mus)} profiles, mu1(N) in [{lo:.6f}, {hi:.6f}]")
    assert ok


def test_criterion_04_planar_width_equalities(acceptance):
    w_err = h_err = id_res = 0.0
    for poly in random_polygons(N_RANDOM, seed=2024):
        w, _ = width(poly)
        pw, _ = projective_width(poly)
        w_err = max(w_err, abs(w - pw) / pw)
        framed, frame = normalize_w_frame(poly)
        prof = build_profile(framed)
        h_err = max(h_err, abs(prof.hmax - frame.eps))
        id_res = max(id_res, derivative_identity_residual(prof))
    ok = w_err <= WIDTH_TOL and h_err <= WIDTH_TOL and id_res <= WIDTH_TOL
    acceptance(4, ok, f"{N_RANDOM} polygons: width/pwidth {w_err:.1e}, max h - eps {h_err:.1e}, identity {id_res:.1e}")
    assert ok


def test_criterion_05_bridge_identity(acceptance, standard_sweep):
    records, _ = standard_sweep
    assert all(r.ok for r in records)
    worst = max(records, key=lambda r: r.identity_residual)
    slowest = min(records, key=lambda r: r.identity_order)
    ok = all(
        r.identity_residual <= IDENTITY_TOL and r.identity_residual_fine < r.identity_residual and r.identity_order >= IDENTITY_ORDER
        for r in records
    )
    acceptance(
        5,
        ok,
        f"max residual {worst.identity_residual:.2e} ({worst.domain_id}), min order {slowest.identity_order:.2f} ({slowest.domain_id})",
    )
    assert ok


def test_criterion_06_bound_ratio_caps(acceptance, standard_sweep):
    records, _ = standard_sweep
    caps = load_caps()
    assert set(caps["provenance"]["families"]) == set(DETERMINISTIC_KINDS)
    over = []
    margin = math.inf
    for name, cap in caps["caps"].items():
        for r in records:
            if name == "r_one_minus_k" and not r.thin:
                continue
            value = getattr(r, name)
            if not value <= cap:
                over.append(f"{r.domain_id}:{name}={value:.3g}>{cap:.3g}")
            margin = min(margin, cap / value if value > 0 else math.inf)
    ok = not over
    detail = f"{len(caps['caps'])} ratios x {len(records)} domains, tightest cap/value {margin:.2f}"
    acceptance(6, ok, detail if ok else detail + "; " + ", ".join(over))
    assert ok


def test_criterion_07_main_inequality(acceptance, standard_sweep):
    records, _ = standard_sweep
    fit = fit_constant(records)
    min_slack = min(r.slack for r in records)
    rect = [r for r in records if r.family == "rectangle" and r.eps_target == min(SUITE_EPS)]
    assert len(rect) == 1
    rect_fit = fit_constant([r for r in records if r.family == "rectangle"])
    rect_err = abs(rect[0].c_hat - math.pi**2 / 16) / (math.pi**2 / 16)
    ok = fit.c_min > C_MIN_FLOOR and min_slack >= SLACK_FLOOR and rect_err <= RECT_LIMIT_TOL and rect_fit.argmin == rect[0].domain_id
    acceptance(
        7,
        ok,
        f"c_min {fit.c_min:.4f} ({fit.argmin}), min slack {min_slack:.3e}, rectangle eps 0.025 c_hat {rect[0].c_hat:.4f} vs pi^2/16 ({rect_err:.1%})",
    )
    assert ok


def test_criterion_08_liouville_identity(acceptance, standard_sweep):
    records, _ = standard_sweep
    const = profile_from_function(lambda x: 1.0, 2.0, 16)
    worst = transform(const, solve_weighted_neumann(const)).mu_identity_residual
    worst_id = "constant"
    for kind in DETERMINISTIC_KINDS:
        for eps in SUITE_EPS:
            poly, _ = normalize_w_frame(FAMILIES[kind](eps))
            prof = regularize(build_profile(poly), REG_K)
            res = transform(prof, solve_weighted_neumann(prof, regularized=False)).mu_identity_residual
            if res > worst:
                worst, worst_id = res, f"{kind}-{eps}"
    min_dec = min(r.decomposition_slack for r in records)
    ok = worst <= LIOUVILLE_TOL and min_dec >= 0
    acceptance(8, ok, f"max Dirichlet/Neumann residual {worst:.2e} ({worst_id}), min decomposition slack {min_dec:.3e}")
    assert ok


def test_criterion_09_gradient_estimates(acceptance, standard_sweep):
    records, _ = standard_sweep
    caps = load_caps()["caps"]
    liyau = max(r.liyau_ratio for r in records)
    directional = {name: max(getattr(r, name) for r in records) for name in DIRECTIONAL_FIELDS}
    ok = liyau <= LIYAU_CAP and all(directional[n] <= caps[n] for n in DIRECTIONAL_FIELDS)
    parts = ", ".join(f"{n} {directional[n]:.3f} (cap {caps[n]:.3f})" for n in DIRECTIONAL_FIELDS)
    acceptance(9, ok, f"max Li-Yau ratio {liyau:.4f}, {parts}")
    assert ok


def test_criterion_10_determinism(acceptance, standard_sweep, tmp_path):
    _, first = standard_sweep
    # second run through a process pool, so completion order may differ
    sweep(suite_specs(), out_dir=tmp_path, workers=2)
    a, b = first.read_bytes(), (tmp_path / "records.csv").read_bytes()
    ok = a == b
    acceptance(10, ok, f"records.csv {len(a)} bytes, {'identical' if ok else 'different'}")
    assert ok
    assert np.all(np.frombuffer(a, dtype=np.uint8) == np.frombuffer(b, dtype=np.uint8))
