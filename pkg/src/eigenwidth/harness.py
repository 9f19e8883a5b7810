"""Domain families, end-to-end sweeps and the empirical constant.

A sweep runs every domain of a family through the whole pipeline (frame,
mesh, PDE, profile, ODE, Liouville, bridge) and flattens the results into an
:class:`InequalityRecord`.  Domains are independent, so they are farmed out to
a process pool; records are sorted by id before they are written, and floats
are written with ``repr`` so that reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from . import bridge
from .fem2d import directional_profile, gradient_bound_check, refine, solve_neumann_eig, triangulate
from .geometry import ConvexPolygon, diameter, normalize_w_frame, width
from .liouville import decomposition_slack, second_term, transform
from .profile import build_profile
from .sl_ode import l2_bounds, solve_weighted_neumann, verify_gradient_bounds

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
KINDS = ("rectangle", "isoceles_triangle", "hex_lens", "random_convex")
DETERMINISTIC_KINDS = KINDS[:3]
PW_CONSTANT = math.pi**2 / 4

# standard discretization; each refinement step halves the mesh edge and
# doubles the ODE elements and bridge samples
MAX_EDGE = 0.02
ODE_ELEMENTS = 2048
BRIDGE_SAMPLES = 1024


@dataclass(frozen=True)
class FamilySpec:
    kind: str
    eps: tuple
    seed: int = 0
    refinement: int = 0
    count: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}; expected one of {KINDS}")
        eps = tuple(float(e) for e in np.atleast_1d(self.eps))
        if not eps:
            raise ValueError("eps list is empty")
        if any(not (0 < e < 0.5) for e in eps):
            raise ValueError("eps values must lie in (0, 0.5)")
        if self.refinement < 0 or self.count < 1:
            raise ValueError("refinement must be >= 0 and count >= 1")
        object.__setattr__(self, "eps", eps)

    @classmethod
    def from_dict(cls, data: dict) -> "FamilySpec":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "eps": list(self.eps), "seed": self.seed, "refinement": self.refinement, "count": self.count}


def rectangle(eps: float) -> ConvexPolygon:
    a = math.sqrt(4.0 - eps**2)
    return ConvexPolygon([(0.0, 0.0), (a, 0.0), (a, eps), (0.0, eps)])


def isoceles_triangle(eps: float) -> ConvexPolygon:
    """Base 2 and apex height eps: diameter 2, width eps (the altitude onto the base)."""
    return ConvexPolygon([(0.0, 0.0), (2.0, 0.0), (1.0, eps)])


def hex_lens(eps: float) -> ConvexPolygon:
    """Symmetric hexagon with long axis 2 and height eps."""
    e = 0.5 * eps
    return ConvexPolygon([(0.0, 0.0), (0.5, -e), (1.5, -e), (2.0, 0.0), (1.5, e), (0.5, e)])


def random_convex(eps: float, rng: np.random.Generator, n_points: int = 12, attempts: int = 1000) -> ConvexPolygon:
    """Hull of random points in a thin box, rescaled to diameter 2, with width within 10% of eps."""
    for _ in range(attempts):
        half = 0.5 * eps * rng.uniform(0.9, 1.4)
        pts = np.column_stack([rng.uniform(-1.0, 1.0, n_points), rng.uniform(-half, half, n_points)])
        hull = pts[ConvexHull(pts).vertices]
        poly = ConvexPolygon(hull)
        poly = poly.transformed(scale=2.0 / diameter(poly))
        w, _ = width(poly)
        if abs(w - eps) <= 0.1 * eps:
            return poly.transformed(rotation=rng.uniform(0.0, math.pi))
    raise ValueError(f"random_convex: no polygon with width within 10% of {eps} after {attempts} attempts")


def domain_id(kind: str, eps: float, index: int) -> str:
    return f"{kind}-eps{eps:.4f}-{index:02d}"


def generate_family(spec: FamilySpec):
    """List of ``(domain_id, polygon)`` pairs in a fixed order."""
    out = []
    for j, eps in enumerate(spec.eps):
        for i in range(spec.count):
            if spec.kind == "random_convex":
                rng = np.random.default_rng([spec.seed, j, i])
                poly = random_convex(eps, rng)
            else:
                poly = {"rectangle": rectangle, "isoceles_triangle": isoceles_triangle, "hex_lens": hex_lens}[spec.kind](eps)
            out.append((domain_id(spec.kind, eps, i), poly))
    return out


@dataclass
class InequalityRecord:
    schema_version: int
    domain_id: str
    family: str
    status: str
    eps_target: float
    d: float
    eps: float
    thin: bool
    mu1: float = math.nan
    mu1N: float = math.nan
    slack: float = math.nan
    c_hat: float = math.nan
    gap_ode: float = math.nan
    k: float = math.nan
    one_minus_k: float = math.nan
    r_one_minus_k: float = math.nan
    pde_residual: float = math.nan
    nodes: int = 0
    mirrored: bool = False
    ode_residual: float = math.nan
    x0: float = math.nan
    phi_sup: float = math.nan
    phi_min_slope: float = math.nan
    r1: float = math.nan
    r2: float = math.nan
    c1: float = math.nan
    c1_ratio: float = math.nan
    identity_residual: float = math.nan
    identity_residual_fine: float = math.nan
    identity_order: float = math.nan
    ode_gap_allowance: float = math.nan
    ode_gap_margin: float = math.nan
    r_eta5: float = math.nan
    r_gap: float = math.nan
    r_vert: float = math.nan
    r_eta10: float = math.nan
    r_int10: float = math.nan
    poincare_ratio: float = math.nan
    mean_residual: float = math.nan
    eta_end_mismatch: float = math.nan
    liyau_ratio: float = math.nan
    dir_ratio: float = math.nan
    dir_end_ratio: float = math.nan
    liouville_residual: float = math.nan
    decomposition_slack: float = math.nan
    T_A: float = math.nan
    T_full: float = math.nan
    T_zeta: float = math.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


RATIO_FIELDS = ("r_eta5", "r_gap", "r_vert", "r_eta10", "r_int10", "c1_ratio", "dir_ratio", "dir_end_ratio", "r_one_minus_k", "r1", "phi_sup")


@dataclass
class SweepConfig:
    """Discretization knobs shared by every domain of a sweep."""

    refinement: int = 0
    max_edge: float = MAX_EDGE
    ode_elements: int = ODE_ELEMENTS
    bridge_samples: int = BRIDGE_SAMPLES
    identity_order: bool = True

    @property
    def scale(self) -> int:
        return 2**self.refinement


def solve_domain(poly: ConvexPolygon, cfg: SweepConfig):
    """Frame, mesh and PDE solve.  Returns ``(frame, base_mesh, sol)``."""
    framed, frame = normalize_w_frame(poly)
    mesh = triangulate(framed, min(frame.eps / 8, cfg.max_edge), frame.eps)
    for _ in range(cfg.refinement):
        mesh = refine(mesh)
    return frame, mesh, solve_neumann_eig(mesh)


def run_domain(did: str, family: str, eps_target: float, poly: ConvexPolygon, cfg: SweepConfig) -> InequalityRecord:
    """The full pipeline for one domain; errors become a failed record."""
    rec = InequalityRecord(
        schema_version=SCHEMA_VERSION,
        domain_id=did,
        family=family,
        status="failed",
        eps_target=eps_target,
        d=math.nan,
        eps=math.nan,
        thin=eps_target <= 0.05,
    )
    try:
        frame, mesh, sol = solve_domain(poly, cfg)
        rec.d, rec.eps, rec.thin = frame.d, frame.eps, frame.thin
        profile = build_profile(sol.polygon)
        ode = solve_weighted_neumann(profile, cfg.ode_elements * cfg.scale)
        n_samples = cfg.bridge_samples * cfg.scale
        rep = bridge.build_report(sol, profile, ode, n_samples)
        zeta_ode = ode.with_zeta(float(rep.utilde[0]))
        lv = transform(profile, zeta_ode)
        st = second_term(profile, zeta_ode)
        gb = verify_gradient_bounds(ode, profile)
        l2 = l2_bounds(ode, profile)
        ly = gradient_bound_check(sol)
        dp = directional_profile(sol, profile)
        eps = rec.eps
        parts = rep.identity_parts
        allowance = abs(parts["int_eta_du"]) / parts["int_h_u2"]
        rec.mu1, rec.mu1N = sol.mu1, ode.mu1N
        rec.slack = sol.mu1 - PW_CONSTANT
        rec.c_hat = rec.slack / eps**2
        rec.gap_ode = sol.mu1 - ode.mu1N
        rec.k, rec.one_minus_k = sol.k, 1.0 - sol.k
        rec.r_one_minus_k = rec.one_minus_k / eps**2
        rec.pde_residual = sol.relative_residual
        rec.nodes = sol.mesh.n_nodes
        rec.mirrored = sol.mirrored
        rec.ode_residual = ode.residual
        rec.x0, rec.phi_sup, rec.phi_min_slope = gb.x0, gb.sup_abs, gb.min_slope
        rec.r1, rec.r2 = l2.r1, l2.r2
        rec.c1 = rep.c1
        rec.c1_ratio = abs(rep.c1) / eps**3
        rec.identity_residual = rep.identity_residual
        rec.ode_gap_allowance = allowance
        rec.ode_gap_margin = sol.mu1 - (ode.mu1N - allowance) + rep.identity_residual * sol.mu1
        rec.r_eta5, rec.r_gap, rec.r_vert = rep.r_eta5, rep.gaps.total_ratio, rep.r_vert
        rec.r_eta10, rec.r_int10 = rep.r_eta10, rep.r_int10
        rec.poincare_ratio = rep.poincare_ratio
        rec.mean_residual, rec.eta_end_mismatch = rep.mean_residual, rep.eta_end_mismatch
        rec.liyau_ratio = ly.max_ratio
        rec.dir_ratio, rec.dir_end_ratio = dp.max_ratio, dp.end_ratio
        rec.liouville_residual = lv.mu_identity_residual
        rec.decomposition_slack = decomposition_slack(profile, zeta_ode, lv)
        rec.T_A, rec.T_full, rec.T_zeta = st.T_A, st.T_full, st.T_zeta
        if cfg.identity_order:
            fine = solve_neumann_eig(refine(mesh))
            fine_profile = build_profile(fine.polygon)
            rec.identity_residual_fine = bridge.identity_at(fine, fine_profile, 2 * n_samples)
            rec.identity_order = math.log2(rec.identity_residual / rec.identity_residual_fine)
        rec.status = "ok"
    except Exception as exc:  # per-domain isolation: a failure must not end the sweep
        log.warning("domain %s failed: %s", did, exc)
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _run_job(job):
    return run_domain(*job)


def sweep(specs, out_dir=None, workers: int | None = None, cfg: SweepConfig | None = None):
    """Run every domain of ``specs`` (one FamilySpec or a list); returns records sorted by id.

    With ``out_dir`` the records are written as ``records.csv`` and
    ``records.json``.  Raises when every domain failed.
    """
    if isinstance(specs, FamilySpec):
        specs = [specs]
    jobs = []
    for spec in specs:
        c = cfg if cfg is not None else SweepConfig(refinement=spec.refinement)
        for j, (did, poly) in enumerate(generate_family(spec)):
            jobs.append((did, spec.kind, spec.eps[j // spec.count], poly, c))
    if not jobs:
        raise ValueError("no domains to sweep")
    workers = workers if workers is not None else min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_job, jobs))
    else:
        records = [_run_job(j) for j in jobs]
    records.sort(key=lambda r: r.domain_id)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(records, out / "records.csv")
        write_json(records, out / "records.json", specs)
    if not any(r.ok for r in records):
        raise RuntimeError("every domain in the sweep failed")
    return records


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(records, path) -> None:
    names = [f.name for f in fields(InequalityRecord)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(names)
        for r in records:
            w.writerow([_fmt(getattr(r, n)) for n in names])


def read_csv(path):
    """Records back from :func:`write_csv`."""
    types = {f.name: f.type for f in fields(InequalityRecord)}
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            kw = {}
            for name, raw in row.items():
                t = types.get(name)
                if t is None:
                    continue
                if t in ("int", int):
                    kw[name] = int(raw)
                elif t in ("bool", bool):
                    kw[name] = raw == "1"
                elif t in ("float", float):
                    kw[name] = float(raw)
                else:
                    kw[name] = raw
            out.append(InequalityRecord(**kw))
    return out


def _clean(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def write_json(records, path, specs=()) -> None:
    data = {
        "schema_version": SCHEMA_VERSION,
        "families": [s.as_dict() for s in specs],
        "records": [{k: _clean(v) for k, v in asdict(r).items()} for r in records],
    }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=False) + "\n")


@dataclass
class FitResult:
    c_min: float
    argmin: str
    per_family: dict
    n_records: int
    thin_only: bool = False

    def as_dict(self):
        return dict(self.__dict__)


def fit_constant(records, thin_only: bool = False) -> FitResult:
    """c_min = min slack / eps**2 over successful records, with per-family minima."""
    use = [r for r in records if r.ok and (r.thin or not thin_only)]
    if not use:
        raise ValueError("no successful records to fit")
    best = min(use, key=lambda r: (r.c_hat, r.domain_id))
    fam = {}
    for r in use:
        cur = fam.get(r.family)
        if cur is None or r.c_hat < cur["c_min"]:
            fam[r.family] = {"c_min": r.c_hat, "argmin": r.domain_id}
    return FitResult(c_min=best.c_hat, argmin=best.domain_id, per_family=dict(sorted(fam.items())), n_records=len(use), thin_only=thin_only)


def rectangle_oracle(eps: float) -> float:
    """First Neumann eigenvalue of [0, sqrt(4 - eps^2)] x [0, eps] by separation of variables."""
    return math.pi**2 / (4.0 - eps**2)


@dataclass
class SharpnessRow:
    eps: float
    mu1: float
    mu1_oracle: float
    slack: float
    ratio: float
    ratio_oracle: float
    rel_error: float
    ratio_rel_error: float

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class SharpnessTable:
    rows: list
    tolerance: float = 0.01
    limit: float = math.pi**2 / 16

    @property
    def all_ok(self) -> bool:
        return all(r.rel_error <= self.tolerance for r in self.rows)

    @property
    def ratio_monotone(self) -> bool:
        """Tabulated slack/eps^2 decreasing as eps shrinks (rows in input order, sorted by eps)."""
        rs = [r.ratio for r in sorted(self.rows, key=lambda r: -r.eps)]
        return all(b <= a for a, b in zip(rs, rs[1:]))

    def as_dict(self):
        return {
            "rows": [r.as_dict() for r in self.rows],
            "tolerance": self.tolerance,
            "limit": self.limit,
            "all_ok": self.all_ok,
            "ratio_monotone": self.ratio_monotone,
        }


def sharpness_check(eps_list, refinement: int = 0, max_edge: float = MAX_EDGE) -> SharpnessTable:
    """FEM against the closed form on the rectangles [0, sqrt(4 - eps^2)] x [0, eps]."""
    rows = []
    cfg = SweepConfig(refinement=refinement, max_edge=max_edge)
    for eps in eps_list:
        eps = float(eps)
        if not 0 < eps <= 0.3:
            raise ValueError("sharpness_check needs 0 < eps <= 0.3")
        _, _, sol = solve_domain(rectangle(eps), cfg)
        oracle = rectangle_oracle(eps)
        slack = sol.mu1 - PW_CONSTANT
        ratio_oracle = math.pi**2 / (4.0 * (4.0 - eps**2))
        rows.append(
            SharpnessRow(
                eps=eps,
                mu1=sol.mu1,
                mu1_oracle=oracle,
                slack=slack,
                ratio=slack / eps**2,
                ratio_oracle=ratio_oracle,
                rel_error=abs(sol.mu1 - oracle) / oracle,
                ratio_rel_error=abs(slack / eps**2 - ratio_oracle) / ratio_oracle,
            )
        )
    return SharpnessTable(rows=rows)


def load_caps(path=None) -> dict:
    """Frozen ratio caps; the packaged file unless ``path`` is given."""
    if path is None:
        path = Path(__file__).with_name("data") / "caps.json"
    return json.loads(Path(path).read_text())


@dataclass
class CheckFailure:
    domain_id: str
    check: str
    value: float
    bound: float

    def __str__(self):
        return f"{self.domain_id}: {self.check} = {float(self.value)!r} (bound {float(self.bound)!r})"


@dataclass
class CheckReport:
    failures: list = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures


def check_records(records, caps: dict | None = None) -> CheckReport:
    """Assertions applied in ``--check`` mode to every successful record.

    Failed records count as failures too.  Ratio caps apply to the families
    they were derived from; other families (random hulls) get the
    family-independent checks only.
    """
    caps = load_caps() if caps is None else caps
    ratio_caps = caps.get("caps", {})
    capped = set(caps.get("provenance", {}).get("families", ()))
    rep = CheckReport()
    for r in records:
        rep.checked += 1
        if not r.ok:
            rep.failures.append(CheckFailure(r.domain_id, "status", math.nan, math.nan))
            continue
        bounds = [
            ("slack", r.slack, -1e-3, ">="),
            ("mu1N_low", r.mu1N, PW_CONSTANT * 0.999, ">="),
            ("mu1N_high", r.mu1N, 25.025, "<="),
            ("ode_gap_margin", r.ode_gap_margin, 0.0, ">="),
            ("decomposition_slack", r.decomposition_slack, 0.0, ">="),
            ("identity_residual", r.identity_residual, 1e-2, "<="),
            ("liyau_ratio", r.liyau_ratio, 1.1, "<="),
            ("poincare_ratio", r.poincare_ratio, 1.05, "<="),
        ]
        if math.isfinite(r.identity_order):
            bounds.append(("identity_order", r.identity_order, 1.0, ">="))
        if r.family in capped:
            for name, cap in ratio_caps.items():
                if name == "r_one_minus_k" and not r.thin:
                    continue
                bounds.append((name, getattr(r, name), cap, "<="))
        for name, value, bound, op in bounds:
            good = value >= bound if op == ">=" else value <= bound
            if not good:
                rep.failures.append(CheckFailure(r.domain_id, name, value, bound))
    return rep
