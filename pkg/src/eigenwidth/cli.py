"""Command line entry point ``eigenwidth``.

Exit codes: 0 success, 1 usage or input error, 2 solver failure, 3 a
``--check`` assertion failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._eigen import SolverError

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3
SUITE_EPS = (0.2, 0.1, 0.05, 0.025)

log = logging.getLogger("eigenwidth")


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which we reserve for solver failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def _emit(data: dict, out: Path | None) -> None:
    text = json.dumps(_jsonable(data), indent=2)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    print(text)


def _figure(fn, path: Path, *args, **kw) -> None:
    try:
        fn(*args, path, **kw)
        log.info("figure written to %s", path)
    except Exception as exc:  # a broken figure must not change the exit code
        log.warning("figure %s not written: %s", path, exc)


def _framed(path):
    from .geometry import normalize_w_frame, read_polygon

    return normalize_w_frame(read_polygon(path))


# -- subcommands ------------------------------------------------------------


def cmd_width(args) -> int:
    from .geometry import diameter, projective_width, read_polygon, width

    poly = read_polygon(args.polygon)
    _, frame = _framed(args.polygon)
    w, _ = width(poly)
    pw, _ = projective_width(poly)
    print("\t".join(repr(float(v)) for v in (diameter(poly), w, pw, frame.d, frame.eps)))
    return EXIT_OK


def cmd_profile(args) -> int:
    from .plotting import plot_profile
    from .profile import build_profile

    poly, _ = _framed(args.polygon)
    prof = build_profile(poly, extra_samples=args.samples)
    if args.out is None:
        print("x,h,h_minus,h_plus")
        for row in zip(prof.grid, prof.h, prof.h_minus, prof.h_plus):
            print(",".join(repr(float(v)) for v in row))
        return EXIT_OK
    prof.to_csv(args.out)
    if args.plot:
        _figure(plot_profile, args.out.with_suffix(".png"), prof, polygon=poly)
    return EXIT_OK


def _load_profile(path):
    from .profile import HeightProfile

    return HeightProfile.from_csv(path)


def cmd_ode(args) -> int:
    from .plotting import plot_ode
    from .profile import regularize
    from .sl_ode import l2_bounds, solve_weighted_neumann, verify_gradient_bounds

    prof = _load_profile(args.profile)
    if args.regularize is not None:
        prof = regularize(prof, args.regularize)
        sol = solve_weighted_neumann(prof, args.elements, regularized=False)
    else:
        sol = solve_weighted_neumann(prof, args.elements)
    gb = verify_gradient_bounds(sol, prof)
    l2 = l2_bounds(sol, prof)
    data = {
        "mu1N": sol.mu1N,
        "x0": sol.x0,
        "residual": sol.residual,
        "ratios": {"r1": l2.r1, "r2": l2.r2, "sup_phi": gb.sup_abs, "min_slope": gb.min_slope},
        "extrapolation": sol.extrapolation,
    }
    if args.phi is not None:
        args.phi.parent.mkdir(parents=True, exist_ok=True)
        with open(args.phi, "w") as f:
            f.write("x,phi\n")
            for x, p in zip(sol.grid, sol.phi):
                f.write(f"{float(x)!r},{float(p)!r}\n")
    _emit(data, args.out)
    anchor = args.phi or args.out
    if args.plot and anchor is not None:
        _figure(plot_ode, anchor.with_name(anchor.stem + "_ode.png"), sol)
    return EXIT_OK


def cmd_pde(args) -> int:
    from .fem2d import solve_neumann_eig, triangulate, write_vtk
    from .plotting import plot_pde

    poly, frame = _framed(args.polygon)
    mesh = triangulate(poly, args.edge, frame.eps)
    sol = solve_neumann_eig(mesh)
    data = {
        "mu1": sol.mu1,
        "k": sol.k,
        "nodes": sol.mesh.n_nodes,
        "residual": sol.relative_residual,
        "mirrored": sol.mirrored,
        "d": frame.d,
        "eps": frame.eps,
    }
    if args.vtk is not None:
        write_vtk(sol, args.vtk)
    _emit(data, args.out)
    anchor = args.out or args.vtk
    if args.plot and anchor is not None:
        _figure(plot_pde, anchor.with_name(anchor.stem + "_pde.png"), sol)
    return EXIT_OK


def cmd_liouville(args) -> int:
    from .liouville import dirichlet_rayleigh, second_term, transform
    from .plotting import plot_liouville
    from .sl_ode import solve_weighted_neumann

    prof = _load_profile(args.profile)
    sol = solve_weighted_neumann(prof, args.elements)
    data_l = transform(prof, sol)
    st = second_term(prof, sol)
    data = {
        "mu1N": sol.mu1N,
        "dirichlet_rq": dirichlet_rayleigh(data_l),
        "residual": data_l.mu_identity_residual,
        "T_A": st.T_A,
        "T_full": st.T_full,
        "T_zeta": st.T_zeta,
    }
    _emit(data, args.out)
    if args.plot and args.out is not None:
        _figure(plot_liouville, args.out.with_suffix(".png"), data_l)
    return EXIT_OK


def cmd_compare(args) -> int:
    from . import bridge
    from .geometry import read_polygon
    from .harness import SweepConfig, solve_domain
    from .plotting import plot_bridge
    from .profile import build_profile
    from .sl_ode import solve_weighted_neumann

    cfg = SweepConfig(max_edge=args.edge)
    _, _, sol = solve_domain(read_polygon(args.polygon), cfg)
    prof = build_profile(sol.polygon)
    ode = solve_weighted_neumann(prof, args.elements)
    rep = bridge.build_report(sol, prof, ode, args.samples)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / "bridge.csv")
    _emit(rep.summary(), out / "bridge.json")
    if args.plot:
        _figure(plot_bridge, out / "bridge.png", rep)
    return EXIT_OK


def _family_dicts(args) -> list:
    """FamilySpec dictionaries from --config, then command-line overrides."""
    fams = []
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: {exc}") from exc
        if isinstance(cfg, dict) and "families" in cfg:
            fams = [dict(f) for f in cfg["families"]]
        elif isinstance(cfg, dict):
            fams = [cfg]
        else:
            raise UsageError("config must be a JSON object")
    if args.kind is not None:
        base = fams[0] if fams else {}
        fams = [dict(base, kind=args.kind)]
    if not fams:
        from .harness import DETERMINISTIC_KINDS

        fams = [{"kind": k} for k in DETERMINISTIC_KINDS]
    for f in fams:
        f.setdefault("eps", list(SUITE_EPS))
        for key in ("eps", "seed", "refinement", "count"):
            val = getattr(args, key)
            if val is not None:
                f[key] = val
    return fams


def cmd_sweep(args) -> int:
    from .harness import FamilySpec, check_records, load_caps, sweep
    from .plotting import plot_sweep

    try:
        specs = [FamilySpec.from_dict(f) for f in _family_dicts(args)]
    except (TypeError, KeyError) as exc:
        raise UsageError(f"bad family spec: {exc}") from exc
    out = Path(args.out)
    records = sweep(specs, out_dir=out, workers=args.workers)
    lines = _sweep_summary(records)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if args.plot:
        _figure(plot_sweep, out / "sweep.png", records)
    if args.check:
        rep = check_records(records, load_caps(args.caps))
        for f in rep.failures:
            print(f"CHECK FAILED {f}", file=sys.stderr)
        if not rep.ok:
            raise CheckFailed(f"{len(rep.failures)} check(s) failed over {rep.checked} records")
        print(f"check: {rep.checked} records ok")
    return EXIT_OK


def _sweep_summary(records) -> list:
    from .harness import fit_constant

    lines = [f"{'domain':34s} {'status':7s} {'eps':>8s} {'mu1':>12s} {'mu1N':>12s} {'c_hat':>9s}"]
    for r in records:
        lines.append(f"{r.domain_id:34s} {r.status:7s} {r.eps:8.4f} {r.mu1:12.8f} {r.mu1N:12.8f} {r.c_hat:9.4f}")
    ok = [r for r in records if r.ok]
    lines.append(f"{len(ok)}/{len(records)} domains ok")
    if ok:
        fit = fit_constant(ok)
        lines.append(f"c_min = {fit.c_min:.6f} at {fit.argmin}")
    return lines


def cmd_sharpness(args) -> int:
    from .harness import sharpness_check
    from .plotting import plot_sharpness

    table = sharpness_check(args.eps, refinement=args.refinement or 0)
    print(f"{'eps':>6s} {'mu1 FEM':>12s} {'mu1 oracle':>12s} {'slack':>10s} {'slack/eps^2':>12s} {'rel err':>9s}")
    for r in table.rows:
        print(f"{r.eps:6.3f} {r.mu1:12.8f} {r.mu1_oracle:12.8f} {r.slack:10.6f} {r.ratio:12.6f} {r.rel_error:9.2e}")
    print(f"ratio monotone in eps: {table.ratio_monotone}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sharpness.json").write_text(json.dumps(_jsonable(table.as_dict()), indent=2) + "\n")
        if args.plot:
            _figure(plot_sharpness, out / "sharpness.png", table)
    if args.check and not table.all_ok:
        raise CheckFailed(f"FEM differs from the closed form by more than {table.tolerance:.0%}")
    return EXIT_OK


def cmd_fit(args) -> int:
    from .harness import fit_constant, read_csv

    records = read_csv(args.records)
    fit = fit_constant(records, thin_only=args.thin_only)
    _emit(fit.as_dict(), args.out)
    if args.check and not fit.c_min > args.min:
        raise CheckFailed(f"c_min = {fit.c_min:.6g} is not above {args.min}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eigenwidth", description="First Neumann eigenvalues of thin convex planar domains.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.set_defaults(func=fn)
        return sp

    def no_plot(sp):
        sp.add_argument("--no-plot", dest="plot", action="store_false", help="skip the figure")

    sp = add("width", cmd_width, "print diameter, width, projective width, d and eps (tab separated)")
    sp.add_argument("polygon", type=Path)

    sp = add("profile", cmd_profile, "height profile of the w-framed polygon as CSV")
    sp.add_argument("polygon", type=Path)
    sp.add_argument("--samples", type=int, default=0, help="extra uniform samples added to the vertex abscissas")
    sp.add_argument("--out", type=Path, help="CSV path (default: stdout)")
    no_plot(sp)

    sp = add("ode", cmd_ode, "first eigenpair of the weighted Neumann problem for a profile CSV")
    sp.add_argument("profile", type=Path)
    sp.add_argument("--elements", type=int, default=2048)
    sp.add_argument("--regularize", type=int, metavar="K", help="solve with h + 1/K instead of extrapolating")
    sp.add_argument("--phi", type=Path, help="write phi.csv here")
    sp.add_argument("--out", type=Path, help="also write the JSON here")
    no_plot(sp)

    sp = add("pde", cmd_pde, "first nonzero Neumann eigenpair of a polygon by P1 finite elements")
    sp.add_argument("polygon", type=Path)
    sp.add_argument("--edge", type=_positive_float, default=0.02, help="target mesh edge")
    sp.add_argument("--vtk", type=Path, help="legacy VTK dump of mesh and u")
    sp.add_argument("--out", type=Path, help="also write the JSON here")
    no_plot(sp)

    sp = add("liouville", cmd_liouville, "Liouville transform and second-term integrals for a profile CSV")
    sp.add_argument("profile", type=Path)
    sp.add_argument("--elements", type=int, default=2048)
    sp.add_argument("--out", type=Path, help="also write the JSON here")
    no_plot(sp)

    sp = add("compare", cmd_compare, "PDE vs ODE bridge report for one polygon")
    sp.add_argument("polygon", type=Path)
    sp.add_argument("--out-dir", type=Path, default=Path("."))
    sp.add_argument("--edge", type=_positive_float, default=0.02)
    sp.add_argument("--elements", type=int, default=2048)
    sp.add_argument("--samples", type=int, default=1024)
    no_plot(sp)

    sp = add("sweep", cmd_sweep, "run domain families end to end and write records")
    sp.add_argument("--config", type=Path, help="JSON file with FamilySpec fields or a 'families' list")
    sp.add_argument("--kind", choices=("rectangle", "isoceles_triangle", "hex_lens", "random_convex"))
    sp.add_argument("--eps", type=float, nargs="+")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--refinement", type=int)
    sp.add_argument("--count", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out", type=Path, default=Path("sweep_out"))
    sp.add_argument("--check", action="store_true", help="exit 3 unless every record passes the checks")
    sp.add_argument("--caps", type=Path, help="caps file (default: the packaged one)")
    no_plot(sp)

    sp = add("sharpness", cmd_sharpness, "rectangle eigenvalues against the closed form")
    sp.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    sp.add_argument("--refinement", type=int, default=0)
    sp.add_argument("--out", type=Path)
    sp.add_argument("--check", action="store_true", help="exit 3 unless within 1%% of the closed form")
    no_plot(sp)

    sp = add("fit", cmd_fit, "empirical constant min slack/eps^2 from a records CSV")
    sp.add_argument("records", type=Path)
    sp.add_argument("--thin-only", action="store_true")
    sp.add_argument("--out", type=Path)
    sp.add_argument("--check", action="store_true", help="exit 3 unless c_min exceeds --min")
    sp.add_argument("--min", type=float, default=0.05)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(f"eigenwidth: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (SolverError, RuntimeError) as exc:
        print(f"eigenwidth: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (UsageError, ValueError, OSError) as exc:
        print(f"eigenwidth: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
