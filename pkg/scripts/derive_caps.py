"""Freeze the ratio caps used by the acceptance suite and ``sweep --check``.

Runs the three deterministic families at eps in {0.2, 0.1, 0.05, 0.025} one
refinement step above standard (mesh edge halved, ODE elements and bridge
samples doubled), takes the maximum of every ratio over all twelve domains
and multiplies it by the headroom factor.  Ratios that vanish by symmetry get the additive
roundoff floor instead of a zero cap.

    python scripts/derive_caps.py [--out src/eigenwidth/data/caps.json]
"""

import argparse
import datetime
import json
import platform
import subprocess
import time
from pathlib import Path

import numpy as np
import scipy

from eigenwidth import __version__
from eigenwidth.harness import DETERMINISTIC_KINDS, RATIO_FIELDS, SCHEMA_VERSION, FamilySpec, sweep

EPS = (0.2, 0.1, 0.05, 0.025)
HEADROOM = 2.0
FLOOR = 1e-9
REFINEMENT = 1


def git_revision():
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, check=True)
        return out.stdout.strip()
    except (OSError, subprocess.CalledProcessError):
        return "unknown"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    default = Path(__file__).resolve().parents[1] / "src" / "eigenwidth" / "data" / "caps.json"
    ap.add_argument("--out", type=Path, default=default)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    specs = [FamilySpec(kind, EPS, refinement=REFINEMENT) for kind in DETERMINISTIC_KINDS]
    records = sweep(specs, workers=args.workers)
    failed = [r.domain_id for r in records if not r.ok]
    if failed:
        raise SystemExit(f"cap derivation needs every domain to succeed; failed: {failed}")

    # one cap per ratio over all families and eps; per-family peaks are kept
    # in "raw" for diagnosis
    caps, raw = {}, {}
    for name in RATIO_FIELDS:
        # 1 - k is only bounded for thin domains
        use = [r for r in records if name != "r_one_minus_k" or r.thin]
        vals = [getattr(r, name) for r in use]
        caps[name] = HEADROOM * float(np.max(vals)) + FLOOR
        raw[name] = {"max": float(np.max(vals)), "argmax": use[int(np.argmax(vals))].domain_id}
        for kind in DETERMINISTIC_KINDS:
            fam = [getattr(r, name) for r in use if r.family == kind]
            raw[name][kind] = float(np.max(fam))

    data = {
        "schema_version": SCHEMA_VERSION,
        "caps": caps,
        "provenance": {
            "script": "scripts/derive_caps.py",
            "created": datetime.date.today().isoformat(),
            "git_revision": git_revision(),
            "package_version": __version__,
            "families": list(DETERMINISTIC_KINDS),
            "eps": list(EPS),
            "refinement_steps": REFINEMENT,
            "headroom": HEADROOM,
            "floor": FLOOR,
            "rule": "cap = headroom * max over families and eps (refined run) + floor",
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
            "runtime_s": round(time.perf_counter() - t0, 1),
        },
        "raw": raw,
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(data, indent=2) + "\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
