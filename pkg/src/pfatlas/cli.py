"""Command-line front end: ``pfatlas --case case9 --relax sdp``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from importlib import resources
from pathlib import Path

from .bisect import Certificate, Tolerances
from .caseio import CaseError, load_case, scale_load
from .gpfmodel import RegionSpec, load_region
from .refine import LocateResult, RefineOptions, locate_all

EXIT_FOUND = 0
EXIT_INPUT = 2
EXIT_NONE = 3
EXIT_BUDGET = 4

log = logging.getLogger("pfatlas")


def _positive(kind):
    def parse(text):
        val = kind(text)
        if not val > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return val
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfatlas", description="Locate all real power-flow solutions in a box.")
    p.add_argument("--case", required=True, help="case file path or bundled name (case9, case14)")
    p.add_argument("--relax", choices=["rlt", "socp", "sdp"], default="sdp")
    p.add_argument("--eps-r", type=_positive(float), default=1e-5, help="pruning threshold (p.u. mismatch)")
    p.add_argument("--eps-v", type=_positive(float), default=1e-2, help="accepted box width (p.u.)")
    p.add_argument("--coarse-eps-v", type=_positive(float), help="run a coarse pass first at this width")
    p.add_argument("--region", help="region file path or bundled name (caseA .. caseF)")
    p.add_argument("--pad", type=float, help="angle-difference limit on every line, degrees")
    p.add_argument("--lambda", dest="lam", type=_positive(float), help="scale active demand by this factor")
    p.add_argument("--max-nodes", type=_positive(int), default=200_000)
    p.add_argument("--workers", type=_positive(int), default=1)
    p.add_argument("--out", help="write solutions JSON here (default: stdout)")
    p.add_argument("--trace", help="write the per-iteration trace CSV here")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def resolve_region(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    stem = path.name.removesuffix(".region")
    bundled = resources.files("pfatlas.data") / "regions" / f"{stem}.region"
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"region file not found: {name}")


def _region(args) -> RegionSpec:
    region = load_region(resolve_region(args.region)) if args.region else RegionSpec()
    if args.pad is not None:
        region = RegionSpec(region.all_buses, region.buses, math.radians(args.pad), region.pad, region.pq_vmax)
    return region


def result_document(args, net, res: LocateResult) -> dict:
    """The JSON payload; contains no timings so that reruns are byte-identical."""
    ids = list(net.bus_ids)
    sols = []
    for i, s in enumerate(res.solutions, 1):
        entry = {
            "index": i,
            "vm": [round(float(v), 12) for v in s.vm],
            "va": [round(float(v), 10) for v in s.va],
            "residual": float(s.residual_inf),
            "escaped": bool(s.escaped),
            "degenerate_angle_buses": [ids[k] for k in s.degenerate_angle],
        }
        if s.source_box is not None:
            entry["source_box"] = {"lo": s.source_box.lo.tolist(), "hi": s.source_box.hi.tolist()}
        sols.append(entry)
    atlas = res.atlas
    return {
        "case": args.case,
        "relax": args.relax,
        "eps_r": args.eps_r,
        "eps_v": args.eps_v,
        "lambda": args.lam if args.lam is not None else 1.0,
        "bus_ids": ids,
        "certificate": res.certificate.value,
        "rigorous": bool(atlas.rigorous),
        "iterations": len(atlas.trace),
        "solver_calls": atlas.solver_calls,
        "unresolved_boxes": len(res.unresolved),
        "solutions": sols,
    }


def load_schema() -> dict:
    return json.loads((resources.files("pfatlas.data") / "solutions.schema.json").read_text())


def validate(doc: dict) -> None:
    import jsonschema
    jsonschema.validate(doc, load_schema())


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "live", "pruned", "accepted", "split", "solver_calls", "wall_ms"])
        for t in trace:
            w.writerow([t.iteration, t.live, t.pruned, t.accepted, t.split, t.solver_calls, f"{t.wall_ms:.3f}"])


def exit_code(res: LocateResult) -> int:
    if res.solutions and not res.unresolved:
        return EXIT_FOUND
    if res.certificate is Certificate.NO_SOLUTION_IN_REGION:
        return EXIT_NONE
    # unresolved boxes or an exhausted budget: nothing is certified
    return EXIT_BUDGET


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        net = load_case(args.case)
        if args.lam is not None:
            net = scale_load(net, args.lam)
        region = _region(args)
        tol = Tolerances(args.eps_r, args.eps_v, args.max_nodes)
    except (CaseError, OSError, ValueError) as exc:
        print(f"pfatlas: {exc}", file=sys.stderr)
        return EXIT_INPUT

    t0 = time.perf_counter()
    res = locate_all(net, region, args.relax, tol, RefineOptions(), workers=args.workers,
                     coarse_eps_v=args.coarse_eps_v)
    elapsed = time.perf_counter() - t0

    doc = result_document(args, net, res)
    validate(doc)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.trace:
        write_trace(args.trace, res.atlas.trace)

    code = exit_code(res)
    summary = (f"{len(res.solutions)} solution(s); certificate={res.certificate.value}; "
               f"iterations={len(res.atlas.trace)}; solver_calls={res.atlas.solver_calls}; "
               f"unresolved={len(res.unresolved)}; rigorous={'yes' if res.atlas.rigorous else 'no'}; "
               f"time={elapsed:.2f}s")
    print(summary, file=sys.stderr if not args.out else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
