"""Time program assembly against the conic solve on the 9-bus instance.

    python benchmarks/bench_relax.py [--repeat 20]
"""
import argparse
import time
from pathlib import Path

import numpy as np

from pfatlas import Tolerances, load_case, locate_all, parse_case
from pfatlas.gpfmodel import BoxBounds, build_gpf
from pfatlas.netmatrix import build_admittance, build_quadratic_forms
from pfatlas.relax import Relaxation, solve


def _random_box(box, free, rng):
    lo, hi = box.lo.copy(), box.hi.copy()
    for k in free:
        a, b = sorted(rng.uniform(box.lo[k], box.hi[k], 2))
        lo[k], hi[k] = a, b
    return BoxBounds(lo, hi)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    net = load_case("case9")
    gpf = build_gpf(net, build_quadratic_forms(build_admittance(net)))
    rng = np.random.default_rng(0)
    boxes = [gpf.box] + [_random_box(gpf.box, gpf.reduction.free_idx, rng) for _ in range(args.repeat - 1)]
    for kind in ("rlt", "socp", "sdp"):
        relax = Relaxation(gpf, kind)
        t_build = t_solve = 0.0
        for box in boxes:
            t0 = time.perf_counter()
            prog = relax.program(box)
            t1 = time.perf_counter()
            solve(prog)
            t2 = time.perf_counter()
            t_build += t1 - t0
            t_solve += t2 - t1
        n = len(boxes)
        print(f"{kind:5s} assemble {1e3 * t_build / n:7.2f} ms   solve {1e3 * t_solve / n:7.2f} ms   "
              f"assembly share {100 * t_build / (t_build + t_solve):5.1f}%")
    t0 = time.perf_counter()
    two = parse_case((Path(__file__).parent / "two_bus.m").read_text())
    res = locate_all(two, tol=Tolerances(eps_v=1e-2))
    print(f"2-bus pipeline: {len(res.solutions)} solutions in {time.perf_counter() - t0:.2f} s")


if __name__ == "__main__":
    main()
