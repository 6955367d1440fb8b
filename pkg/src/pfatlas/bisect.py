"""Bisection branch-and-prune over boxes of voltage coordinates.

Boxes are processed in waves: every live box of the current wave is
relaxed and classified, then the children of the split boxes form the next
wave. Processing a wave front to back is exactly first-in-first-out order,
so the sequential and the parallel policies explore the same tree.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .caseio import Network
from .gpfmodel import BoxBounds, GpfInstance, RegionSpec, build_gpf
from .netmatrix import build_admittance, build_quadratic_forms
from .relax import Relaxation, RelaxKind, RelaxSolution, Status, solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tolerances:
    eps_r: float = 1e-5
    eps_v: float = 1e-2
    max_nodes: int = 200_000
    solver_margin: float = 10.0

    def __post_init__(self):
        if not self.eps_r > 0 or not self.eps_v > 0:
            raise ValueError("eps_r and eps_v must be positive")
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be at least 1")


class Decision(str, enum.Enum):
    PRUNE = "prune"
    ACCEPT = "accept"
    SPLIT = "split"


class Certificate(str, enum.Enum):
    ALL_CANDIDATES_FOUND = "all_candidates_found"
    NO_SOLUTION_IN_REGION = "no_solution_in_region"
    BUDGET_EXHAUSTED = "budget_exhausted"


def free_width(box: BoxBounds, free_idx=None) -> float:
    w = box.width if free_idx is None else box.width[free_idx]
    return float(np.max(w, initial=0.0))


def classify(sol: RelaxSolution, box: BoxBounds, tol: Tolerances, free_idx=None) -> Decision:
    """Prune when the relaxation bound exceeds ``eps_r``; accept small boxes; split the rest.

    A numerical failure never prunes.
    """
    small = free_width(box, free_idx) <= tol.eps_v
    if sol.status is Status.NUMERICAL_FAILURE:
        return Decision.ACCEPT if small else Decision.SPLIT
    if sol.bound > tol.eps_r:
        return Decision.PRUNE
    return Decision.ACCEPT if small else Decision.SPLIT


def branch(box: BoxBounds, free_idx=None) -> tuple[BoxBounds, BoxBounds]:
    """Halve ``box`` across its widest coordinate (lowest index on ties)."""
    w = box.width.copy()
    if free_idx is not None:
        mask = np.zeros(len(w), dtype=bool)
        mask[free_idx] = True
        w[~mask] = -1.0
    k = int(np.argmax(w))
    if not w[k] > 0:
        raise ValueError("cannot branch a box of zero width")
    mid = 0.5 * (box.lo[k] + box.hi[k])
    hi1 = box.hi.copy()
    hi1[k] = mid
    lo2 = box.lo.copy()
    lo2[k] = mid
    return BoxBounds(box.lo.copy(), hi1), BoxBounds(lo2, box.hi.copy())


@dataclass
class Candidate:
    box: BoxBounds
    x: np.ndarray
    bound: float
    status: Status


@dataclass
class WaveStats:
    iteration: int
    live: int
    pruned: int
    accepted: int
    split: int
    solver_calls: int
    wall_ms: float


@dataclass
class AtlasResult:
    candidates: list[Candidate]
    certificate: Certificate
    trace: list[WaveStats]
    unresolved: list[BoxBounds] = field(default_factory=list)
    pruned: list[tuple[BoxBounds, float]] = field(default_factory=list)
    solver_calls: int = 0
    wall_time: float = 0.0
    rigorous: bool = True
    marginal_prunes: int = 0
    numerical_failures: int = 0

    @property
    def boxes(self) -> list[BoxBounds]:
        return [c.box for c in self.candidates]


# Per-process state for the parallel policy.
_WORKER: dict = {}


def _worker_init(gpf: GpfInstance, kind: str):
    _WORKER["relax"] = Relaxation(gpf, kind)


def _worker_solve(box: BoxBounds) -> RelaxSolution:
    return _solve_box(_WORKER["relax"], box)


def _solve_box(relax: Relaxation, box: BoxBounds) -> RelaxSolution:
    sol = solve(relax.program(box))
    # keep the payload small across process boundaries
    sol.z = None
    sol.X = None
    return sol


def run_atlas(net_or_gpf, region: RegionSpec | None = None, kind: RelaxKind | str = RelaxKind.SDP,
              tol: Tolerances | None = None, *, start: list[BoxBounds] | None = None,
              workers: int = 1, keep_pruned: bool = False, progress=None) -> AtlasResult:
    """Branch-and-prune from the region's initial box (or the ``start`` boxes).

    ``net_or_gpf`` is either a :class:`Network` (the instance is built from
    ``region``) or a prepared :class:`GpfInstance`.
    """
    tol = tol or Tolerances()
    if isinstance(net_or_gpf, GpfInstance):
        gpf = net_or_gpf
    else:
        net: Network = net_or_gpf
        gpf = build_gpf(net, build_quadratic_forms(build_admittance(net)), region)
    kind = RelaxKind(kind)
    free_idx = gpf.reduction.free_idx
    t0 = time.perf_counter()

    if gpf.region_violation is not None:
        log.info("empty region: %s", gpf.region_violation)
        trace = [WaveStats(0, 0, 0, 0, 0, 0, 0.0)]
        return AtlasResult([], Certificate.NO_SOLUTION_IN_REGION, trace, wall_time=time.perf_counter() - t0)

    relax = Relaxation(gpf, kind)
    wave = deque(start if start is not None else [gpf.box])
    candidates: list[Candidate] = []
    pruned_log: list[tuple[BoxBounds, float]] = []
    trace: list[WaveStats] = []
    calls = 0
    marginal = 0
    failures = 0
    unresolved: list[BoxBounds] = []

    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(gpf, kind.value))
    try:
        iteration = 0
        while wave:
            budget = tol.max_nodes - calls
            if budget <= 0:
                unresolved = list(wave)
                break
            boxes = list(wave)[:budget]
            rest = list(wave)[budget:]
            if pool is not None:
                sols = list(pool.map(_worker_solve, boxes, chunksize=max(1, len(boxes) // (4 * workers))))
            else:
                sols = [_solve_box(relax, b) for b in boxes]
            calls += len(boxes)
            n_prune = n_acc = n_split = 0
            nxt: deque = deque()
            for box, sol in zip(boxes, sols):
                if sol.status is Status.NUMERICAL_FAILURE:
                    failures += 1
                    log.warning("numerical failure on box (%s); not pruned", sol.message)
                decision = classify(sol, box, tol, free_idx)
                if decision is Decision.PRUNE:
                    n_prune += 1
                    if sol.bound - tol.eps_r < tol.solver_margin * sol.tolerance:
                        marginal += 1
                    if keep_pruned:
                        pruned_log.append((box, sol.bound))
                elif decision is Decision.ACCEPT:
                    n_acc += 1
                    x = sol.x if sol.x is not None else box.center
                    candidates.append(Candidate(box, x, sol.bound, sol.status))
                else:
                    n_split += 1
                    nxt.extend(branch(box, free_idx))
            nxt.extend(rest)
            wave = nxt
            iteration += 1
            trace.append(WaveStats(iteration, len(wave), n_prune, n_acc, n_split, calls,
                                   1000.0 * (time.perf_counter() - t0)))
            if progress is not None:
                progress(trace[-1])
            log.debug("wave %d: live=%d pruned=%d accepted=%d split=%d calls=%d",
                      iteration, len(wave), n_prune, n_acc, n_split, calls)
    finally:
        if pool is not None:
            pool.shutdown()

    if unresolved:
        cert = Certificate.BUDGET_EXHAUSTED
    elif candidates:
        cert = Certificate.ALL_CANDIDATES_FOUND
    else:
        cert = Certificate.NO_SOLUTION_IN_REGION
    return AtlasResult(candidates, cert, trace, unresolved, pruned_log, calls,
                       time.perf_counter() - t0, rigorous=marginal == 0 and failures == 0,
                       marginal_prunes=marginal, numerical_failures=failures)
