"""Newton refinement of candidate points and assembly of the final solution set."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bisect import AtlasResult, Certificate, Tolerances, run_atlas
from .caseio import Network
from .gpfmodel import BoxBounds, GpfInstance, RegionSpec, build_gpf, pf_residual
from .netmatrix import InjectionMatrices, build_admittance, build_quadratic_forms, net_injections
from .relax import RelaxKind

log = logging.getLogger(__name__)

ZERO_VOLTAGE = 1e-8


@dataclass
class PfSolution:
    x: np.ndarray
    vm: np.ndarray
    va: np.ndarray  # degrees
    residual_inf: float
    iterations: int = 0
    source_box: BoxBounds | None = None
    escaped: bool = False
    degenerate_angle: tuple[int, ...] = ()


@dataclass
class NewtonFailure:
    x: np.ndarray
    reason: str
    iterations: int
    residual_inf: float


@dataclass
class RefineOptions:
    tol: float = 1e-10
    max_iter: int = 50
    dedup_delta: float = 1e-6
    region_tol: float = 1e-6
    inflate: float = 0.10
    resubdivide: bool = True


@dataclass
class LocateResult:
    solutions: list[PfSolution]
    certificate: Certificate
    atlas: AtlasResult
    unresolved: list[BoxBounds] = field(default_factory=list)
    discarded: list[PfSolution] = field(default_factory=list)
    refine_failures: int = 0

    @property
    def certified_empty(self) -> bool:
        return self.certificate is Certificate.NO_SOLUTION_IN_REGION


def _system(net: Network, forms: InjectionMatrices):
    p_in, q_in = net_injections(net)
    pq, pv = net.pq, net.pv
    mats = [forms.Z[k] for k in sorted(pq + pv)] + [forms.Zbar[k] for k in pq] + [forms.M[k] for k in pv]
    rhs = [p_in[k] for k in sorted(pq + pv)] + [q_in[k] for k in pq] + [net.buses[k].v_set ** 2 for k in pv]
    A = np.array(mats).reshape(len(mats), 2 * net.n, 2 * net.n)
    A = 0.5 * (A + A.transpose(0, 2, 1))
    return A, np.array(rhs, dtype=float)


def polar(net: Network, x: np.ndarray):
    n = net.n
    e, f = x[:n], x[n:]
    vm = np.hypot(e, f)
    va = np.degrees(np.arctan2(f, e))
    degenerate = tuple(int(k) for k in np.flatnonzero(vm < ZERO_VOLTAGE))
    va[list(degenerate)] = 0.0
    return vm, va, degenerate


def newton_refine(net: Network, forms: InjectionMatrices, x0, tol: float = 1e-10, max_iter: int = 50):
    """Full Newton on the rectangular equations over the non-slack coordinates.

    Returns a :class:`PfSolution` or a :class:`NewtonFailure`.
    """
    n = net.n
    s = net.slack
    free = np.array([i for i in range(2 * n) if i not in (s, n + s)])
    A, rhs = _system(net, forms)
    x = np.array(x0, dtype=float)
    sb = net.buses[s]
    x[s], x[n + s] = sb.v_set * math.cos(sb.theta_set), sb.v_set * math.sin(sb.theta_set)
    for it in range(max_iter + 1):
        Ax = A @ x
        r = Ax @ x - rhs
        res = float(np.max(np.abs(r), initial=0.0))
        if not np.isfinite(res):
            return NewtonFailure(x, "divergence", it, res)
        if res <= tol:
            vm, va, deg = polar(net, x)
            return PfSolution(x, vm, va, res, it, degenerate_angle=deg)
        if it == max_iter:
            break
        J = 2.0 * Ax[:, free]
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return NewtonFailure(x, "singular Jacobian", it, res)
        if not np.all(np.isfinite(dx)):
            return NewtonFailure(x, "singular Jacobian", it, res)
        x[free] += dx
        if np.max(np.abs(x)) > 1e6:
            return NewtonFailure(x, "divergence", it + 1, math.inf)
    return NewtonFailure(x, "iteration cap", max_iter, res)


def dedup(solutions: list[PfSolution], delta: float = 1e-6) -> list[PfSolution]:
    """Greedy clustering in infinity norm; keeps the lowest-residual member of each cluster."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    clusters: list[list[PfSolution]] = []
    for sol in sorted(solutions, key=lambda s: s.residual_inf):
        for cl in clusters:
            if np.max(np.abs(cl[0].x - sol.x)) <= delta:
                cl.append(sol)
                break
        else:
            clusters.append([sol])
    return sorted((cl[0] for cl in clusters), key=lambda s: tuple(s.vm.tolist()))


def _attribute(sol: PfSolution, boxes: list[BoxBounds], own: BoxBounds, inflate: float) -> PfSolution:
    if own.inflate(inflate).contains(sol.x):
        return dataclasses.replace(sol, source_box=own)
    for b in boxes:
        if b.inflate(inflate).contains(sol.x):
            return dataclasses.replace(sol, source_box=b)
    return dataclasses.replace(sol, source_box=own, escaped=True)


def locate_all(net: Network, region: RegionSpec | None = None, kind: RelaxKind | str = RelaxKind.SDP,
               tol: Tolerances | None = None, refine_opts: RefineOptions | None = None, *,
               workers: int = 1, keep_pruned: bool = False, coarse_eps_v: float | None = None,
               progress=None) -> LocateResult:
    """Branch-and-prune followed by Newton refinement of every candidate box.

    With ``coarse_eps_v`` the search first runs at that box width and then
    re-runs each accepted box at ``tol.eps_v``.
    """
    tol = tol or Tolerances()
    opts = refine_opts or RefineOptions()
    forms = build_quadratic_forms(build_admittance(net))
    gpf = build_gpf(net, forms, region)

    if coarse_eps_v is not None and coarse_eps_v > tol.eps_v:
        coarse = run_atlas(gpf, kind=kind, tol=dataclasses.replace(tol, eps_v=coarse_eps_v),
                           workers=workers, keep_pruned=keep_pruned, progress=progress)
        if coarse.candidates:
            fine = run_atlas(gpf, kind=kind, tol=dataclasses.replace(tol, max_nodes=tol.max_nodes - coarse.solver_calls),
                             start=coarse.boxes, workers=workers, keep_pruned=keep_pruned, progress=progress)
            atlas = _merge(coarse, fine)
        else:
            atlas = coarse
    else:
        atlas = run_atlas(gpf, kind=kind, tol=tol, workers=workers, keep_pruned=keep_pruned, progress=progress)

    boxes = atlas.boxes
    found: list[PfSolution] = []
    discarded: list[PfSolution] = []
    unresolved = list(atlas.unresolved)
    failures = 0

    def refine_from(cands, allow_retry):
        nonlocal failures
        for cand in cands:
            out = newton_refine(net, forms, cand.x, opts.tol, opts.max_iter)
            ok = isinstance(out, PfSolution)
            if ok:
                out = _attribute(out, boxes, cand.box, opts.inflate)
                if gpf.region_excess(out.x) > opts.region_tol:
                    discarded.append(out)
                    ok = False
                else:
                    found.append(out)
            if ok:
                continue
            failures += 1
            if allow_retry and opts.resubdivide:
                sub_tol = dataclasses.replace(tol, eps_v=0.5 * min(tol.eps_v, float(np.max(cand.box.width))))
                sub = run_atlas(gpf, kind=kind, tol=sub_tol, start=[cand.box], workers=workers,
                                keep_pruned=keep_pruned)
                atlas.solver_calls += sub.solver_calls
                atlas.pruned.extend(sub.pruned)
                atlas.marginal_prunes += sub.marginal_prunes
                atlas.numerical_failures += sub.numerical_failures
                atlas.rigorous = atlas.rigorous and sub.rigorous
                boxes.extend(sub.boxes)
                unresolved.extend(sub.unresolved)
                refine_from(sub.candidates, allow_retry=False)
            else:
                unresolved.append(cand.box)

    refine_from(atlas.candidates, allow_retry=True)

    sols = dedup(found, opts.dedup_delta)
    # independent re-check of every returned root
    for s in sols:
        check = float(np.max(np.abs(pf_residual(net, forms, s.x)), initial=0.0))
        if check > 1e-8:
            raise AssertionError(f"refined solution has residual {check:.3e}")
    cert = atlas.certificate
    if cert is Certificate.ALL_CANDIDATES_FOUND and not sols and unresolved:
        cert = Certificate.BUDGET_EXHAUSTED
    return LocateResult(sols, cert, atlas, unresolved, discarded, failures)


def _merge(coarse: AtlasResult, fine: AtlasResult) -> AtlasResult:
    offset = len(coarse.trace)
    trace = coarse.trace + [dataclasses.replace(w, iteration=w.iteration + offset,
                                                solver_calls=w.solver_calls + coarse.solver_calls)
                            for w in fine.trace]
    return AtlasResult(fine.candidates, fine.certificate, trace, fine.unresolved,
                       coarse.pruned + fine.pruned, coarse.solver_calls + fine.solver_calls,
                       coarse.wall_time + fine.wall_time, coarse.rigorous and fine.rigorous,
                       coarse.marginal_prunes + fine.marginal_prunes,
                       coarse.numerical_failures + fine.numerical_failures)
