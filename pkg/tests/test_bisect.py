import math

import numpy as np
import pytest

from pfatlas.bisect import (Certificate, Decision, Tolerances, branch, classify, free_width, run_atlas)
from pfatlas.gpfmodel import BoxBounds, build_gpf
from pfatlas.netmatrix import build_admittance, build_quadratic_forms
from pfatlas.relax import RelaxSolution, Status

from conftest import two_bus, two_bus_oracle

COARSE = Tolerances(eps_v=0.05)


def _sol(obj, status=Status.OPTIMAL):
    return RelaxSolution(status, obj, tolerance=1e-8)


def _box(width):
    return BoxBounds(np.zeros(2), np.full(2, width))


def _volume(box, free):
    return float(np.prod(box.width[free]))


@pytest.mark.parametrize("obj, width, expected", [
    (0.5, 3.0, Decision.PRUNE),
    (0.0, 0.005, Decision.ACCEPT),
    (0.0, 3.0, Decision.SPLIT),
    (1e-5, 0.005, Decision.ACCEPT),
    (math.inf, 3.0, Decision.PRUNE),
])
def test_classify(obj, width, expected):
    status = Status.INFEASIBLE if math.isinf(obj) else Status.OPTIMAL
    assert classify(_sol(obj, status), _box(width), Tolerances()) is expected


def test_numerical_failure_never_prunes():
    fail = _sol(math.nan, Status.NUMERICAL_FAILURE)
    assert classify(fail, _box(3.0), Tolerances()) is Decision.SPLIT
    assert classify(fail, _box(0.001), Tolerances()) is Decision.ACCEPT


def test_classify_ignores_fixed_coordinates():
    box = BoxBounds([1.0, 0.0, 0.0], [1.0, 0.005, 0.0])
    assert free_width(box, [1]) == 0.005
    assert classify(_sol(0.0), box, Tolerances(), [1]) is Decision.ACCEPT


def test_branch_midpoint():
    a, b = branch(BoxBounds([0, 0], [1, 4]))
    assert a == BoxBounds([0, 0], [1, 2]) and b == BoxBounds([0, 2], [1, 4])


def test_branch_tie_uses_lowest_index():
    a, b = branch(BoxBounds([0, 0, 0], [2, 2, 1]))
    assert a.hi.tolist() == [1, 2, 1] and b.lo.tolist() == [1, 0, 0]


def test_branch_respects_free_mask():
    a, _ = branch(BoxBounds([0, 0, 0], [5, 2, 1]), free_idx=[1, 2])
    assert a.hi.tolist() == [5, 1, 1]


def test_branch_unit_cube_halves_volume():
    cube = BoxBounds(np.zeros(6), np.ones(6))
    children = branch(cube)
    assert all(float(np.prod(c.width)) == 0.5 for c in children)
    with pytest.raises(ValueError):
        branch(BoxBounds(np.ones(3), np.ones(3)))


def test_tolerances_validation():
    for bad in (dict(eps_r=0), dict(eps_v=-1), dict(max_nodes=0)):
        with pytest.raises(ValueError):
            Tolerances(**bad)


def test_two_bus_zero_injection_candidates():
    res = run_atlas(two_bus(0.0), tol=Tolerances())
    assert res.certificate is Certificate.ALL_CANDIDATES_FOUND
    roots = two_bus_oracle(0.0)
    for x in roots:
        assert any(b.contains(x) for b in res.boxes)
    # each accepted box lies next to one of the two roots
    for b in res.boxes:
        assert min(np.max(np.abs(b.center - x)) for x in roots) <= 0.01
    assert all(free_width(b, [1, 3]) <= 0.01 for b in res.boxes)


def test_two_bus_beyond_solvability():
    res = run_atlas(two_bus(-6.0), tol=COARSE)
    assert res.certificate is Certificate.NO_SOLUTION_IN_REGION
    assert not res.candidates and not res.unresolved


def test_partition_is_exact():
    net = two_bus(-3.0)
    res = run_atlas(net, tol=COARSE, keep_pruned=True)
    free = [1, 3]
    gpf = build_gpf(net, build_quadratic_forms(build_admittance(net)))
    tiles = [b for b, _ in res.pruned] + res.boxes
    total = sum(_volume(b, free) for b in tiles)
    assert total == pytest.approx(_volume(gpf.box, free), rel=1e-12)
    # interiors are pairwise disjoint
    for i, a in enumerate(tiles):
        for b in tiles[i + 1:]:
            overlap = np.minimum(a.hi, b.hi)[free] - np.maximum(a.lo, b.lo)[free]
            assert np.any(overlap <= 0)


def test_partition_with_budget_and_resume():
    net = two_bus(-3.0)
    full = run_atlas(net, tol=COARSE, keep_pruned=True)
    part = run_atlas(net, tol=Tolerances(eps_v=0.05, max_nodes=7), keep_pruned=True)
    assert part.certificate is Certificate.BUDGET_EXHAUSTED and part.unresolved
    assert part.solver_calls == 7
    free = [1, 3]
    total = sum(_volume(b, free) for b in [b for b, _ in part.pruned] + part.boxes + part.unresolved)
    assert total == pytest.approx(9.0, rel=1e-12)
    rest = run_atlas(net, tol=COARSE, start=part.unresolved)
    assert {b.key() for b in part.boxes + rest.boxes} == {b.key() for b in full.boxes}
    assert part.solver_calls + rest.solver_calls == full.solver_calls


def test_determinism():
    a = run_atlas(two_bus(-1.0), tol=COARSE)
    b = run_atlas(two_bus(-1.0), tol=COARSE)
    assert [c.box for c in a.candidates] == [c.box for c in b.candidates]
    assert all(np.array_equal(p.x, q.x) for p, q in zip(a.candidates, b.candidates))
    assert [(w.live, w.pruned, w.accepted, w.split) for w in a.trace] == \
           [(w.live, w.pruned, w.accepted, w.split) for w in b.trace]


def test_parallel_matches_sequential():
    seq = run_atlas(two_bus(-1.0), tol=COARSE)
    par = run_atlas(two_bus(-1.0), tol=COARSE, workers=2)
    assert {b.key() for b in seq.boxes} == {b.key() for b in par.boxes}
    assert seq.certificate is par.certificate


def test_trace_consistency():
    res = run_atlas(two_bus(-1.0), tol=COARSE)
    assert res.trace[-1].live == 0
    assert sum(w.accepted for w in res.trace) == len(res.candidates)
    assert res.trace[-1].solver_calls == res.solver_calls
    assert [w.iteration for w in res.trace] == list(range(1, len(res.trace) + 1))
    for prev, cur in zip(res.trace, res.trace[1:]):
        assert cur.pruned + cur.accepted + cur.split == 2 * prev.split


def test_soundness_against_oracle():
    for p_in in (-4.9, -2.0, 0.5, 3.3):
        res = run_atlas(two_bus(p_in), tol=COARSE, keep_pruned=True)
        for x in two_bus_oracle(p_in):
            assert any(b.contains(x) for b in res.boxes)
            # a root on a shared face may touch a pruned box but never its interior
            for b, _ in res.pruned:
                assert not np.all((x > b.lo) & (x < b.hi) | (b.width == 0))


def test_region_violation_short_circuits(case14):
    from pfatlas.gpfmodel import BusRegion, RegionSpec
    res = run_atlas(case14, RegionSpec(all_buses=BusRegion(0.9, 1.0)))
    assert res.certificate is Certificate.NO_SOLUTION_IN_REGION and res.solver_calls == 0
