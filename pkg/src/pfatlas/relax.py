"""Convex relaxations of the slack-variable power-flow problem over a box.

The decision vector of every relaxation is ``z = [x | X | s]``: the free
voltage coordinates, the upper triangle of their lifted product matrix
(row-major, ``i <= j``, unscaled) and the nonnegative equation slacks
``s+_0, s-_0, s+_1, ...``. Constraints follow the Clarabel convention
``b - A z in K`` block by block.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .gpfmodel import BoxBounds, GpfInstance, Reduction, _sym_unit

SQRT2 = math.sqrt(2.0)


class RelaxKind(str, enum.Enum):
    RLT = "rlt"
    SOCP = "socp"
    SDP = "sdp"


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConeBlock:
    kind: str  # "zero" | "nonneg" | "soc" | "psd"
    A: sp.csr_matrix
    b: np.ndarray

    @property
    def rows(self) -> int:
        return self.A.shape[0]


@dataclass
class Layout:
    """Index bookkeeping for ``z = [x | X | s]``."""

    m: int
    n_eq: int

    def __post_init__(self):
        m = self.m
        self.iu = np.triu_indices(m)
        self.n_X = len(self.iu[0])
        pos = np.full((m, m), -1, dtype=int)
        pos[self.iu] = m + np.arange(self.n_X)
        pos.T[self.iu] = m + np.arange(self.n_X)
        self.X_pos = pos
        self.s_start = m + self.n_X
        self.size = self.s_start + 2 * self.n_eq

    def s_plus(self, k: int) -> int:
        return self.s_start + 2 * k

    def s_minus(self, k: int) -> int:
        return self.s_start + 2 * k + 1

    def form_row(self, Q: np.ndarray, lin: np.ndarray) -> np.ndarray:
        """Dense coefficients of ``tr(Q X) + lin @ x`` over ``z``."""
        r = np.zeros(self.size)
        r[: self.m] = lin
        i, j = self.iu
        r[self.m: self.s_start] = np.where(i == j, 1.0, 2.0) * Q[i, j]
        return r

    def unpack_X(self, z: np.ndarray) -> np.ndarray:
        X = np.zeros((self.m, self.m))
        vals = z[self.m: self.s_start]
        X[self.iu] = vals
        X.T[self.iu] = vals
        return X

    def pack(self, x: np.ndarray, X: np.ndarray, s: np.ndarray | None = None) -> np.ndarray:
        z = np.zeros(self.size)
        z[: self.m] = x
        z[self.m: self.s_start] = X[self.iu]
        if s is not None:
            z[self.s_start:] = s
        return z


@dataclass
class ConicProgram:
    """``min c @ z`` subject to ``b - A z`` in each block's cone."""

    c: np.ndarray
    blocks: list[ConeBlock]
    layout: Layout | None = None
    reduction: Reduction | None = None
    kind: RelaxKind | None = None

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def stacked(self) -> tuple[sp.csc_matrix, np.ndarray]:
        A = sp.vstack([b.A for b in self.blocks], format="csc")
        b = np.concatenate([b.b for b in self.blocks])
        return A, b

    def cone_residuals(self, z: np.ndarray) -> dict[str, float]:
        """Worst violation of each cone family at ``z`` (0 when feasible)."""
        out: dict[str, float] = {}
        for blk in self.blocks:
            s = blk.b - blk.A @ z
            if blk.kind == "zero":
                v = float(np.max(np.abs(s), initial=0.0))
            elif blk.kind == "nonneg":
                v = float(max(0.0, -np.min(s, initial=0.0)))
            elif blk.kind == "soc":
                v = float(max(0.0, np.linalg.norm(s[1:]) - s[0]))
            else:
                v = float(max(0.0, -np.linalg.eigvalsh(svec_to_mat(s)).min()))
            out[blk.kind] = max(out.get(blk.kind, 0.0), v)
        return out


def svec_to_mat(v: np.ndarray) -> np.ndarray:
    """Inverse of the scaled upper-triangle, column-major vectorization."""
    d = int(round((math.sqrt(8 * len(v) + 1) - 1) / 2))
    M = np.zeros((d, d))
    k = 0
    for j in range(d):
        for i in range(j + 1):
            M[i, j] = M[j, i] = v[k] if i == j else v[k] / SQRT2
            k += 1
    return M


@dataclass(frozen=True)
class LinearRows:
    """RLT rows ``cX * X[i,j] + cxi * x[i] + cxj * x[j]  (<= or ==)  rhs``."""

    i: np.ndarray
    j: np.ndarray
    cX: np.ndarray
    cxi: np.ndarray
    cxj: np.ndarray
    rhs: np.ndarray
    equality: np.ndarray

    def __len__(self):
        return len(self.rhs)

    def evaluate(self, x: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Left-hand side minus right-hand side for each row."""
        return self.cX * X[self.i, self.j] + self.cxi * x[self.i] + self.cxj * x[self.j] - self.rhs

    def satisfied(self, x, X, tol: float = 1e-9) -> bool:
        g = self.evaluate(np.asarray(x), np.asarray(X))
        return bool(np.all(g[~self.equality] <= tol) and np.all(np.abs(g[self.equality]) <= tol))


def rlt_block(box: BoxBounds) -> LinearRows:
    """McCormick product rows linking ``X[i,j]`` to ``x[i], x[j]`` for all ``i <= j``.

    A coordinate with zero width ``l`` turns its pair rows into the exact
    equality ``X[i,j] = l * x[j]``.
    """
    l, u = box.lo, box.hi
    m = len(l)
    i, j = np.triu_indices(m)
    fixed = box.width == 0
    # orient each pair so that a fixed coordinate, if any, comes first
    swap = ~fixed[i] & fixed[j]
    i, j = np.where(swap, j, i), np.where(swap, i, j)
    eq = fixed[i]
    free = ~eq
    fi, fj = i[free], j[free]
    li, lj, ui, uj = l[fi], l[fj], u[fi], u[fj]
    off = fi != fj
    parts = [
        # (x_i - l_i)(x_j - l_j) >= 0
        (fi, fj, -np.ones(len(fi)), lj, li, li * lj),
        # (u_i - x_i)(u_j - x_j) >= 0
        (fi, fj, -np.ones(len(fi)), uj, ui, ui * uj),
        # (x_i - l_i)(u_j - x_j) >= 0
        (fi, fj, np.ones(len(fi)), -uj, -li, -li * uj),
        # (u_i - x_i)(x_j - l_j) >= 0, distinct from the previous row only off the diagonal
        (fi[off], fj[off], np.ones(off.sum()), -lj[off], -ui[off], -ui[off] * lj[off]),
    ]
    ei, ej = i[eq], j[eq]
    parts.append((ei, ej, np.ones(len(ei)), np.zeros(len(ei)), -l[ei], np.zeros(len(ei))))
    cat = [np.concatenate([p[k] for p in parts]) for k in range(6)]
    equality = np.zeros(len(cat[0]), dtype=bool)
    if len(ei):
        equality[-len(ei):] = True
    return LinearRows(cat[0].astype(int), cat[1].astype(int), *cat[2:], equality)


def _lifted_entry(n: int, i: int, j: int, part: str) -> np.ndarray:
    """Full-space symmetric matrix of the complex product entry ``W[i,j]`` (real or imaginary part)."""
    dim = 2 * n
    if part == "re":
        return _sym_unit(dim, i, j) + _sym_unit(dim, n + i, n + j)
    return _sym_unit(dim, n + i, j) - _sym_unit(dim, i, n + j)


def socp_block(gpf: GpfInstance) -> list[tuple[np.ndarray, np.ndarray]]:
    """One rotated-cone constraint ``Re^2 + Im^2 <= W_ii W_jj`` per line.

    Each item is ``(R, k)`` with four affine expressions ``R @ z + k`` that
    must lie in the standard second-order cone:
    ``((W_ii + W_jj)/2, Re W_ij, Im W_ij, (W_ii - W_jj)/2)``.
    """
    n = gpf.n
    red = gpf.reduction
    layout = Layout(red.m, len(gpf.equations))

    def affine(A):
        Q, lin, const = red.reduce(A)
        return layout.form_row(Q, lin), const

    out = []
    for i, j in gpf.lines:
        (wi, ci), (wj, cj) = affine(_lifted_entry(n, i, i, "re")), affine(_lifted_entry(n, j, j, "re"))
        (re, cre), (im, cim) = affine(_lifted_entry(n, i, j, "re")), affine(_lifted_entry(n, i, j, "im"))
        R = np.vstack([(wi + wj) / 2, re, im, (wi - wj) / 2])
        k = np.array([(ci + cj) / 2, cre, cim, (ci - cj) / 2])
        out.append((R, k))
    return out


class Relaxation:
    """Box-independent part of one relaxation of ``gpf``; :meth:`program` adds the box rows."""

    def __init__(self, gpf: GpfInstance, kind: RelaxKind | str):
        self.gpf = gpf
        self.kind = RelaxKind(kind)
        red = gpf.reduction
        self.layout = lay = Layout(red.m, len(gpf.equations))
        N = lay.size

        eq_rows, eq_rhs = [], []
        for k, e in enumerate(gpf.equations):
            Q, lin, const = red.reduce(e.A)
            r = lay.form_row(Q, lin)
            r[lay.s_plus(k)] += 1.0
            r[lay.s_minus(k)] -= 1.0
            eq_rows.append(r)
            eq_rhs.append(e.rhs - const)
        self._eq = (sp.csr_matrix(np.array(eq_rows).reshape(-1, N)), np.array(eq_rhs, dtype=float))

        ineq_rows, ineq_rhs = [], []
        for row in gpf.inequalities:
            Q, lin, const = red.reduce(row.A)
            ineq_rows.append(lay.form_row(Q, lin))
            ineq_rhs.append(row.ub - const)
        n_s = 2 * lay.n_eq
        s_rows = sp.csr_matrix((-np.ones(n_s), (np.arange(n_s), lay.s_start + np.arange(n_s))), shape=(n_s, N))
        region = sp.csr_matrix(np.array(ineq_rows).reshape(-1, N))
        self._ineq = (sp.vstack([region, s_rows], format="csr"),
                      np.concatenate([np.array(ineq_rhs, dtype=float), np.zeros(n_s)]))

        self._cones: list[ConeBlock] = []
        if self.kind is RelaxKind.SOCP:
            for R, k in socp_block(gpf):
                self._cones.append(ConeBlock("soc", sp.csr_matrix(-R), k))
        elif self.kind is RelaxKind.SDP:
            self._cones.append(self._psd_block())

        self.c = np.zeros(N)
        self.c[lay.s_start:] = 1.0

    def _psd_block(self) -> ConeBlock:
        # [[1, x^T], [x, X]] >= 0; equivalent to positive semidefiniteness of
        # the full lifted matrix once the fixed coordinates are substituted
        lay = self.layout
        m = lay.m
        d = m + 1
        rows, cols, vals = [], [], []
        b = []
        r = 0
        for jj in range(d):
            for ii in range(jj + 1):
                if ii == 0 and jj == 0:
                    b.append(1.0)
                elif ii == 0:
                    rows.append(r); cols.append(jj - 1); vals.append(-SQRT2)
                    b.append(0.0)
                else:
                    rows.append(r); cols.append(lay.X_pos[ii - 1, jj - 1])
                    vals.append(-1.0 if ii == jj else -SQRT2)
                    b.append(0.0)
                r += 1
        A = sp.csr_matrix((vals, (rows, cols)), shape=(r, lay.size))
        return ConeBlock("psd", A, np.array(b))

    def program(self, box: BoxBounds) -> ConicProgram:
        lay = self.layout
        red = self.gpf.reduction
        rbox = red.restrict_box(box) if len(box.lo) == red.dim else box
        m, N = lay.m, lay.size
        rows = rlt_block(rbox)
        k = len(rows)
        ar = np.arange(k)
        A = sp.csr_matrix(
            (np.concatenate([rows.cX, rows.cxi, rows.cxj]),
             (np.concatenate([ar, ar, ar]), np.concatenate([lay.X_pos[rows.i, rows.j], rows.i, rows.j]))),
            shape=(k, N))
        eye = sp.csr_matrix((np.ones(m), (np.arange(m), np.arange(m))), shape=(m, N))
        box_rows = sp.vstack([eye, -eye], format="csr")
        box_rhs = np.concatenate([rbox.hi, -rbox.lo])

        eqA, eqb = self._eq
        inA, inb = self._ineq
        blocks = [
            ConeBlock("zero", sp.vstack([eqA, A[rows.equality]], format="csr"),
                      np.concatenate([eqb, rows.rhs[rows.equality]])),
            ConeBlock("nonneg", sp.vstack([inA, A[~rows.equality], box_rows], format="csr"),
                      np.concatenate([inb, rows.rhs[~rows.equality], box_rhs])),
            *self._cones,
        ]
        return ConicProgram(self.c.copy(), blocks, lay, red, self.kind)


def assemble(gpf: GpfInstance, box: BoxBounds, kind: RelaxKind | str) -> ConicProgram:
    return Relaxation(gpf, kind).program(box)


@dataclass
class RelaxSolution:
    status: Status
    objective: float
    z: np.ndarray | None = None
    x: np.ndarray | None = None
    X: np.ndarray | None = None
    tolerance: float = 0.0
    backend: str = ""
    solve_time: float = 0.0
    message: str = ""

    @property
    def bound(self) -> float:
        """Objective used for pruning: +inf when the relaxation is infeasible."""
        return math.inf if self.status is Status.INFEASIBLE else self.objective


# -- backends -----------------------------------------------------------------

class ClarabelBackend:
    name = "clarabel"

    def __init__(self, tighten: bool = False, **overrides):
        self.tighten = tighten
        self.overrides = overrides

    def _settings(self):
        import clarabel
        s = clarabel.DefaultSettings()
        s.verbose = False
        s.max_threads = 1
        if self.tighten:
            s.max_iter = 400
            s.static_regularization_constant = 1e-7
            s.tol_gap_abs = s.tol_gap_rel = 1e-9
            s.tol_feas = 1e-9
            s.presolve_enable = False
        for key, val in self.overrides.items():
            setattr(s, key, val)
        return s

    def solve(self, prog: ConicProgram) -> RelaxSolution:
        import clarabel
        A, b = prog.stacked()
        cones = []
        for blk in prog.blocks:
            if blk.rows == 0:
                continue
            if blk.kind == "zero":
                cones.append(clarabel.ZeroConeT(blk.rows))
            elif blk.kind == "nonneg":
                cones.append(clarabel.NonnegativeConeT(blk.rows))
            elif blk.kind == "soc":
                cones.append(clarabel.SecondOrderConeT(blk.rows))
            else:
                d = int(round((math.sqrt(8 * blk.rows + 1) - 1) / 2))
                cones.append(clarabel.PSDTriangleConeT(d))
        settings = self._settings()
        P = sp.csc_matrix((prog.n_vars, prog.n_vars))
        t0 = time.perf_counter()
        sol = clarabel.DefaultSolver(P, prog.c, A, b, cones, settings).solve()
        elapsed = time.perf_counter() - t0
        status = str(sol.status)
        z = np.array(sol.x)
        if status in ("Solved", "AlmostSolved"):
            obj = float(prog.c @ z)
            if status == "Solved":
                tol = max(settings.tol_feas, settings.tol_gap_abs, settings.tol_gap_rel * abs(obj))
            else:
                tol = max(settings.reduced_tol_feas, settings.reduced_tol_gap_abs,
                          settings.reduced_tol_gap_rel * abs(obj))
            return RelaxSolution(Status.OPTIMAL, obj, z, tolerance=tol,
                                 backend=self.name, solve_time=elapsed, message=status)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return RelaxSolution(Status.INFEASIBLE, math.inf, tolerance=settings.tol_infeas_abs,
                                 backend=self.name, solve_time=elapsed, message=status)
        return RelaxSolution(Status.NUMERICAL_FAILURE, math.nan, z, backend=self.name,
                             solve_time=elapsed, message=status)


class HighsLPBackend:
    """Pure-LP path (SciPy's HiGHS); accepts only zero and nonnegative blocks."""

    name = "highs"
    tolerance = 1e-7

    def solve(self, prog: ConicProgram) -> RelaxSolution:
        from scipy.optimize import linprog
        eqA, eqb, inA, inb = [], [], [], []
        for blk in prog.blocks:
            if blk.kind == "zero":
                eqA.append(blk.A); eqb.append(blk.b)
            elif blk.kind == "nonneg":
                inA.append(blk.A); inb.append(blk.b)
            elif blk.rows:
                raise SolverError(f"LP backend cannot handle {blk.kind} cones")
        kw = {}
        if eqA:
            kw.update(A_eq=sp.vstack(eqA, format="csc"), b_eq=np.concatenate(eqb))
        if inA:
            kw.update(A_ub=sp.vstack(inA, format="csc"), b_ub=np.concatenate(inb))
        t0 = time.perf_counter()
        res = linprog(prog.c, bounds=(None, None), method="highs", **kw)
        elapsed = time.perf_counter() - t0
        if res.status == 0:
            z = np.asarray(res.x)
            obj = float(prog.c @ z)
            return RelaxSolution(Status.OPTIMAL, obj, z, tolerance=self.tolerance * max(1.0, abs(obj)),
                                 backend=self.name, solve_time=elapsed, message=res.message)
        if res.status == 2:
            return RelaxSolution(Status.INFEASIBLE, math.inf, tolerance=self.tolerance,
                                 backend=self.name, solve_time=elapsed, message=res.message)
        return RelaxSolution(Status.NUMERICAL_FAILURE, math.nan, backend=self.name,
                             solve_time=elapsed, message=res.message)


def default_backend(prog: ConicProgram):
    if all(b.kind in ("zero", "nonneg") for b in prog.blocks):
        return HighsLPBackend()
    return ClarabelBackend()


def solve(prog: ConicProgram, backend=None) -> RelaxSolution:
    """Solve ``prog``; one retry with tightened settings on numerical failure."""
    backend = backend or default_backend(prog)
    sol = backend.solve(prog)
    if sol.status is Status.NUMERICAL_FAILURE:
        retry = ClarabelBackend(tighten=True)
        sol2 = retry.solve(prog)
        if sol2.status is not Status.NUMERICAL_FAILURE:
            sol = sol2
    if sol.status is Status.OPTIMAL and prog.layout is not None:
        lay = prog.layout
        x_free = sol.z[: lay.m]
        sol.X = lay.unpack_X(sol.z)
        sol.x = prog.reduction.expand(x_free) if prog.reduction is not None else x_free
    return sol


# -- conic benchmark format ---------------------------------------------------

def write_cbf(prog: ConicProgram, fh) -> None:
    """Write ``prog`` in CBF version 3 (variables free, constraints as ``A z + b`` in a cone).

    Cone blocks map as: zero -> ``L=``, nonneg -> ``L+``, soc -> ``Q``;
    the psd block becomes one ``PSDCON`` with ``HCOORD``/``DCOORD`` entries
    (lower triangle, unscaled).
    """
    lin_blocks = [b for b in prog.blocks if b.kind != "psd"]
    psd_blocks = [b for b in prog.blocks if b.kind == "psd" and b.rows]
    tag = {"zero": "L=", "nonneg": "L+", "soc": "Q"}
    w = fh.write
    w("VER\n3\n\n")
    w("OBJSENSE\nMIN\n\n")
    w(f"VAR\n{prog.n_vars} 1\nF {prog.n_vars}\n\n")
    if lin_blocks:
        total = sum(b.rows for b in lin_blocks)
        w(f"CON\n{total} {len(lin_blocks)}\n")
        for b in lin_blocks:
            w(f"{tag[b.kind]} {b.rows}\n")
        w("\n")
    if psd_blocks:
        w(f"PSDCON\n{len(psd_blocks)}\n")
        for b in psd_blocks:
            d = int(round((math.sqrt(8 * b.rows + 1) - 1) / 2))
            w(f"{d}\n")
        w("\n")
    nz = np.flatnonzero(prog.c)
    w(f"OBJACOORD\n{len(nz)}\n")
    for j in nz:
        w(f"{j} {float(prog.c[j])!r}\n")
    w("\n")
    # the cone holds b - A z, i.e. (-A) z + b
    entries, consts, offset = [], [], 0
    for b in lin_blocks:
        coo = (-b.A).tocoo()
        entries += [(offset + r, c, v) for r, c, v in zip(coo.row, coo.col, coo.data) if v != 0]
        consts += [(offset + r, v) for r, v in enumerate(b.b) if v != 0]
        offset += b.rows
    w(f"ACOORD\n{len(entries)}\n")
    for r, c, v in entries:
        w(f"{r} {c} {float(v)!r}\n")
    w("\n")
    w(f"BCOORD\n{len(consts)}\n")
    for r, v in consts:
        w(f"{r} {float(v)!r}\n")
    w("\n")
    if psd_blocks:
        h, dco = [], []
        for p, b in enumerate(psd_blocks):
            d = int(round((math.sqrt(8 * b.rows + 1) - 1) / 2))
            tri = [(i, j) for j in range(d) for i in range(j + 1)]
            coo = (-b.A).tocoo()
            for r, c, v in zip(coo.row, coo.col, coo.data):
                i, j = tri[r]
                h.append((p, c, j, i, v if i == j else v / SQRT2))
            for r, v in enumerate(b.b):
                if v != 0:
                    i, j = tri[r]
                    dco.append((p, j, i, v if i == j else v / SQRT2))
        w(f"HCOORD\n{len(h)}\n")
        for item in h:
            w(" ".join(map(str, item[:4])) + f" {float(item[4])!r}\n")
        w("\n")
        w(f"DCOORD\n{len(dco)}\n")
        for item in dco:
            w(" ".join(map(str, item[:3])) + f" {float(item[3])!r}\n")
        w("\n")
