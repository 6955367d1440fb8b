"""The slack-variable optimization form of the power-flow equations.

Every equation and region constraint is kept as a symmetric matrix ``A``
over the full state ``x = [e; f]`` so that it reads ``tr(A X)`` once
``X = x x^T`` is lifted. The slack bus coordinates are fixed, so
:class:`Reduction` rewrites ``tr(A X)`` over the free coordinates only:
``tr(Q X_free) + lin @ x_free + const``.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .caseio import BusKind, Network
from .netmatrix import InjectionMatrices, net_injections

DEFAULT_PQ_VMAX = 1.5


@dataclass(frozen=True)
class BoxBounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def inflate(self, frac: float) -> "BoxBounds":
        pad = 0.5 * frac * self.width
        return BoxBounds(self.lo - pad, self.hi + pad)

    def key(self) -> tuple:
        return tuple(self.lo.tolist()) + tuple(self.hi.tolist())

    def __eq__(self, other):
        return (isinstance(other, BoxBounds) and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True)
class BusRegion:
    """Magnitude (p.u.) and angle (rad) limits for one bus; ``None`` means unset."""

    v_min: float | None = None
    v_max: float | None = None
    theta_min: float | None = None
    theta_max: float | None = None

    def __post_init__(self):
        if self.v_min is not None and self.v_max is not None and self.v_min > self.v_max:
            raise ValueError("v_min exceeds v_max")
        if self.v_min is not None and self.v_min < 0:
            raise ValueError("v_min must be nonnegative")
        tmin = -math.pi if self.theta_min is None else self.theta_min
        tmax = math.pi if self.theta_max is None else self.theta_max
        if tmin > tmax:
            raise ValueError("theta_min exceeds theta_max")

    def merged(self, other: "BusRegion") -> "BusRegion":
        """``other``'s set fields override this one's."""
        pick = lambda a, b: b if b is not None else a
        return BusRegion(pick(self.v_min, other.v_min), pick(self.v_max, other.v_max),
                         pick(self.theta_min, other.theta_min), pick(self.theta_max, other.theta_max))


@dataclass(frozen=True)
class RegionSpec:
    """Search-region restrictions.

    ``all_buses`` applies to every bus and is overridden field-by-field by
    ``buses`` (keyed by external bus number). ``pad`` maps external
    ``(i, j)`` pairs to a maximum angle difference in radians; ``pad_all``
    applies to every line without its own entry.
    """

    all_buses: BusRegion | None = None
    buses: dict = field(default_factory=dict)
    pad_all: float | None = None
    pad: dict = field(default_factory=dict)
    pq_vmax: float = DEFAULT_PQ_VMAX

    def __post_init__(self):
        for d in [self.pad_all, *self.pad.values()]:
            if d is not None and not 0 < d < math.pi / 2:
                raise ValueError("angle-difference limit must lie in (0, pi/2)")
        if not self.pq_vmax > 0:
            raise ValueError("pq_vmax must be positive")

    def bus_region(self, bus_id: int) -> BusRegion | None:
        base = self.all_buses
        own = self.buses.get(bus_id)
        if base is None:
            return own
        return base if own is None else base.merged(own)

    def line_pad(self, i_id: int, j_id: int) -> float | None:
        for key in ((i_id, j_id), (j_id, i_id)):
            if key in self.pad:
                return self.pad[key]
        return self.pad_all


def load_region(path: str | Path) -> RegionSpec:
    """Read an INI region file (angles in degrees).

    Sections: ``[all]`` (``vmin vmax thetamin thetamax pad pq_vmax``),
    ``[bus N]`` (``vmin vmax thetamin thetamax``) and ``[line I-J]`` (``pad``).
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path) as fh:
        cp.read_file(fh)
    return region_from_config(cp)


def _bus_region(sec) -> BusRegion:
    def get(key, deg=False):
        if key not in sec:
            return None
        v = float(sec[key])
        return math.radians(v) if deg else v
    return BusRegion(get("vmin"), get("vmax"), get("thetamin", True), get("thetamax", True))


def region_from_config(cp: configparser.ConfigParser) -> RegionSpec:
    allowed = {"all": {"vmin", "vmax", "thetamin", "thetamax", "pad", "pq_vmax"},
               "bus": {"vmin", "vmax", "thetamin", "thetamax"},
               "line": {"pad"}}
    all_buses = None
    pad_all = None
    pq_vmax = DEFAULT_PQ_VMAX
    buses, pad = {}, {}
    for name in cp.sections():
        sec = cp[name]
        kind, _, arg = name.strip().partition(" ")
        if kind not in allowed:
            raise ValueError(f"unknown region section [{name}]")
        extra = set(sec) - allowed[kind]
        if extra:
            raise ValueError(f"unknown keys {sorted(extra)} in [{name}]")
        if kind == "all":
            reg = _bus_region(sec)
            if reg != BusRegion():
                all_buses = reg
            if "pad" in sec:
                pad_all = math.radians(float(sec["pad"]))
            if "pq_vmax" in sec:
                pq_vmax = float(sec["pq_vmax"])
        elif kind == "bus":
            buses[int(arg)] = _bus_region(sec)
        else:
            i, _, j = arg.partition("-")
            pad[(int(i), int(j))] = math.radians(float(sec["pad"]))
    return RegionSpec(all_buses, buses, pad_all, pad, pq_vmax)


def sector_hull(v_min, v_max, theta_min, theta_max) -> tuple[float, float, float, float]:
    """Tight bounds ``(e_lo, e_hi, f_lo, f_hi)`` of ``{(V cos t, V sin t)}`` over the sector."""
    angles = [theta_min, theta_max]
    k0 = math.ceil(theta_min / (math.pi / 2))
    k1 = math.floor(theta_max / (math.pi / 2))
    angles += [k * math.pi / 2 for k in range(k0, k1 + 1)]
    es = [v * math.cos(t) for v in (v_min, v_max) for t in angles]
    fs = [v * math.sin(t) for v in (v_min, v_max) for t in angles]
    # snap the cos/sin of axis angles that should be exactly zero
    es = [0.0 if abs(e) < 1e-15 else e for e in es]
    fs = [0.0 if abs(f) < 1e-15 else f for f in fs]
    return min(es), max(es), min(fs), max(fs)


def _bus_sector(net: Network, k: int, region: RegionSpec):
    """(v_min, v_max, t_min, t_max) used to bound bus ``k``."""
    bus = net.buses[k]
    reg = region.bus_region(net.bus_ids[k]) or BusRegion()
    t_min = -math.pi if reg.theta_min is None else reg.theta_min
    t_max = math.pi if reg.theta_max is None else reg.theta_max
    v_lo = 0.0 if reg.v_min is None else reg.v_min
    if bus.kind is BusKind.PQ:
        v_hi = region.pq_vmax if reg.v_max is None else reg.v_max
        return v_lo, v_hi, t_min, t_max
    v_hi = bus.v_set if reg.v_max is None else reg.v_max
    if v_lo <= bus.v_set <= v_hi:
        return bus.v_set, bus.v_set, t_min, t_max
    # setpoint outside the region: the box is the region's sector and the
    # magnitude equation can never be met there
    return v_lo, v_hi, t_min, t_max


def initial_box(net: Network, region: RegionSpec | None = None) -> BoxBounds:
    region = region or RegionSpec()
    n = net.n
    lo = np.empty(2 * n)
    hi = np.empty(2 * n)
    for k, bus in enumerate(net.buses):
        if bus.kind is BusKind.SLACK:
            lo[k] = hi[k] = bus.v_set * math.cos(bus.theta_set)
            lo[n + k] = hi[n + k] = bus.v_set * math.sin(bus.theta_set)
            continue
        e_lo, e_hi, f_lo, f_hi = sector_hull(*_bus_sector(net, k, region))
        lo[k], hi[k], lo[n + k], hi[n + k] = e_lo, e_hi, f_lo, f_hi
    return BoxBounds(lo, hi)


@dataclass(frozen=True)
class Equation:
    kind: str  # "p", "q" or "v"
    bus: int  # 0-based
    A: np.ndarray
    rhs: float


@dataclass(frozen=True)
class Inequality:
    """``tr(A X) <= ub``; ``label`` names its origin for reporting."""

    A: np.ndarray
    ub: float
    label: str


class Reduction:
    """Elimination of fixed coordinates from ``tr(A X)`` with ``X = x x^T``."""

    def __init__(self, dim: int, fixed: dict[int, float]):
        self.dim = dim
        self.fixed_idx = np.array(sorted(fixed), dtype=int)
        self.fixed_val = np.array([fixed[i] for i in self.fixed_idx], dtype=float)
        self.free_idx = np.array([i for i in range(dim) if i not in fixed], dtype=int)

    @property
    def m(self) -> int:
        return len(self.free_idx)

    def reduce(self, A: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        A = 0.5 * (A + A.T)
        R, F, c = self.free_idx, self.fixed_idx, self.fixed_val
        Q = A[np.ix_(R, R)]
        lin = 2.0 * A[np.ix_(R, F)] @ c
        const = float(c @ A[np.ix_(F, F)] @ c)
        return Q, lin, const

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = np.empty(self.dim)
        x[self.free_idx] = x_free
        x[self.fixed_idx] = self.fixed_val
        return x

    def restrict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.free_idx]

    def restrict_box(self, box: BoxBounds) -> BoxBounds:
        return BoxBounds(box.lo[self.free_idx], box.hi[self.free_idx])

    def expand_box(self, box: BoxBounds) -> BoxBounds:
        return BoxBounds(self.expand(box.lo), self.expand(box.hi))


@dataclass
class GpfInstance:
    net: Network
    equations: list[Equation]
    inequalities: list[Inequality]
    box: BoxBounds
    reduction: Reduction
    lines: list[tuple[int, int]]
    region_violation: str | None = None

    @property
    def n(self) -> int:
        return self.net.n

    @property
    def slack_count(self) -> int:
        """Number of s+/s- pairs (one per equation)."""
        return len(self.equations)

    def residual(self, x: np.ndarray) -> np.ndarray:
        return np.array([x @ eq.A @ x - eq.rhs for eq in self.equations])

    def region_excess(self, x: np.ndarray) -> float:
        """Largest violation of the box and region rows at ``x`` (0 when inside)."""
        worst = max(0.0, float(np.max(self.box.lo - x)), float(np.max(x - self.box.hi)))
        for row in self.inequalities:
            worst = max(worst, float(x @ row.A @ x - row.ub))
        return worst


def _sym_unit(dim: int, i: int, j: int) -> np.ndarray:
    """Symmetric matrix ``S`` with ``tr(S X) = X[i, j]`` for symmetric ``X``."""
    S = np.zeros((dim, dim))
    S[i, j] += 0.5
    S[j, i] += 0.5
    return S


def pad_rows(n: int, i: int, j: int, dtheta: float, label: str = "") -> list[Inequality]:
    """The two linear angle-difference rows for the line between 0-based buses ``i`` and ``j``."""
    dim = 2 * n
    cosine = _sym_unit(dim, i, j) + _sym_unit(dim, n + i, n + j)
    sine = _sym_unit(dim, j, n + i) - _sym_unit(dim, i, n + j)
    t = math.tan(dtheta)
    return [Inequality(sine - t * cosine, 0.0, label + "+"),
            Inequality(-sine - t * cosine, 0.0, label + "-")]


def build_gpf(net: Network, forms: InjectionMatrices, region: RegionSpec | None = None) -> GpfInstance:
    region = region or RegionSpec()
    n = net.n
    p_in, q_in = net_injections(net)
    pq, pv = net.pq, net.pv
    equations = [Equation("p", k, forms.Z[k], float(p_in[k])) for k in sorted(pq + pv)]
    equations += [Equation("q", k, forms.Zbar[k], float(q_in[k])) for k in pq]
    equations += [Equation("v", k, forms.M[k], net.buses[k].v_set ** 2) for k in pv]

    inequalities: list[Inequality] = []
    violation = None
    for k, bus in enumerate(net.buses):
        reg = region.bus_region(net.bus_ids[k])
        if reg is None:
            continue
        bid = net.bus_ids[k]
        if bus.kind is BusKind.SLACK:
            theta = bus.theta_set
            tmin = -math.pi if reg.theta_min is None else reg.theta_min
            tmax = math.pi if reg.theta_max is None else reg.theta_max
            if ((reg.v_min is not None and bus.v_set < reg.v_min)
                    or (reg.v_max is not None and bus.v_set > reg.v_max)
                    or not tmin <= theta <= tmax):
                violation = f"slack bus {bid} setpoint lies outside the region"
            continue
        if reg.v_min is not None and reg.v_min > 0:
            inequalities.append(Inequality(-forms.M[k], -reg.v_min ** 2, f"vmin {bid}"))
        if reg.v_max is not None:
            inequalities.append(Inequality(forms.M[k], reg.v_max ** 2, f"vmax {bid}"))

    lines = net.lines()
    for i, j in lines:
        d = region.line_pad(net.bus_ids[i], net.bus_ids[j])
        if d is not None:
            inequalities += pad_rows(n, i, j, d, f"pad {net.bus_ids[i]}-{net.bus_ids[j]}")

    box = initial_box(net, region)
    s = net.slack
    reduction = Reduction(2 * n, {s: float(box.lo[s]), n + s: float(box.lo[n + s])})
    return GpfInstance(net, equations, inequalities, box, reduction, lines, violation)


def pf_residual(net: Network, forms: InjectionMatrices, x) -> np.ndarray:
    """Residuals ordered as: P at PV and PQ buses, Q at PQ buses, |V|^2 at PV buses (bus order within each group)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2 * net.n,):
        raise ValueError(f"state vector must have length {2 * net.n}, got {x.shape}")
    p_in, q_in = net_injections(net)
    pq, pv = net.pq, net.pv
    res = [x @ forms.Z[k] @ x - p_in[k] for k in sorted(pq + pv)]
    res += [x @ forms.Zbar[k] @ x - q_in[k] for k in pq]
    res += [x @ forms.M[k] @ x - net.buses[k].v_set ** 2 for k in pv]
    return np.array(res)
