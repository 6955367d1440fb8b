"""MATPOWER-style case files: parsing, serialization and load scaling.

Quantities are converted to per-unit on ``baseMVA`` at parse time and bus
numbers are compacted to ``1..n`` in file order; the external numbers are
kept in :attr:`Network.bus_ids` for reporting.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

# MATPOWER column indices (0-based) for the fields we read.
BUS_I, BUS_TYPE, PD, QD, GS, BS, VM, VA = 0, 1, 2, 3, 4, 5, 7, 8
GEN_BUS, PG, QG, VG, GEN_STATUS = 0, 1, 2, 5, 7
F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10

_MIN_COLS = {"bus": VA + 1, "gen": GEN_STATUS + 1, "branch": BR_STATUS + 1}


class CaseError(ValueError):
    """Raised for malformed or inconsistent case data.

    ``table`` / ``row`` / ``column`` locate the offending entry when known
    (rows and columns are 1-based, as they appear in the file).
    """

    def __init__(self, message, table=None, row=None, column=None):
        loc = []
        if table is not None:
            loc.append(f"table {table!r}")
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        full = f"{message} ({', '.join(loc)})" if loc else message
        super().__init__(full)
        self.table = table
        self.row = row
        self.column = column


class BusKind(enum.IntEnum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    index: int
    kind: BusKind
    p_d: float = 0.0
    q_d: float = 0.0
    g_sh: float = 0.0
    b_sh: float = 0.0
    v_set: float = 1.0
    theta_set: float = 0.0
    p_g: float = 0.0
    q_g: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_ch: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    bus_ids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.bus_ids:
            object.__setattr__(self, "bus_ids", tuple(b.index for b in self.buses))

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def slack(self) -> int:
        """0-based position of the slack bus."""
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    def indices(self, *kinds: BusKind) -> list[int]:
        """0-based positions of buses whose kind is one of ``kinds``."""
        return [i for i, b in enumerate(self.buses) if b.kind in kinds]

    @property
    def pq(self) -> list[int]:
        return self.indices(BusKind.PQ)

    @property
    def pv(self) -> list[int]:
        return self.indices(BusKind.PV)

    def lines(self) -> list[tuple[int, int]]:
        """Distinct 0-based (i, j) bus pairs, i < j, joined by an in-service branch."""
        pairs = set()
        for br in self.branches:
            if br.in_service:
                i, j = br.from_bus - 1, br.to_bus - 1
                pairs.add((min(i, j), max(i, j)))
        return sorted(pairs)


_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(body: str, table: str) -> list[list[float]]:
    rows = []
    for chunk in re.split(r"[;\n]", body):
        tokens = chunk.replace(",", " ").split()
        if not tokens:
            continue
        row = []
        for c, tok in enumerate(tokens, start=1):
            try:
                value = float(tok)
            except ValueError:
                value = math.nan
            if not math.isfinite(value):
                raise CaseError(f"cannot parse number {tok!r}", table, len(rows) + 1, c)
            row.append(value)
        rows.append(row)
    width = _MIN_COLS.get(table)
    for r, row in enumerate(rows, start=1):
        if width is not None and len(row) < width:
            raise CaseError(f"expected at least {width} columns, got {len(row)}", table, r)
    return rows


def _tables(text: str) -> dict[str, object]:
    text = _strip_comments(text)
    out: dict[str, object] = {}
    pos = 0
    while True:
        m = _ASSIGN.search(text, pos)
        if m is None:
            break
        name = m.group(1)
        rest = text[m.end():]
        if rest.startswith("["):
            close = rest.find("]")
            if close < 0:
                raise CaseError("unterminated matrix", name)
            out[name] = _parse_matrix(rest[1:close], name)
            pos = m.end() + close + 1
        else:
            end = rest.find(";")
            end = len(rest) if end < 0 else end
            out[name] = rest[:end].strip()
            pos = m.end() + end + 1
    return out


def parse_case(text: str) -> Network:
    """Parse MATPOWER case text into a per-unit :class:`Network`."""
    tables = _tables(text)
    for name in ("baseMVA", "bus", "gen", "branch"):
        if name not in tables:
            raise CaseError(f"missing mpc.{name}")
    try:
        base = float(tables["baseMVA"])
    except (TypeError, ValueError):
        raise CaseError(f"cannot parse baseMVA {tables['baseMVA']!r}", "baseMVA") from None
    if not base > 0:
        raise CaseError("baseMVA must be positive", "baseMVA")

    bus_rows, gen_rows, br_rows = tables["bus"], tables["gen"], tables["branch"]
    for name in ("bus", "gen", "branch"):
        if not isinstance(tables[name], list):
            raise CaseError(f"mpc.{name} must be a matrix", name)
    if not bus_rows:
        raise CaseError("no buses", "bus")

    ids: list[int] = []
    pos: dict[int, int] = {}
    for r, row in enumerate(bus_rows, start=1):
        bid = row[BUS_I]
        if bid != int(bid) or bid in pos:
            raise CaseError(f"bad or duplicate bus number {bid:g}", "bus", r, BUS_I + 1)
        if int(row[BUS_TYPE]) not in (1, 2, 3, 4) or row[BUS_TYPE] != int(row[BUS_TYPE]):
            raise CaseError(f"unknown bus type {row[BUS_TYPE]:g}", "bus", r, BUS_TYPE + 1)
        pos[int(bid)] = len(ids)
        ids.append(int(bid))

    slack_rows = [r for r, row in enumerate(bus_rows, start=1) if int(row[BUS_TYPE]) == 3]
    if not slack_rows:
        raise CaseError("no slack bus", "bus")
    if len(slack_rows) > 1:
        raise CaseError("multiple slack buses", "bus", slack_rows[1], BUS_TYPE + 1)

    pg = [0.0] * len(ids)
    qg = [0.0] * len(ids)
    vg: list[float | None] = [None] * len(ids)
    for r, row in enumerate(gen_rows, start=1):
        gb = int(row[GEN_BUS])
        if gb not in pos:
            raise CaseError(f"generator at unknown bus {gb}", "gen", r, GEN_BUS + 1)
        if row[GEN_STATUS] <= 0:
            continue
        k = pos[gb]
        pg[k] += row[PG] / base
        qg[k] += row[QG] / base
        if vg[k] is None:
            vg[k] = row[VG]

    buses = []
    for k, row in enumerate(bus_rows):
        kind_code = int(row[BUS_TYPE])
        if kind_code == 4:
            raise CaseError("isolated buses are not supported", "bus", k + 1, BUS_TYPE + 1)
        kind = BusKind(kind_code)
        if kind is BusKind.PV and vg[k] is None:
            kind = BusKind.PQ  # PV bus with no in-service generator
        v_set = vg[k] if vg[k] is not None else row[VM]
        if kind is not BusKind.PQ and not v_set > 0:
            raise CaseError("voltage setpoint must be positive", "bus", k + 1, VM + 1)
        buses.append(Bus(
            index=k + 1, kind=kind,
            p_d=row[PD] / base, q_d=row[QD] / base,
            g_sh=row[GS] / base, b_sh=row[BS] / base,
            v_set=float(v_set) if kind is not BusKind.PQ else float(row[VM]),
            theta_set=math.radians(row[VA]) if kind is BusKind.SLACK else 0.0,
            p_g=pg[k], q_g=qg[k],
        ))

    branches = []
    for r, row in enumerate(br_rows, start=1):
        f, t = int(row[F_BUS]), int(row[T_BUS])
        for col, b in ((F_BUS, f), (T_BUS, t)):
            if b not in pos:
                raise CaseError(f"branch endpoint {b} is not a bus", "branch", r, col + 1)
        if f == t:
            raise CaseError("branch connects a bus to itself", "branch", r, T_BUS + 1)
        if row[BR_STATUS] <= 0:
            continue
        if row[BR_R] == 0 and row[BR_X] == 0:
            raise CaseError("branch has zero impedance", "branch", r, BR_X + 1)
        tap = row[TAP] if row[TAP] != 0 else 1.0
        if tap < 0:
            raise CaseError("tap ratio must be positive", "branch", r, TAP + 1)
        branches.append(Branch(
            from_bus=pos[f] + 1, to_bus=pos[t] + 1,
            r=row[BR_R], x=row[BR_X], b_ch=row[BR_B],
            tap=tap, shift=math.radians(row[SHIFT]),
        ))
    return Network(tuple(buses), tuple(branches), base, tuple(ids))


def load_case(path_or_name: str | Path) -> Network:
    """Read a case file, or a bundled case by name (``"case9"``, ``"case14"``)."""
    p = Path(path_or_name)
    if p.exists():
        return parse_case(p.read_text())
    name = str(path_or_name)
    if not name.endswith(".m"):
        name += ".m"
    try:
        text = resources.files("pfatlas.data").joinpath(name).read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        raise FileNotFoundError(f"no case file or bundled case named {path_or_name!r}") from None
    return parse_case(text)


def write_case(net: Network, name: str = "case") -> str:
    """Serialize ``net`` back to MATPOWER text that :func:`parse_case` reads identically."""
    base = net.base_mva
    ids = net.bus_ids
    lines = [f"function mpc = {name}", "mpc.version = '2';", f"mpc.baseMVA = {base!r};", "mpc.bus = ["]
    for b, bid in zip(net.buses, ids):
        vm = b.v_set
        va = math.degrees(b.theta_set)
        lines.append(f"\t{bid}\t{int(b.kind)}\t{b.p_d * base!r}\t{b.q_d * base!r}\t"
                     f"{b.g_sh * base!r}\t{b.b_sh * base!r}\t1\t{vm!r}\t{va!r};")
    lines += ["];", "mpc.gen = ["]
    for b, bid in zip(net.buses, ids):
        if b.kind is not BusKind.PQ or b.p_g or b.q_g:
            # PQ-bus generators are written with status 1 but would turn the
            # bus PV on re-parse only if the bus type said so; type stays 1.
            lines.append(f"\t{bid}\t{b.p_g * base!r}\t{b.q_g * base!r}\t0\t0\t{b.v_set!r}\t{base!r}\t1;")
    lines += ["];", "mpc.branch = ["]
    for br in net.branches:
        lines.append(f"\t{ids[br.from_bus - 1]}\t{ids[br.to_bus - 1]}\t{br.r!r}\t{br.x!r}\t{br.b_ch!r}"
                     f"\t0\t0\t0\t{br.tap!r}\t{math.degrees(br.shift)!r}\t{int(br.in_service)};")
    lines.append("];")
    return "\n".join(lines) + "\n"


def scale_load(net: Network, lam: float) -> Network:
    """Multiply every active demand by ``lam``; reactive demand is unchanged."""
    if not lam > 0:
        raise ValueError(f"load scale must be positive, got {lam}")
    buses = tuple(dataclasses.replace(b, p_d=lam * b.p_d) for b in net.buses)
    return dataclasses.replace(net, buses=buses)
