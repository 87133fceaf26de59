"""Network model, MATPOWER case parsing and bus connectivity."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

SLACK, PV, PQ = "slack", "PV", "PQ"
IN_SERVICE, OUTAGED = "in_service", "outaged"

_BUS_TYPES = {1: PQ, 2: PV, 3: SLACK}
_BUS_CODES = {PQ: 1, PV: 2, SLACK: 3}

BUNDLED_CASES = ("ieee14", "ieee30", "ieee118")


class CaseParseError(ValueError):
    """Raised for malformed or inconsistent case files."""

    def __init__(self, reason: str, line: int | None = None):
        self.reason = reason
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{reason}")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    load_p: float = 0.0
    load_q: float = 0.0
    gen_p: float = 0.0
    voltage_setpoint: float = 1.0
    is_zib: bool = False
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    has_gen: bool = False
    gen_q_max: float = 0.0
    gen_q_min: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    status: str = IN_SERVICE

    @property
    def in_service(self) -> bool:
        return self.status == IN_SERVICE

    @property
    def z(self) -> float:
        return float(np.hypot(self.r, self.x))


@dataclass(frozen=True)
class Network:
    """Immutable grid. Bus order defines the internal 0-based index."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    name: str = "case"

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseParseError("duplicate bus identifiers")
        known = set(ids)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise CaseParseError(f"branch {br.id} references absent bus {end}")
            if br.from_bus == br.to_bus:
                raise CaseParseError(f"branch {br.id} is a self loop at bus {br.from_bus}")
            if br.x == 0:
                raise CaseParseError(f"branch {br.id} has zero reactance")
        slacks = [b.id for b in self.buses if b.kind == SLACK]
        if len(slacks) != 1:
            raise CaseParseError(f"expected exactly one slack bus, found {len(slacks)}")
        if not _is_connected(len(ids), self._edges()):
            raise CaseParseError("network is disconnected over in-service branches")

    def _edges(self):
        pos = {b.id: i for i, b in enumerate(self.buses)}
        return [(pos[br.from_bus], pos[br.to_bus]) for br in self.branches if br.in_service]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def index(self) -> dict[int, int]:
        """External bus id -> internal 0-based position."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    @cached_property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind == SLACK)

    @cached_property
    def in_service_branches(self) -> tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.in_service)

    @cached_property
    def zib_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.buses) if b.is_zib)

    def branch(self, k: int) -> Branch:
        for br in self.branches:
            if br.id == k:
                return br
        raise KeyError(f"unknown branch index {k}")

    def endpoints(self, br: Branch) -> tuple[int, int]:
        return self.index[br.from_bus], self.index[br.to_bus]

    @cached_property
    def degree(self) -> np.ndarray:
        """Incident in-service branch count per bus (parallel lines counted separately)."""
        deg = np.zeros(self.n_bus, dtype=int)
        for br in self.in_service_branches:
            i, j = self.endpoints(br)
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbor_sets(self, skip_branch: int | None = None) -> list[set[int]]:
        nb: list[set[int]] = [set() for _ in range(self.n_bus)]
        for br in self.in_service_branches:
            if br.id == skip_branch:
                continue
            i, j = self.endpoints(br)
            nb[i].add(j)
            nb[j].add(i)
        return nb

    def with_zibs(self, bus_ids: Iterable[int]) -> "Network":
        """Copy with the ZIB flags replaced by an explicit override list."""
        chosen = set(bus_ids)
        unknown = chosen - set(self.bus_ids)
        if unknown:
            raise KeyError(f"unknown ZIB bus ids {sorted(unknown)}")
        return replace(self, buses=tuple(replace(b, is_zib=b.id in chosen) for b in self.buses))

    def with_branch_status(self, k: int, status: str) -> "Network":
        self.branch(k)
        return replace(
            self,
            branches=tuple(replace(br, status=status) if br.id == k else br for br in self.branches),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [asdict(b) for b in self.buses],
            "branches": [asdict(br) for br in self.branches],
        }


def _is_connected(n: int, edges) -> bool:
    if n <= 1:
        return True
    nb: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        nb[i].append(j)
        nb[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for j in nb[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == n


# -- parsing -----------------------------------------------------------------

_TABLE_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _read_tables(text: str) -> tuple[float, dict[str, list[tuple[int, list[float]]]]]:
    lines = text.splitlines()
    base_mva = None
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    current = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        if current is None:
            m = _SCALAR_RE.search(line)
            if m:
                base_mva = float(m.group(1))
                continue
            m = _TABLE_RE.search(line)
            if m:
                current = m.group(1)
                tables[current] = []
                line = line[m.end():]
            else:
                continue
        closed = "]" in line
        body = line.split("]", 1)[0]
        for chunk in body.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                row = [float(v) for v in chunk.replace(",", " ").split()]
            except ValueError:
                raise CaseParseError(f"non-numeric entry in mpc.{current}", lineno) from None
            tables[current].append((lineno, row))
        if closed:
            current = None
    if current is not None:
        raise CaseParseError(f"unterminated table mpc.{current}", len(lines))
    if base_mva is None:
        raise CaseParseError("missing mpc.baseMVA")
    for required in ("bus", "branch"):
        if required not in tables:
            raise CaseParseError(f"missing mpc.{required} table")
    return base_mva, tables


def _check_width(rows, table: str, width: int):
    for lineno, row in rows:
        if len(row) < width:
            raise CaseParseError(f"mpc.{table} row has {len(row)} columns, need {width}", lineno)


def parse_case(text: str, name: str = "case") -> Network:
    """Parse MATPOWER-style case text. Quantities are converted to per-unit."""
    base, tables = _read_tables(text)
    bus_rows, gen_rows, br_rows = tables["bus"], tables.get("gen", []), tables["branch"]
    _check_width(bus_rows, "bus", 9)
    _check_width(gen_rows, "gen", 8)
    _check_width(br_rows, "branch", 5)

    gens: dict[int, list[list[float]]] = {}
    ids = {int(r[0]) for _, r in bus_rows}
    for lineno, row in gen_rows:
        if int(row[0]) not in ids:
            raise CaseParseError(f"generator references absent bus {int(row[0])}", lineno)
        if row[7] > 0:
            gens.setdefault(int(row[0]), []).append(row)

    buses = []
    for lineno, row in bus_rows:
        bid, code = int(row[0]), int(row[1])
        if code not in _BUS_TYPES:
            raise CaseParseError(f"unsupported bus type {code} at bus {bid}", lineno)
        kind = _BUS_TYPES[code]
        g = gens.get(bid, [])
        if kind == PV and not g:
            kind = PQ
        setpoint = g[0][5] if g else row[7]
        buses.append(
            Bus(
                id=bid,
                kind=kind,
                load_p=row[2] / base,
                load_q=row[3] / base,
                gen_p=sum(r[1] for r in g) / base,
                voltage_setpoint=float(setpoint),
                shunt_g=row[4] / base,
                shunt_b=row[5] / base,
                has_gen=bool(g),
                gen_q_max=sum(r[3] for r in g) / base,
                gen_q_min=sum(r[4] for r in g) / base,
            )
        )

    branches = []
    for k, (lineno, row) in enumerate(br_rows):
        status = IN_SERVICE if len(row) < 11 or row[10] > 0 else OUTAGED
        if row[3] == 0:
            raise CaseParseError(f"branch {k} has zero reactance", lineno)
        if int(row[0]) not in ids or int(row[1]) not in ids:
            missing = int(row[0]) if int(row[0]) not in ids else int(row[1])
            raise CaseParseError(f"branch {k} references absent bus {missing}", lineno)
        branches.append(Branch(k, int(row[0]), int(row[1]), row[2], row[3], row[4], status))

    net = Network(tuple(buses), tuple(branches), base, name)
    return net.with_zibs(detect_zibs(net))


def load_case(path_or_alias: str | Path) -> Network:
    """Load a case file, or one of the bundled aliases ``ieee14``/``ieee30``/``ieee118``."""
    key = str(path_or_alias)
    if key in BUNDLED_CASES:
        text = resources.files("pmu_placement.cases").joinpath(f"{key}.m").read_text()
        return parse_case(text, name=key)
    path = Path(key)
    return parse_case(path.read_text(), name=path.stem)


def detect_zibs(net: Network) -> set[int]:
    """Buses with no load and no generator attached."""
    return {
        b.id
        for b in net.buses
        if b.load_p == 0 and b.load_q == 0 and b.gen_p == 0 and not b.has_gen
    }


def _num(v: float) -> str:
    return repr(float(v))


def _scaled(v: float, base: float) -> str:
    """Decimal text for ``v * base`` that divides back to exactly ``v``."""
    guess = float(v) * base
    for direction in (np.inf, -np.inf):
        cand = guess
        for _ in range(8):
            if cand / base == v:
                return repr(cand)
            cand = float(np.nextafter(cand, direction))
    return repr(guess)


def to_case_text(net: Network) -> str:
    """Serialize back to MATPOWER text; ``parse_case`` of the result reproduces ``net``."""
    base = net.base_mva
    out = [f"function mpc = {net.name}", "mpc.version = '2';", f"mpc.baseMVA = {_num(base)};", "mpc.bus = ["]
    for b in net.buses:
        out.append(
            "\t".join(
                [str(b.id), str(_BUS_CODES[b.kind]), _scaled(b.load_p, base), _scaled(b.load_q, base),
                 _scaled(b.shunt_g, base), _scaled(b.shunt_b, base), "1", _num(b.voltage_setpoint), "0"]
            )
            + ";"
        )
    out += ["];", "mpc.gen = ["]
    for b in net.buses:
        if b.has_gen:
            out.append(
                "\t".join(
                    [str(b.id), _scaled(b.gen_p, base), "0", _scaled(b.gen_q_max, base),
                     _scaled(b.gen_q_min, base), _num(b.voltage_setpoint), _num(base), "1"]
                )
                + ";"
            )
    out += ["];", "mpc.branch = ["]
    for br in sorted(net.branches, key=lambda br: br.id):
        status = "1" if br.in_service else "0"
        out.append(
            "\t".join([str(br.from_bus), str(br.to_bus), _num(br.r), _num(br.x), _num(br.b),
                       "0", "0", "0", "0", "0", status])
            + ";"
        )
    out.append("];")
    return "\n".join(out) + "\n"


def dump_model(net: Network) -> str:
    return json.dumps({"schema_version": 1, **net.to_dict()}, indent=2, sort_keys=True)


# -- connectivity --------------------------------------------------------------

def connectivity(net: Network) -> np.ndarray:
    """Binary matrix a with a_ii = 1 and a_ij = 1 iff an in-service branch joins i and j."""
    a = np.eye(net.n_bus, dtype=np.int8)
    for br in net.in_service_branches:
        i, j = net.endpoints(br)
        a[i, j] = a[j, i] = 1
    return a


def contingency_connectivity(net: Network, k: int) -> np.ndarray:
    """Connectivity with in-service branch ``k`` removed; parallel duplicates keep the link."""
    br = net.branch(k)
    if not br.in_service:
        raise ValueError(f"branch {k} is not in service")
    a = np.eye(net.n_bus, dtype=np.int8)
    for other in net.in_service_branches:
        if other.id == k:
            continue
        i, j = net.endpoints(other)
        a[i, j] = a[j, i] = 1
    return a


def max_branch_degree(net: Network) -> int:
    return int(net.degree.max()) if net.n_bus else 0


def islanding_branches(net: Network) -> set[int]:
    """In-service branches whose single outage disconnects the network."""
    result = set()
    for br in net.in_service_branches:
        edges = [net.endpoints(o) for o in net.in_service_branches if o.id != br.id]
        if not _is_connected(net.n_bus, edges):
            result.add(br.id)
    return result
