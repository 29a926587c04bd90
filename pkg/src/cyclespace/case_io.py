"""Grid case parsing, validation and serialization.

Supports a subset of the MATPOWER case text format (``mpc.baseMVA``,
``mpc.bus``, ``mpc.branch``), a native JSON schema, and single-column CSV
load profiles.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "CaseError",
    "CaseSyntaxError",
    "BusRecord",
    "BranchRecord",
    "GridCase",
    "LoadProfile",
    "parse_matpower_case",
    "parse_json_case",
    "write_json_case",
    "load_profile_csv",
    "write_profile_csv",
    "synthetic_profile",
    "load_case",
    "builtin_cases",
]

# MATPOWER column indices (0-based)
BUS_I, BUS_TYPE, PD = 0, 1, 2
F_BUS, T_BUS, BR_X, BR_STATUS = 0, 1, 3, 10
REF = 3


class CaseError(ValueError):
    """Raised when a case violates a structural invariant."""


class CaseSyntaxError(CaseError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class BusRecord:
    id: int
    base_load: float


@dataclass(frozen=True)
class BranchRecord:
    id: int
    from_bus: int
    to_bus: int
    reactance: float


@dataclass(frozen=True)
class GridCase:
    case_name: str
    base_mva: float
    buses: tuple[BusRecord, ...]
    branches: tuple[BranchRecord, ...]
    slack_bus: int

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        validate_case(self)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def reactances(self) -> np.ndarray:
        return np.array([br.reactance for br in self.branches], dtype=float)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}


@dataclass(frozen=True)
class LoadProfile:
    scale_factors: np.ndarray
    timestamps: np.ndarray = field(default=None)

    def __post_init__(self):
        sf = np.asarray(self.scale_factors, dtype=float).ravel()
        if sf.size == 0:
            raise CaseError("load profile is empty")
        if not np.all(np.isfinite(sf)) or np.any(sf <= 0):
            raise CaseError("load profile scale factors must be positive and finite")
        object.__setattr__(self, "scale_factors", sf)
        ts = np.arange(sf.size) if self.timestamps is None else np.asarray(self.timestamps)
        if ts.shape != sf.shape:
            raise CaseError("timestamps and scale factors differ in length")
        object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return self.scale_factors.size


def _components(n, edges):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(n)})


def validate_case(case: GridCase) -> None:
    ids = [b.id for b in case.buses]
    if not ids:
        raise CaseError("case has no buses")
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus identifiers")
    for b in case.buses:
        if not math.isfinite(b.base_load):
            raise CaseError(f"bus {b.id}: base load is not finite")
    index = {bid: i for i, bid in enumerate(ids)}
    if case.slack_bus not in index:
        raise CaseError(f"slack bus {case.slack_bus} is not a bus of the case")
    edges = []
    for k, br in enumerate(case.branches):
        if br.id != k:
            raise CaseError(f"branch ids must be 0..m-1 in order (got {br.id} at position {k})")
        if br.from_bus not in index or br.to_bus not in index:
            raise CaseError(f"branch {br.id} references an unknown bus")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {br.id} is a self-loop")
        if not (br.reactance > 0) or not math.isfinite(br.reactance):
            raise CaseError(f"branch {br.id}: nonpositive reactance {br.reactance}")
        edges.append((index[br.from_bus], index[br.to_bus]))
    if _components(len(ids), edges) != 1:
        raise CaseError("case graph is disconnected")


# ---------------------------------------------------------------- MATPOWER

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")


def _strip_comments(text):
    lines = []
    for line in text.splitlines():
        cut = line.find("%")
        lines.append(line if cut < 0 else line[:cut])
    return lines


def _offset_to_linecol(lines, offset):
    pos = 0
    for i, line in enumerate(lines):
        if offset <= pos + len(line):
            return i + 1, offset - pos + 1
        pos += len(line) + 1
    return len(lines), 1


def _parse_matrix(lines, body, start):
    """Parse the inside of ``[ ... ]`` into a list of float rows."""
    rows, row = [], []
    token_re = re.compile(r"[^\s,;]+|;|\n")
    for mt in token_re.finditer(body):
        tok = mt.group()
        if tok in (";", "\n"):
            if row:
                rows.append(row)
                row = []
            continue
        try:
            row.append(float(tok))
        except ValueError:
            line, col = _offset_to_linecol(lines, start + mt.start())
            raise CaseSyntaxError(f"invalid numeric token {tok!r}", line, col) from None
    if row:
        rows.append(row)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        line, col = _offset_to_linecol(lines, start)
        raise CaseSyntaxError("matrix rows have inconsistent lengths", line, col)
    return rows


def _matpower_fields(text):
    lines = _strip_comments(text)
    clean = "\n".join(lines)
    fields = {}
    pos = 0
    while True:
        m = _ASSIGN.search(clean, pos)
        if m is None:
            break
        name, vstart = m.group(1), m.end()
        if clean.startswith("[", vstart):
            end = clean.find("]", vstart)
            if end < 0:
                line, col = _offset_to_linecol(lines, vstart)
                raise CaseSyntaxError(f"unterminated matrix for mpc.{name}", line, col)
            fields[name] = _parse_matrix(lines, clean[vstart + 1 : end], vstart + 1)
            pos = end + 1
        else:
            end = clean.find(";", vstart)
            nl = clean.find("\n", vstart)
            if end < 0 or (0 <= nl < end):
                end = nl if nl >= 0 else len(clean)
            fields[name] = clean[vstart:end].strip()
            pos = end + 1
    return fields, lines


def parse_matpower_case(text: str, case_name: str | None = None) -> GridCase:
    """Parse MATPOWER case text into a :class:`GridCase`.

    Only ``baseMVA``, ``bus`` and ``branch`` are read. Bus column 3 (PD, MW)
    becomes the per-unit base load, branch columns 1, 2 and 4 become the
    endpoints and reactance, and out-of-service branches are dropped.
    """
    fields, lines = _matpower_fields(text)
    for key in ("baseMVA", "bus", "branch"):
        if key not in fields:
            raise CaseSyntaxError(f"missing mpc.{key} assignment", len(lines), 1)
    try:
        base_mva = float(fields["baseMVA"])
    except (TypeError, ValueError):
        raise CaseError(f"mpc.baseMVA is not numeric: {fields['baseMVA']!r}") from None
    if not base_mva > 0:
        raise CaseError("mpc.baseMVA must be positive")

    bus = fields["bus"]
    branch = fields["branch"]
    if not bus or len(bus[0]) < 3:
        raise CaseError("mpc.bus needs at least 3 columns")
    if branch and len(branch[0]) < 4:
        raise CaseError("mpc.branch needs at least 4 columns")

    buses = [BusRecord(int(r[BUS_I]), r[PD] / base_mva) for r in bus]
    slacks = [int(r[BUS_I]) for r in bus if int(r[BUS_TYPE]) == REF]
    if len(slacks) != 1:
        raise CaseError(f"expected exactly one slack (type 3) bus, found {len(slacks)}")

    branches = []
    for r in branch:
        if len(r) > BR_STATUS and r[BR_STATUS] == 0:
            continue
        if not r[BR_X] > 0:
            raise CaseError(f"nonpositive reactance {r[BR_X]} on branch {int(r[F_BUS])}-{int(r[T_BUS])}")
        branches.append(BranchRecord(len(branches), int(r[F_BUS]), int(r[T_BUS]), float(r[BR_X])))

    if case_name is None:
        m = re.search(r"function\s+mpc\s*=\s*(\w+)", text)
        case_name = m.group(1) if m else "case"
    return GridCase(case_name, base_mva, buses, branches, slacks[0])


# -------------------------------------------------------------------- JSON

_REQUIRED = ("case_name", "base_mva", "buses", "branches", "slack_bus")


def case_to_dict(case: GridCase) -> dict:
    return {
        "case_name": case.case_name,
        "base_mva": case.base_mva,
        "buses": [{"id": b.id, "base_load": b.base_load} for b in case.buses],
        "branches": [
            {"id": br.id, "from": br.from_bus, "to": br.to_bus, "x": br.reactance}
            for br in case.branches
        ],
        "slack_bus": case.slack_bus,
    }


def case_from_dict(data: dict) -> GridCase:
    if not isinstance(data, dict):
        raise CaseError("schema error: case JSON must be an object")
    missing = [k for k in _REQUIRED if k not in data]
    if missing:
        raise CaseError(f"schema error: missing field(s) {', '.join(missing)}")
    try:
        buses = [BusRecord(int(b["id"]), float(b["base_load"])) for b in data["buses"]]
        branches = [
            BranchRecord(int(b["id"]), int(b["from"]), int(b["to"]), float(b["x"]))
            for b in data["branches"]
        ]
        return GridCase(
            str(data["case_name"]), float(data["base_mva"]), buses, branches, int(data["slack_bus"])
        )
    except (KeyError, TypeError) as exc:
        raise CaseError(f"schema error: {exc!r}") from None


def parse_json_case(text: str) -> GridCase:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    return case_from_dict(data)


def write_json_case(case: GridCase) -> str:
    # repr-precision floats round-trip exactly through json
    return json.dumps(case_to_dict(case), indent=2)


# ---------------------------------------------------------------- profiles


def load_profile_csv(text: str) -> LoadProfile:
    values = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        cell = line.split(",")[-1].strip()
        try:
            v = float(cell)
        except ValueError:
            if not values and lineno == 1:
                continue  # header
            raise CaseSyntaxError(f"invalid scale factor {cell!r}", lineno, 1) from None
        if not v > 0:
            raise CaseError(f"nonpositive scale factor {v} on line {lineno}")
        values.append(v)
    if not values:
        raise CaseError("load profile is empty")
    return LoadProfile(np.array(values))


def write_profile_csv(profile: LoadProfile) -> str:
    return "scale\n" + "".join(f"{v!r}\n" for v in profile.scale_factors.tolist())


def synthetic_profile(T: int, seed: int = 0, period: int = 96, amplitude: float = 0.15,
                      jitter: float = 0.03) -> LoadProfile:
    """Daily-like sinusoid with uniform jitter; a stand-in for utility load data."""
    if T < 1:
        raise CaseError("profile length must be >= 1")
    rng = np.random.default_rng([seed, 0x5C])
    t = np.arange(T)
    base = 1.0 + amplitude * np.sin(2 * np.pi * t / period)
    return LoadProfile(base * rng.uniform(1 - jitter, 1 + jitter, size=T))


# ---------------------------------------------------------------- builtins

_BUILTIN = {"ieee14": "case14.m", "ieee30": "case30.m", "ieee57": "case57.m", "ieee118": "case118.m"}


def builtin_cases() -> list[str]:
    return sorted(_BUILTIN, key=lambda k: int(k[4:]))


def load_case(name_or_path: str | Path) -> GridCase:
    """Load a bundled case (``ieee14`` ...) or a ``.m`` / ``.json`` file."""
    key = str(name_or_path).lower()
    if key in _BUILTIN or f"ieee{key.removeprefix('case')}" in _BUILTIN:
        fname = _BUILTIN.get(key) or _BUILTIN[f"ieee{key.removeprefix('case')}"]
        text = resources.files("cyclespace.cases").joinpath(fname).read_text()
        return parse_matpower_case(text)
    path = Path(name_or_path)
    if not path.exists():
        raise CaseError(f"no such case: {name_or_path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return parse_json_case(text)
    return parse_matpower_case(text, case_name=None)
