"""Static grid description and the JSON case-file loader."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

BUS_KINDS = ("slack", "pv", "pq")
GEN_KINDS = ("thermal", "renewable", "balanced")


class CaseError(ValueError):
    """Raised when a case file cannot be parsed or violates an invariant."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class BusSpec:
    id: int
    kind: str
    v_max: float = 1.05
    v_min: float = 0.95


@dataclass(frozen=True)
class LineSpec:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float
    i_max: float


@dataclass(frozen=True)
class GeneratorSpec:
    bus: int
    kind: str
    p_max: float
    p_min: float
    q_max: float
    q_min: float
    v_set: float = 1.0
    ramp_rate: float = 0.05
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0
    c_onoff: float = 0.0
    name: str = ""
    # renewables only: "solar" or "wind", used by the profile generator
    source: str = ""


@dataclass(frozen=True)
class LoadSpec:
    bus: int
    base_p: float
    base_q: float


@dataclass(frozen=True, eq=False)
class GridCase:
    buses: tuple
    lines: tuple
    generators: tuple
    loads: tuple
    s_base: float = 100.0
    name: str = ""

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_line(self):
        return len(self.lines)

    @property
    def n_gen(self):
        return len(self.generators)

    @property
    def n_load(self):
        return len(self.loads)

    @cached_property
    def bus_index(self):
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def slack_bus(self):
        return next(i for i, b in enumerate(self.buses) if b.kind == "slack")

    @cached_property
    def balanced_id(self):
        return next(i for i, g in enumerate(self.generators) if g.kind == "balanced")

    @cached_property
    def thermal_ids(self):
        return np.array([i for i, g in enumerate(self.generators) if g.kind == "thermal"], dtype=int)

    @cached_property
    def renewable_ids(self):
        return np.array([i for i, g in enumerate(self.generators) if g.kind == "renewable"], dtype=int)

    @cached_property
    def controllable_ids(self):
        """Generators that appear in the action vector (all but the balanced unit)."""
        return np.array([i for i, g in enumerate(self.generators) if g.kind != "balanced"], dtype=int)

    @cached_property
    def gen_bus(self):
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    @cached_property
    def load_bus(self):
        return np.array([self.bus_index[ld.bus] for ld in self.loads], dtype=int)

    @cached_property
    def line_from(self):
        return np.array([self.bus_index[ln.from_bus] for ln in self.lines], dtype=int)

    @cached_property
    def line_to(self):
        return np.array([self.bus_index[ln.to_bus] for ln in self.lines], dtype=int)

    def gen_array(self, name):
        return np.array([getattr(g, name) for g in self.generators], dtype=float)

    def line_array(self, name):
        return np.array([getattr(ln, name) for ln in self.lines], dtype=float)

    def bus_array(self, name):
        return np.array([getattr(b, name) for b in self.buses], dtype=float)

    def load_array(self, name):
        return np.array([getattr(ld, name) for ld in self.loads], dtype=float)

    def to_dict(self):
        def strip(obj, drop=("name", "source")):
            d = {k: v for k, v in obj.__dict__.items()}
            for k in drop:
                if k in d and not d[k]:
                    del d[k]
            return d

        out = {"format": FORMAT_VERSION, "s_base": self.s_base}
        if self.name:
            out["name"] = self.name
        out["buses"] = [dict(b.__dict__) for b in self.buses]
        out["lines"] = [dict(ln.__dict__) for ln in self.lines]
        out["generators"] = [strip(g) for g in self.generators]
        out["loads"] = [dict(ld.__dict__) for ld in self.loads]
        return out


def to_pu(value_mw, s_base):
    return np.asarray(value_mw, dtype=float) / s_base


def from_pu(value_pu, s_base):
    return np.asarray(value_pu, dtype=float) * s_base


_REQUIRED = {
    "buses": (BusSpec, ("id", "kind", "v_max", "v_min")),
    "lines": (LineSpec, ("from_bus", "to_bus", "r", "x", "b", "i_max")),
    "generators": (GeneratorSpec, ("bus", "kind", "p_max", "p_min", "q_max", "q_min")),
    "loads": (LoadSpec, ("bus", "base_p", "base_q")),
}
_STRINGS = {"kind", "name", "source"}
_INTS = {"id", "from_bus", "to_bus", "bus"}


def _parse_records(section, raw, problems):
    cls, required = _REQUIRED[section]
    allowed = set(cls.__dataclass_fields__)
    out = []
    if not isinstance(raw, list):
        problems.append(f"{section}: expected a list")
        return out
    for i, rec in enumerate(raw):
        where = f"{section}[{i}]"
        if not isinstance(rec, dict):
            problems.append(f"{where}: expected an object")
            continue
        bad = False
        for key in required:
            if key not in rec:
                problems.append(f"{where}.{key}: missing")
                bad = True
        for key in rec:
            if key not in allowed:
                problems.append(f"{where}.{key}: unknown field")
                bad = True
        kwargs = {}
        for key, val in rec.items():
            if key not in allowed:
                continue
            if key in _STRINGS:
                if not isinstance(val, str):
                    problems.append(f"{where}.{key}: expected a string")
                    bad = True
                kwargs[key] = val
            elif key in _INTS:
                if isinstance(val, bool) or not isinstance(val, int):
                    problems.append(f"{where}.{key}: expected an integer")
                    bad = True
                kwargs[key] = val
            else:
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    problems.append(f"{where}.{key}: expected a number")
                    bad = True
                    continue
                kwargs[key] = float(val)
        if not bad:
            out.append(cls(**kwargs))
    return out


def case_from_dict(data, name=""):
    """Build and validate a `GridCase` from the decoded JSON document."""
    problems = []
    if not isinstance(data, dict):
        raise CaseError("top level: expected an object")
    fmt = data.get("format")
    if fmt is None:
        problems.append("format: missing (expected 1)")
    elif fmt != FORMAT_VERSION:
        problems.append(f"format: unsupported version {fmt!r}")
    known = {"format", "s_base", "name", *_REQUIRED}
    for key in data:
        if key not in known:
            problems.append(f"{key}: unknown top-level key")
    s_base = data.get("s_base")
    if s_base is None:
        problems.append("s_base: missing")
    elif isinstance(s_base, bool) or not isinstance(s_base, (int, float)) or s_base <= 0:
        problems.append("s_base: expected a positive number")
    parsed = {}
    for section in _REQUIRED:
        if section not in data:
            problems.append(f"{section}: missing")
            parsed[section] = []
        else:
            parsed[section] = _parse_records(section, data[section], problems)
    if problems:
        raise CaseError(problems)
    case = GridCase(
        buses=tuple(parsed["buses"]),
        lines=tuple(parsed["lines"]),
        generators=tuple(parsed["generators"]),
        loads=tuple(parsed["loads"]),
        s_base=float(s_base),
        name=data.get("name", name),
    )
    validate_case(case)
    return case


def validate_case(case):
    """Check every structural invariant; raise `CaseError` listing all failures."""
    problems = []
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        problems.append("duplicate bus ids")
    n_slack = sum(b.kind == "slack" for b in case.buses)
    if n_slack == 0:
        problems.append("no slack bus")
    elif n_slack > 1:
        problems.append("multiple slack buses")
    for b in case.buses:
        if b.kind not in BUS_KINDS:
            problems.append(f"bus {b.id}: unknown kind {b.kind!r}")
        if not 0 < b.v_min < b.v_max:
            problems.append(f"bus {b.id}: require 0 < v_min < v_max")
    known = set(ids)
    for i, ln in enumerate(case.lines):
        if ln.from_bus not in known or ln.to_bus not in known:
            problems.append(f"line {i}: unknown bus")
        if ln.from_bus == ln.to_bus:
            problems.append(f"line {i}: from_bus equals to_bus")
        if ln.x == 0:
            problems.append(f"line {i}: x must be non-zero")
        if ln.i_max <= 0:
            problems.append(f"line {i}: i_max must be positive")
    n_bal = sum(g.kind == "balanced" for g in case.generators)
    if n_bal != 1:
        problems.append(f"expected exactly one balanced generator, found {n_bal}")
    kinds = {b.id: b.kind for b in case.buses}
    for i, g in enumerate(case.generators):
        label = f"generator {i}" + (f" ({g.name})" if g.name else "")
        if g.kind not in GEN_KINDS:
            problems.append(f"{label}: unknown kind {g.kind!r}")
        if g.bus not in known:
            problems.append(f"{label}: unknown bus {g.bus}")
        elif kinds[g.bus] == "pq":
            problems.append(f"{label}: sits on a pq bus")
        elif g.kind == "balanced" and kinds[g.bus] != "slack":
            problems.append(f"{label}: balanced generator must sit on the slack bus")
        if not g.p_min < g.p_max:
            problems.append(f"{label}: p_min must be below p_max")
        if not g.q_min < g.q_max:
            problems.append(f"{label}: q_min must be below q_max")
        if g.kind == "renewable" and g.p_min != 0:
            problems.append(f"{label}: renewable p_min must be 0")
        if g.kind == "thermal" and not 0 < g.ramp_rate <= 1:
            problems.append(f"{label}: ramp_rate must lie in (0, 1]")
        if g.source and g.source not in ("solar", "wind"):
            problems.append(f"{label}: source must be 'solar' or 'wind'")
    for i, ld in enumerate(case.loads):
        if ld.bus not in known:
            problems.append(f"load {i}: unknown bus {ld.bus}")
    if not problems and not _connected(case):
        problems.append("network is not connected with all lines in service")
    if problems:
        raise CaseError(problems)


def _connected(case):
    idx = case.bus_index
    adj = {i: set() for i in range(case.n_bus)}
    for ln in case.lines:
        a, b = idx[ln.from_bus], idx[ln.to_bus]
        adj[a].add(b)
        adj[b].add(a)
    seen, stack = {0}, [0]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == case.n_bus


def load_case(path):
    """Read a grid-case JSON file. Bundled names such as ``six_bus`` resolve to packaged data."""
    path = Path(path)
    if not path.exists():
        bundled = bundled_case_path(str(path))
        if bundled is None:
            raise FileNotFoundError(f"case file not found: {path}")
        path = bundled
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return case_from_dict(data, name=path.stem)


def bundled_case_path(name):
    data_dir = Path(__file__).resolve().parent.parent / "data"
    stem = Path(name).name
    if not stem.endswith(".json"):
        stem += ".json"
    candidate = data_dir / stem
    return candidate if candidate.exists() else None


def save_case(case, path):
    Path(path).write_text(json.dumps(case.to_dict(), indent=2) + "\n")
