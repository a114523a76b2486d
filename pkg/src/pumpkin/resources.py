"""Analytical resource model in five categories.

Unit costs are calibrated so that ratios between designs behave like the
synthesis results the model stands in for; absolute counts are indicative only.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from .errors import UnknownOpCost, ValidationError
from .ir import (
    DTYPE_BITS,
    Container,
    Graph,
    Issuer,
    MapScope,
    Packer,
    Reader,
    StreamNode,
    Synchronizer,
    Writer,
)
from .tasklet import op_counts

CATEGORIES = ("lut_logic", "lut_memory", "registers", "bram", "dsp")


@dataclass(frozen=True)
class ResourceVector:
    lut_logic: int = 0
    lut_memory: int = 0
    registers: int = 0
    bram: int = 0
    dsp: int = 0

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(*(getattr(self, c) + getattr(other, c) for c in CATEGORIES))

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(*(getattr(self, c) - getattr(other, c) for c in CATEGORIES))

    def scale(self, k: int) -> "ResourceVector":
        return ResourceVector(*(getattr(self, c) * k for c in CATEGORIES))

    def __le__(self, other: "ResourceVector") -> bool:
        return all(getattr(self, c) <= getattr(other, c) for c in CATEGORIES)

    def percent(self, budget: "Budget") -> dict[str, float]:
        return {c: 100.0 * getattr(self, c) / getattr(budget, c) for c in CATEGORIES}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Budget(ResourceVector):
    """Resources of one super logic region of a large data-center FPGA."""

    lut_logic: int = 439_000
    lut_memory: int = 205_000
    registers: int = 879_000
    bram: int = 672
    dsp: int = 2880

    def __post_init__(self):
        for c in CATEGORIES:
            if getattr(self, c) <= 0:
                raise ValidationError("budget entries must be positive", c)

    @classmethod
    def load(cls, path) -> "Budget":
        with open(path) as fh:
            data = json.load(fh)
        return cls(**{c: int(data[c]) for c in CATEGORIES if c in data})


def _default_ops() -> dict:
    f32 = {
        "add": {"lut_logic": 220, "registers": 350, "dsp": 2},
        "sub": {"lut_logic": 220, "registers": 350, "dsp": 2},
        "mul": {"lut_logic": 100, "registers": 160, "dsp": 3},
        "div": {"lut_logic": 800, "registers": 1400},
        "min": {"lut_logic": 60, "registers": 40},
        "max": {"lut_logic": 60, "registers": 40},
        "neg": {"lut_logic": 1},
        "select": {"lut_logic": 32},
    }
    i64 = {
        "add": {"lut_logic": 64, "registers": 64},
        "sub": {"lut_logic": 64, "registers": 64},
        "mul": {"lut_logic": 200, "registers": 200, "dsp": 4},
        "div": {"lut_logic": 2400, "registers": 2400},
        "min": {"lut_logic": 96, "registers": 64},
        "max": {"lut_logic": 96, "registers": 64},
        "neg": {"lut_logic": 64},
        "select": {"lut_logic": 64},
    }
    i32 = {k: {c: (v + 1) // 2 for c, v in d.items()} for k, d in i64.items()}
    ops = {}
    for dt, table in (("f32", f32), ("i64", i64), ("i32", i32)):
        for op, cost in table.items():
            ops[f"{op}:{dt}"] = cost
        for cmp in ("lt", "le", "gt", "ge", "eq", "ne"):
            ops[f"{cmp}:{dt}"] = {"lut_logic": 40 if dt == "f32" else DTYPE_BITS[dt] // 2}
    for op in ("and", "or", "not", "select", "eq", "ne"):
        ops[f"{op}:bool"] = {"lut_logic": 1}
    for op in ("add", "sub", "mul", "min", "max", "neg", "lt", "le", "gt", "ge", "eq", "ne",
               "and", "or", "not", "select", "div"):
        ops[f"{op}:idx"] = {"lut_logic": 16, "registers": 16}
    return ops


def _default_plumbing() -> dict:
    return {
        "synchronizer": {"registers_per_lane": 8, "registers_per_depth": 4},
        "issuer": {"lut_logic_per_lane": 16},
        "packer": {"lut_logic_per_lane": 16},
        "reader": {"lut_logic": 400, "registers": 600, "lut_logic_per_lane": 16, "registers_per_lane": 32},
        "writer": {"lut_logic": 400, "registers": 600, "lut_logic_per_lane": 16, "registers_per_lane": 32},
        "map": {"lut_logic": 300, "registers": 400},
        "stream": {"srl_depth": 32},
    }


@dataclass
class CostTable:
    ops: dict = field(default_factory=_default_ops)
    plumbing: dict = field(default_factory=_default_plumbing)
    buffers: dict = field(default_factory=lambda: {"bram_bits": 18432})

    def __post_init__(self):
        for section in (self.ops, self.plumbing, self.buffers):
            for key, val in section.items():
                vals = val.values() if isinstance(val, dict) else [val]
                if any(v < 0 for v in vals):
                    raise ValidationError("cost entries must be non-negative", key)

    @classmethod
    def load(cls, path) -> "CostTable":
        with open(path) as fh:
            data = json.load(fh)
        base = cls()
        base.ops.update(data.get("ops", {}))
        for k, v in data.get("plumbing", {}).items():
            base.plumbing.setdefault(k, {}).update(v)
        base.buffers.update(data.get("buffers", {}))
        base.__post_init__()
        return base

    def dumps(self) -> str:
        return json.dumps({"ops": self.ops, "plumbing": self.plumbing, "buffers": self.buffers},
                          sort_keys=True, indent=2) + "\n"


def _vec(d: dict, k: int = 1) -> ResourceVector:
    return ResourceVector(*(int(d.get(c, 0)) * k for c in CATEGORIES))


def _bram(bits: int, banks: int, block: int) -> int:
    return banks * math.ceil(bits / banks / block)


def _connector_types(graph: Graph, map_id: int) -> dict[str, str]:
    types = {}
    for e in graph.in_edges(map_id):
        n = graph.nodes[e.src]
        types[e.dst_conn] = getattr(n, "dtype", "f32")
    for e in graph.out_edges(map_id):
        n = graph.nodes[e.dst]
        types[e.src_conn] = getattr(n, "dtype", "f32")
    for b in graph.locals_of(map_id):
        types[graph.nodes[b].name] = graph.nodes[b].dtype
    return types


def map_cost(graph: Graph, map_id: int, costs: CostTable) -> ResourceVector:
    """Compute map with its tasklet replicated across lanes and its local buffers."""
    node = graph.nodes[map_id]
    total = _vec(costs.plumbing["map"])
    counts = op_counts(graph.tasklet_of(map_id).code, _connector_types(graph, map_id))
    for key, n in sorted(counts.items()):
        if key not in costs.ops:
            raise UnknownOpCost(key)
        total = total + _vec(costs.ops[key], n * node.vector_width)
    block = costs.buffers["bram_bits"]
    for b in graph.locals_of(map_id):
        c = graph.nodes[b]
        bits = math.prod(graph.shape_of(c)) * DTYPE_BITS[c.dtype]
        total = total + ResourceVector(bram=_bram(bits, node.vector_width, block))
    return total


def node_cost(graph: Graph, nid: int, costs: CostTable) -> ResourceVector:
    node = graph.nodes[nid]
    pl = costs.plumbing
    if isinstance(node, MapScope):
        return map_cost(graph, nid, costs)
    if isinstance(node, StreamNode):
        bits = DTYPE_BITS[node.dtype] * node.lanes
        return ResourceVector(lut_memory=bits * math.ceil(node.depth / pl["stream"]["srl_depth"]), registers=bits)
    if isinstance(node, (Reader, Writer)):
        p = pl["reader" if isinstance(node, Reader) else "writer"]
        return ResourceVector(lut_logic=p["lut_logic"] + p["lut_logic_per_lane"] * node.lanes,
                              registers=p["registers"] + p["registers_per_lane"] * node.lanes)
    if isinstance(node, Synchronizer):
        p = pl["synchronizer"]
        return ResourceVector(registers=p["registers_per_lane"] * node.lanes + p["registers_per_depth"] * node.depth)
    if isinstance(node, Issuer):
        return ResourceVector(lut_logic=pl["issuer"]["lut_logic_per_lane"] * node.wide)
    if isinstance(node, Packer):
        return ResourceVector(lut_logic=pl["packer"]["lut_logic_per_lane"] * node.wide)
    if isinstance(node, Container) and node.location == "local" and nid in graph.top_level():
        bits = math.prod(graph.shape_of(node)) * DTYPE_BITS[node.dtype]
        return ResourceVector(bram=_bram(bits, 1, costs.buffers["bram_bits"]))
    return ResourceVector()


def estimate(graph: Graph, costs: CostTable | None = None) -> ResourceVector:
    """Sum of per-node costs over the top-level graph."""
    costs = costs or CostTable()
    total = ResourceVector()
    for nid in graph.top_level():
        total = total + node_cost(graph, nid, costs)
    return total


@dataclass(frozen=True)
class OverBudget:
    category: str


@dataclass
class DiffReport:
    before: ResourceVector
    after: ResourceVector
    budget: Budget
    delta: dict
    delta_percent: dict
    flags: list

    def ratio(self, category: str) -> float | None:
        b = getattr(self.before, category)
        return getattr(self.after, category) / b if b else None

    def to_dict(self) -> dict:
        return {
            "before": self.before.to_dict(),
            "after": self.after.to_dict(),
            "budget": self.budget.to_dict(),
            "delta": self.delta,
            "delta_percent_of_budget": {k: round(v, 6) for k, v in self.delta_percent.items()},
            "over_budget": [f.category for f in self.flags],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def compare(before: ResourceVector, after: ResourceVector, budget: Budget | None = None) -> DiffReport:
    budget = budget or Budget()
    delta = (after - before).to_dict()
    pct = {c: 100.0 * delta[c] / getattr(budget, c) for c in CATEGORIES}
    flags = [OverBudget(c) for c in CATEGORIES if getattr(after, c) > getattr(budget, c)]
    return DiffReport(before, after, budget, delta, pct, flags)


def scaling_headroom(graph: Graph, budget: Budget | None = None, costs: CostTable | None = None) -> int:
    """Largest number of replicable units (maps tagged with ``unit``) that fits.

    The model is linear: total(n) = fixed + n * per_unit, where per_unit is the
    mean cost of one tagged unit and fixed is everything else.
    """
    budget = budget or Budget()
    costs = costs or CostTable()
    total = estimate(graph, costs)
    if not total <= budget:
        return 0
    units: dict[int, ResourceVector] = {}
    for nid in graph.top_level():
        node = graph.nodes[nid]
        if isinstance(node, MapScope) and node.unit is not None:
            units[node.unit] = units.get(node.unit, ResourceVector()) + map_cost(graph, nid, costs)
    if not units:
        return 0
    n = len(units)
    unit_total = ResourceVector()
    for v in units.values():
        unit_total = unit_total + v
    fixed = total - unit_total
    best = None
    for c in CATEGORIES:
        per = getattr(unit_total, c)
        if per == 0:
            continue
        k = (getattr(budget, c) - getattr(fixed, c)) * n // per
        best = k if best is None else min(best, k)
    return max(best or 0, 0)
