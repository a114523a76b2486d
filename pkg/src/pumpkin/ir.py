"""Dataflow graph IR: node types, graph container, validation and JSON files."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Iterable, Union

from .errors import EmptySelection, NotFound, UnboundSymbol, ValidationError
from .symbolic import Memlet, Range, eval_affine, parse_affine, parse_memlet

FORMAT_VERSION = 1
DTYPES = ("f32", "i32", "i64", "bool")
DTYPE_BITS = {"f32": 32, "i32": 32, "i64": 64, "bool": 1}
DEFAULT_FIFO_DEPTH = 16


@dataclass
class Container:
    name: str
    dtype: str
    shape: tuple
    location: str = "external"


@dataclass
class StreamNode:
    name: str
    lanes: int
    depth: int = DEFAULT_FIFO_DEPTH
    dtype: str = "f32"


@dataclass
class MapScope:
    """Parametric scope. ``body`` lists the tasklet and any scope-local containers.

    The last parameter is the vectorized one; tasklets see it at element
    granularity (``param * vector_width + lane``).
    """

    name: str
    params: tuple
    vector_width: int = 1
    body: list = field(default_factory=list)
    kernel: int = 0
    unit: int | None = None
    latency: int = 1

    @property
    def vec_param(self) -> str:
        return self.params[-1].param


@dataclass
class Tasklet:
    """Straight-line code over connectors; see :mod:`pumpkin.tasklet`."""

    name: str
    inputs: list
    outputs: list
    code: list


@dataclass
class Reader:
    name: str
    container: int
    params: tuple
    lanes: int


@dataclass
class Writer:
    name: str
    container: int
    params: tuple
    lanes: int


@dataclass
class Synchronizer:
    name: str
    src_domain: int
    dst_domain: int
    lanes: int
    depth: int = DEFAULT_FIFO_DEPTH
    latency: int = 2


@dataclass
class Issuer:
    name: str
    wide: int
    narrow: int
    factor: int


@dataclass
class Packer:
    name: str
    narrow: int
    wide: int
    factor: int


Node = Union[Container, StreamNode, MapScope, Tasklet, Reader, Writer, Synchronizer, Issuer, Packer]
NODE_TYPES = {cls.__name__: cls for cls in (Container, StreamNode, MapScope, Tasklet, Reader, Writer,
                                             Synchronizer, Issuer, Packer)}
PLUMBING = (Synchronizer, Issuer, Packer)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    src_conn: str | None = None
    dst_conn: str | None = None
    memlet: Memlet | None = None
    kind: str = "memlet"

    def __str__(self) -> str:
        s = f"{self.src}" + (f".{self.src_conn}" if self.src_conn else "")
        d = f"{self.dst}" + (f".{self.dst_conn}" if self.dst_conn else "")
        label = f" [{self.memlet}]" if self.memlet is not None else ""
        return f"{s}->{d}{label}"


@dataclass
class ClockDomain:
    id: int
    frequency_mhz: Fraction
    factor: int = 1


@dataclass
class Graph:
    nodes: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)
    symbols: dict = field(default_factory=dict)
    clock_domains: dict = field(default_factory=lambda: {0: ClockDomain(0, Fraction(300))})
    node_domain: dict = field(default_factory=dict)

    # ---- construction -------------------------------------------------
    @property
    def default_domain(self) -> int:
        return min(self.clock_domains)

    def fresh_id(self) -> int:
        return max(self.nodes, default=-1) + 1

    def add_node(self, node, domain: int | None = None) -> int:
        nid = self.fresh_id()
        self.nodes[nid] = node
        self.node_domain[nid] = self.default_domain if domain is None else domain
        return nid

    def add_edge(self, src, dst, src_conn=None, dst_conn=None, memlet=None, kind="memlet") -> Edge:
        if isinstance(memlet, str):
            memlet = parse_memlet(memlet)
        e = Edge(src, dst, src_conn, dst_conn, memlet, kind)
        self.edges.append(e)
        return e

    def remove_edge(self, edge: Edge) -> None:
        self.edges.remove(edge)

    def remove_node(self, nid: int) -> None:
        del self.nodes[nid]
        self.node_domain.pop(nid, None)
        self.edges = [e for e in self.edges if e.src != nid and e.dst != nid]

    def copy(self) -> "Graph":
        return copy.deepcopy(self)

    # ---- queries ------------------------------------------------------
    def in_edges(self, nid: int) -> list[Edge]:
        return [e for e in self.edges if e.dst == nid]

    def out_edges(self, nid: int) -> list[Edge]:
        return [e for e in self.edges if e.src == nid]

    def of_type(self, cls) -> list[int]:
        return sorted(n for n, v in self.nodes.items() if isinstance(v, cls))

    def body_nodes(self) -> set[int]:
        return {b for n in self.nodes.values() if isinstance(n, MapScope) for b in n.body}

    def top_level(self) -> list[int]:
        inner = self.body_nodes()
        return sorted(n for n in self.nodes if n not in inner)

    def tasklet_of(self, map_id: int) -> Tasklet:
        for b in self.nodes[map_id].body:
            if isinstance(self.nodes[b], Tasklet):
                return self.nodes[b]
        raise NotFound(f"map {map_id} has no tasklet")

    def locals_of(self, map_id: int) -> list[int]:
        return [b for b in self.nodes[map_id].body if isinstance(self.nodes[b], Container)]

    def container_by_name(self, name: str) -> int:
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if isinstance(node, Container) and node.name == name and nid not in self.body_nodes():
                return nid
        raise NotFound(f"container {name!r}")

    def shape_of(self, container: Container) -> tuple[int, ...]:
        return tuple(eval_affine(parse_affine(s), self.symbols) for s in container.shape)

    def topological_order(self) -> list[int]:
        """Top-level nodes in dependency order (ties by id); raises on cycles."""
        top = self.top_level()
        indeg = {n: 0 for n in top}
        succ: dict[int, list[int]] = {n: [] for n in top}
        for e in self.edges:
            if e.src in indeg and e.dst in indeg:
                indeg[e.dst] += 1
                succ[e.src].append(e.dst)
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for m in succ[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    ready.append(m)
            ready.sort()
        if len(order) != len(top):
            raise ValidationError("cycle between top-level nodes", "edges")
        return order

    def domain_count(self) -> int:
        return len(set(self.node_domain.values()) | set(self.clock_domains))


# ---------------------------------------------------------------------------
# build_node


def _check_node(graph: Graph, node, path: str) -> None:
    if isinstance(node, Container):
        if node.dtype not in DTYPES:
            raise ValidationError(f"unknown element type {node.dtype!r}", f"{path}.dtype")
        if node.location not in ("external", "local"):
            raise ValidationError(f"bad location {node.location!r}", f"{path}.location")
        for i, s in enumerate(node.shape):
            expr = parse_affine(s)
            for sym in expr.symbols:
                if sym not in graph.symbols:
                    raise UnboundSymbol(sym)
    elif isinstance(node, StreamNode):
        if node.lanes < 1:
            raise ValidationError("lanes must be >= 1", f"{path}.lanes")
        if node.depth < 1:
            raise ValidationError("depth must be >= 1", f"{path}.depth")
    elif isinstance(node, MapScope):
        if not node.params:
            raise ValidationError("map needs at least one parameter", f"{path}.params")
        if node.vector_width < 1:
            raise ValidationError("vector width must be >= 1", f"{path}.vector_width")
        names = {r.param for r in node.params}
        for i, r in enumerate(node.params):
            for sym in (r.begin.symbols | r.end.symbols):
                if sym not in graph.symbols and sym not in names:
                    raise UnboundSymbol(sym)
        for b in node.body:
            if b not in graph.nodes:
                raise ValidationError(f"unknown body node {b}", f"{path}.body")
    elif isinstance(node, (Issuer, Packer)):
        wide, narrow = node.wide, node.narrow
        if min(wide, narrow, node.factor) < 1:
            raise ValidationError("widths must be positive", path)
    elif isinstance(node, Tasklet):
        if not isinstance(node.code, list):
            raise ValidationError("code must be a statement list", f"{path}.code")
    elif not isinstance(node, (Reader, Writer, Synchronizer)):
        raise ValidationError(f"unknown node kind {type(node).__name__}", path)


def build_node(graph: Graph, spec, domain: int | None = None) -> int:
    """Insert a node (instance or dict form) after checking it; returns the new id."""
    node = node_from_dict(spec) if isinstance(spec, dict) else spec
    _check_node(graph, node, f"node[{graph.fresh_id()}]")
    return graph.add_node(node, domain)


# ---------------------------------------------------------------------------
# validate


@dataclass(frozen=True)
class Violation:
    rule: str
    where: str
    detail: str = ""


def validate(graph: Graph) -> list[Violation]:
    out: list[Violation] = []
    ids = set(graph.nodes)
    for i, e in enumerate(graph.edges):
        if e.src not in ids or e.dst not in ids:
            out.append(Violation("DanglingEdge", f"edge[{i}]", str(e)))
            continue
        if e.kind == "memlet":
            ends = (graph.nodes[e.src], graph.nodes[e.dst])
            if not any(isinstance(n, Container) for n in ends):
                out.append(Violation("MemletWithoutContainer", f"edge[{i}]", str(e)))
        elif e.kind == "stream":
            ends = (graph.nodes[e.src], graph.nodes[e.dst])
            if any(isinstance(n, Container) for n in ends):
                out.append(Violation("StreamTouchesContainer", f"edge[{i}]", str(e)))
        else:
            out.append(Violation("UnknownEdgeKind", f"edge[{i}]", e.kind))
    for nid, node in sorted(graph.nodes.items()):
        where = f"node[{nid}]"
        if nid not in graph.node_domain:
            out.append(Violation("UnassignedDomain", where))
        elif graph.node_domain[nid] not in graph.clock_domains:
            out.append(Violation("UnknownDomain", where, str(graph.node_domain[nid])))
        try:
            _check_node(graph, node, where)
        except UnboundSymbol as exc:
            out.append(Violation("UnboundSymbol", where, exc.name))
        except ValidationError as exc:
            out.append(Violation("MalformedNode", where, str(exc)))
        if isinstance(node, Issuer) and node.wide != node.factor * node.narrow:
            out.append(Violation("IssuerWidthMismatch", where, f"{node.wide} != {node.factor}*{node.narrow}"))
        if isinstance(node, Packer) and node.wide != node.factor * node.narrow:
            out.append(Violation("PackerWidthMismatch", where, f"{node.wide} != {node.factor}*{node.narrow}"))
        if isinstance(node, StreamNode) and nid in ids:
            ins = [e for e in graph.edges if e.dst == nid]
            outs = [e for e in graph.edges if e.src == nid]
            if len(ins) > 1 or len(outs) > 1:
                out.append(Violation("StreamFanout", where, f"{len(ins)} producers, {len(outs)} consumers"))
    try:
        graph.topological_order()
    except ValidationError:
        out.append(Violation("Cycle", "edges"))
    if len(graph.clock_domains) > 2:
        out.append(Violation("TooManyDomains", "clock_domains", str(len(graph.clock_domains))))
    freqs = [d.frequency_mhz for _, d in sorted(graph.clock_domains.items())]
    if any(f <= 0 for f in freqs):
        out.append(Violation("NonPositiveFrequency", "clock_domains"))
    if len(freqs) == 2 and freqs[1] < freqs[0]:
        out.append(Violation("FastSlowerThanSlow", "clock_domains"))
    return out


# ---------------------------------------------------------------------------
# subgraph views


@dataclass(frozen=True)
class SubgraphView:
    nodes: frozenset
    internal: tuple = ()
    boundary: tuple = ()

    def __bool__(self) -> bool:
        return bool(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)


def extract_subgraph(graph: Graph, node_ids: Iterable[int]) -> SubgraphView:
    sel = frozenset(node_ids)
    if not sel:
        raise EmptySelection("empty node selection")
    missing = sel - set(graph.nodes)
    if missing:
        raise NotFound(f"unknown node ids {sorted(missing)}")
    internal = tuple(e for e in graph.edges if e.src in sel and e.dst in sel)
    boundary = tuple(e for e in graph.edges if (e.src in sel) != (e.dst in sel))
    return SubgraphView(sel, internal, boundary)


# ---------------------------------------------------------------------------
# serialization


def _frac(f: Fraction) -> str:
    f = Fraction(f)
    return f"{f.numerator}/{f.denominator}"


def _parse_frac(s) -> Fraction:
    return Fraction(s)


def _shape_item(s):
    expr = parse_affine(s)
    return expr.constant if expr.is_const() else str(expr)


def node_to_dict(node) -> dict:
    d: dict = {"type": type(node).__name__}
    for f in fields(node):
        v = getattr(node, f.name)
        if f.name == "params":
            v = [{"param": r.param, "range": r.text()} for r in v]
        elif f.name == "shape":
            v = [_shape_item(s) for s in v]
        elif isinstance(v, tuple):
            v = list(v)
        d[f.name] = v
    return d


def node_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind not in NODE_TYPES:
        raise ValidationError(f"unknown node type {kind!r}", "type")
    cls = NODE_TYPES[kind]
    if "params" in d:
        d["params"] = tuple(Range.parse(p["param"], p["range"]) for p in d["params"])
    if "shape" in d:
        d["shape"] = tuple(str(s) if not isinstance(s, int) else s for s in d["shape"])
    try:
        return cls(**d)
    except TypeError as exc:
        raise ValidationError(str(exc), kind) from exc


def graph_to_dict(graph: Graph) -> dict:
    return {
        "version": FORMAT_VERSION,
        "symbols": dict(graph.symbols),
        "nodes": {str(k): node_to_dict(v) for k, v in graph.nodes.items()},
        "edges": [
            {
                "src": e.src,
                "dst": e.dst,
                "src_conn": e.src_conn,
                "dst_conn": e.dst_conn,
                "memlet": None if e.memlet is None else str(e.memlet),
                "kind": e.kind,
            }
            for e in graph.edges
        ],
        "clock_domains": {
            str(k): {"frequency_mhz": _frac(v.frequency_mhz), "factor": v.factor}
            for k, v in graph.clock_domains.items()
        },
        "node_domain": {str(k): v for k, v in graph.node_domain.items()},
    }


def graph_from_dict(d: dict) -> Graph:
    if d.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported version {d.get('version')!r}", "version")
    g = Graph(
        nodes={int(k): node_from_dict(v) for k, v in d["nodes"].items()},
        edges=[],
        symbols={k: int(v) for k, v in d["symbols"].items()},
        clock_domains={
            int(k): ClockDomain(int(k), _parse_frac(v["frequency_mhz"]), int(v.get("factor", 1)))
            for k, v in d["clock_domains"].items()
        },
        node_domain={int(k): int(v) for k, v in d["node_domain"].items()},
    )
    for e in d["edges"]:
        g.add_edge(e["src"], e["dst"], e.get("src_conn"), e.get("dst_conn"), e.get("memlet"), e.get("kind", "memlet"))
    return g


def dumps(graph: Graph) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(graph_to_dict(graph), sort_keys=True, indent=2) + "\n"


def loads(text: str) -> Graph:
    return graph_from_dict(json.loads(text))


def save(graph: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(graph))


def load(path) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
