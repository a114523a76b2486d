"""Graph-rewriting passes.

All passes are pure: they copy the input graph and return the rewritten copy.
Nodes a pass does not touch keep their ids; new nodes get ids above the
current maximum.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import MultipumpError, StreamifyError, VectorizeError
from .ir import (
    ClockDomain,
    Container,
    Edge,
    Graph,
    Issuer,
    MapScope,
    Packer,
    Reader,
    StreamNode,
    SubgraphView,
    Synchronizer,
    Writer,
    extract_subgraph,
)
from .symbolic import AffineExpr, Dim, Memlet, Range, Verdict, eval_affine, iterate, sequences_compatible
from .tasklet import is_lane_split, loads_and_stores


class Mode(str, enum.Enum):
    WIDEN = "widen"
    NARROW = "narrow"


@dataclass
class MultipumpConfig:
    M: int
    mode: Mode
    target: SubgraphView
    fast_frequency_mhz: Fraction = Fraction(600)
    slow_frequency_mhz: Fraction = Fraction(300)
    fifo_depth: int = 16
    sync_latency: int = 2

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.fast_frequency_mhz = Fraction(self.fast_frequency_mhz)
        self.slow_frequency_mhz = Fraction(self.slow_frequency_mhz)


@dataclass
class LegalityReport:
    streamable_pairs: list = field(default_factory=list)
    temporal_ok: bool = True
    reasons: list = field(default_factory=list)
    largest_candidate: SubgraphView = SubgraphView(frozenset())

    def describe(self) -> str:
        lines = [f"temporal_ok={self.temporal_ok}"]
        lines += [f"reason: {r}" for r in self.reasons]
        lines += [f"pair {e}: {'streamable' if v else v.reason}" for e, v in self.streamable_pairs]
        lines.append(f"largest_candidate={sorted(self.largest_candidate.nodes)}")
        return "\n".join(lines)


def _maps(graph: Graph, ids) -> list[int]:
    return sorted(n for n in ids if isinstance(graph.nodes.get(n), MapScope))


def _replace_edge(graph: Graph, old: Edge, **changes) -> Edge:
    fields_ = dict(src=old.src, dst=old.dst, src_conn=old.src_conn, dst_conn=old.dst_conn,
                   memlet=old.memlet, kind=old.kind)
    fields_.update(changes)
    new = Edge(**fields_)
    graph.edges[graph.edges.index(old)] = new
    return new


# ---------------------------------------------------------------------------
# vectorize


def _divide_end(graph: Graph, r: Range, V: int) -> AffineExpr:
    if r.end.constant % V == 0 and all(c % V == 0 for _, c in r.end.coeffs):
        return AffineExpr.make({k: c // V for k, c in r.end.coeffs}, r.end.constant // V)
    return AffineExpr.const(eval_affine(r.end, graph.symbols) // V)


def vectorize(graph: Graph, map_id: int, V: int) -> Graph:
    """Spatially vectorize the innermost parameter of a map by ``V`` lanes."""
    g = graph.copy()
    if V == 1:
        return g
    node = g.nodes[map_id]
    if not isinstance(node, MapScope):
        raise VectorizeError("NotAMap", str(map_id))
    if node.vector_width != 1:
        raise VectorizeError("AlreadyVectorized", node.name)
    loads, stores = loads_and_stores(g.tasklet_of(map_id).code)
    local_names = {g.nodes[b].name for b in g.locals_of(map_id)}
    written = {s[0] for s in stores if s[0] in local_names}
    carried = sorted(written & {l[0] for l in loads})
    if carried:
        raise VectorizeError("LoopCarried", f"scope-local storage {carried} is read back across iterations")
    r = node.params[-1]
    p = r.param
    if r.stride != 1 or r.begin != AffineExpr.const(0):
        raise VectorizeError("NonContiguous", f"range of {p} must start at 0 with stride 1")
    outer_zero = {q.param: 0 for q in node.params[:-1]}
    n = len(r.values({**g.symbols, **outer_zero}))
    if n % V:
        raise VectorizeError("Remainder", f"{n} iterations not divisible by {V}")
    edges = [e for e in g.edges if e.dst == map_id or e.src == map_id]
    for e in edges:
        if e.kind != "memlet":
            raise VectorizeError("AlreadyStreamed", str(e))
        m = e.memlet
        if m is None or not m.affine:
            raise VectorizeError("NonAffine", str(e))
        if any(p in gd.expr.symbols for gd in m.guard):
            raise VectorizeError("GuardOnVectorParam", str(m))
        hits = [i for i, d in enumerate(m.subset) if p in d.begin.symbols or p in d.end.symbols]
        if not hits:
            continue
        if len(hits) > 1:
            raise VectorizeError("NonContiguous", str(m))
        d = m.subset[hits[0]]
        if not d.is_index() or d.begin.coeff(p) != 1:
            raise VectorizeError("NonContiguous", str(m))
        begin = d.begin.substitute({p: AffineExpr.sym(p) * V})
        subset = list(m.subset)
        subset[hits[0]] = Dim(begin, begin + V, 1)
        _replace_edge(g, e, memlet=m.with_subset(subset))
    node.params = tuple(node.params[:-1]) + (Range(p, r.begin, _divide_end(g, r, V), 1),)
    node.vector_width = V
    return g


# ---------------------------------------------------------------------------
# streamable subgraph search


def _links(graph: Graph, maps: set[int]):
    """Yield (producer map, consumer map, link node, verdict) for map-to-map links."""
    symbols = graph.symbols
    for nid in sorted(graph.top_level()):
        node = graph.nodes[nid]
        if not isinstance(node, (Container, StreamNode)):
            continue
        ins, outs = graph.in_edges(nid), graph.out_edges(nid)
        if len(ins) != 1 or len(outs) != 1:
            continue
        pe, ce = ins[0], outs[0]
        if pe.src not in maps or ce.dst not in maps or pe.src == ce.dst:
            continue
        if isinstance(node, StreamNode):
            yield pe.src, ce.dst, nid, Verdict(True)
            continue
        if node.location != "local":
            continue
        verdict = sequences_compatible(pe.memlet, ce.memlet, graph.nodes[pe.src].params, symbols,
                                       consumer_ranges=graph.nodes[ce.dst].params)
        yield pe.src, ce.dst, nid, verdict


def streamable_components(graph: Graph, among=None) -> list[SubgraphView]:
    """All maximal streamable groups, largest first (ties: smallest min id)."""
    maps = set(_maps(graph, graph.top_level()))
    if among is not None:
        maps &= set(among)
    parent = {m: m for m in maps}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    link_nodes: dict[int, tuple[int, int]] = {}
    for a, b, link, verdict in _links(graph, maps):
        if verdict:
            parent[find(a)] = find(b)
            link_nodes[link] = (a, b)
    groups: dict[int, set[int]] = {}
    for m in maps:
        groups.setdefault(find(m), set()).add(m)
    for link, (a, _) in link_nodes.items():
        groups[find(a)].add(link)
    views = [extract_subgraph(graph, nodes) for nodes in groups.values()]
    views.sort(key=lambda v: (-len(v.nodes), min(v.nodes)))
    return views


def find_streamable_subgraph(graph: Graph, among=None) -> SubgraphView:
    comps = streamable_components(graph, among)
    return comps[0] if comps else SubgraphView(frozenset())


# ---------------------------------------------------------------------------
# streamify


def _is_streamified(graph: Graph, map_id: int) -> bool:
    return all(e.kind == "stream" for e in graph.edges if map_id in (e.src, e.dst))


def streamify(graph: Graph, subgraph: SubgraphView) -> Graph:
    """Replace random access at the subgraph boundary with Reader/Writer + streams."""
    g = graph.copy()
    maps = _maps(g, subgraph.nodes)
    internal = sorted(n for n in subgraph.nodes if isinstance(g.nodes.get(n), Container))
    symbols = g.symbols
    for c in internal:
        cont = g.nodes[c]
        (pe,), (ce,) = g.in_edges(c), g.out_edges(c)
        s = g.add_node(StreamNode(cont.name, pe.memlet.volume(symbols), dtype=cont.dtype), g.node_domain[pe.src])
        g.add_edge(pe.src, s, pe.src_conn, None, pe.memlet, "stream")
        g.add_edge(s, ce.dst, None, ce.dst_conn, ce.memlet, "stream")
        g.remove_node(c)
    for m in maps:
        mnode = g.nodes[m]
        dom = g.node_domain[m]
        for e in [e for e in g.edges if e.dst == m and e.kind == "memlet"]:
            if e.memlet is None or not e.memlet.affine:
                raise StreamifyError(e, "NonAffine")
            cont = g.nodes[e.src]
            vol = e.memlet.volume(symbols)
            r = g.add_node(Reader(f"read_{cont.name}_{e.dst_conn}", e.src, mnode.params, vol), dom)
            s = g.add_node(StreamNode(f"{cont.name}_{e.dst_conn}", vol, dtype=cont.dtype), dom)
            g.add_edge(e.src, r, None, None, e.memlet, "memlet")
            g.add_edge(r, s, kind="stream")
            g.add_edge(s, m, None, e.dst_conn, e.memlet, "stream")
            g.remove_edge(e)
        for e in [e for e in g.edges if e.src == m and e.kind == "memlet"]:
            if e.memlet is None or not e.memlet.affine:
                raise StreamifyError(e, "NonAffine")
            cont = g.nodes[e.dst]
            vol = e.memlet.volume(symbols)
            s = g.add_node(StreamNode(f"{cont.name}_{e.src_conn}", vol, dtype=cont.dtype), dom)
            w = g.add_node(Writer(f"write_{cont.name}_{e.src_conn}", e.dst, mnode.params, vol), dom)
            g.add_edge(m, s, e.src_conn, None, e.memlet, "stream")
            g.add_edge(s, w, kind="stream")
            g.add_edge(w, e.dst, None, None, e.memlet, "memlet")
            g.remove_edge(e)
    return g


def streamify_all(graph: Graph) -> Graph:
    """Streamify every streamable group until no map touches memory directly."""
    g = graph
    while True:
        pending = [m for m in _maps(g, g.top_level()) if not _is_streamified(g, m)]
        if not pending:
            return g if g is not graph else graph.copy()
        g = streamify(g, find_streamable_subgraph(g, among=pending))


# ---------------------------------------------------------------------------
# legality


def check_temporal_vectorizable(graph: Graph, subgraph: SubgraphView) -> LegalityReport:
    report = LegalityReport()
    maps = _maps(graph, subgraph.nodes)
    for m in maps:
        node = graph.nodes[m]
        local_names = {graph.nodes[b].name for b in graph.locals_of(m)}
        loads, stores = loads_and_stores(graph.tasklet_of(m).code)
        for buf, idx, computed in loads + stores:
            if buf not in local_names:
                if computed:
                    report.reasons.append(f"DataDependentIO: {node.name} addresses {buf}[{', '.join(idx)}]")
                else:
                    report.reasons.append(f"ExternalAccess: {node.name} accesses {buf} outside its memlets")
        for e in graph.edges:
            if m not in (e.src, e.dst) or (e.src in subgraph.nodes and e.dst in subgraph.nodes):
                continue
            if e.memlet is None or not e.memlet.affine:
                report.reasons.append(f"NonAffineBoundary: {e}")
                continue
            params = {r.param for r in node.params}
            if any(d.extent_expr().symbols & params for d in e.memlet.subset):
                report.reasons.append(f"VariableVolume: {e}")
    for a, b, link, verdict in _links(graph, set(maps)):
        report.streamable_pairs.append((link, verdict))
    report.temporal_ok = not report.reasons
    report.largest_candidate = find_streamable_subgraph(graph)
    return report


def find_multipump_candidate(graph: Graph) -> SubgraphView:
    """Largest streamable group inside one kernel that passes the legality check."""
    slow = graph.default_domain
    free = [m for m in _maps(graph, graph.top_level()) if graph.node_domain[m] == slow]
    for comp in streamable_components(graph, among=free):
        maps = _maps(graph, comp.nodes)
        kernels: dict[int, list[int]] = {}
        for m in maps:
            kernels.setdefault(graph.nodes[m].kernel, []).append(m)
        parts = []
        for members in kernels.values():
            links = [n for n in comp.nodes if n not in maps and
                     all(e.src in members or e.dst in members for e in graph.edges if n in (e.src, e.dst)) and
                     all((e.src in members) if e.dst == n else (e.dst in members)
                         for e in graph.edges if n in (e.src, e.dst))]
            parts.append(extract_subgraph(graph, set(members) | set(links)))
        parts.sort(key=lambda v: (-len(v.nodes), min(v.nodes)))
        for part in parts:
            if check_temporal_vectorizable(graph, part).temporal_ok:
                return part
    return SubgraphView(frozenset())


# ---------------------------------------------------------------------------
# multipump


def _narrow_memlet(m: Memlet, p: str, V: int, M: int) -> Memlet:
    subset = list(m.subset)
    for i, d in enumerate(subset):
        if p in d.begin.symbols:
            if d.begin.coeff(p) != V or d.extent_expr() != AffineExpr.const(V) or d.stride != 1:
                raise MultipumpError("NonContiguousLanes", str(m))
            begin = d.begin - AffineExpr.sym(p) * (V - V // M)
            subset[i] = Dim(begin, begin + V // M, 1)
    return m.with_subset(subset)


def _active_transfers(memlet: Memlet, ranges, symbols) -> int:
    return sum(1 for env in iterate(ranges, symbols) if memlet.active(env))


def multipump(graph: Graph, config: MultipumpConfig) -> Graph:
    """Move the target maps into a clock domain ``M`` times faster and insert
    synchronizer/issuer/packer plumbing on every stream crossing into or out of it."""
    M = config.M
    if M < 1:
        raise MultipumpError("BadFactor", str(M))
    g = graph.copy()
    if M == 1:
        return g
    targets = set(_maps(g, config.target.nodes))
    if not targets:
        raise MultipumpError("EmptyTarget")
    slow = g.default_domain
    for m in sorted(targets):
        if g.node_domain[m] != slow:
            raise MultipumpError("AlreadyPumped", g.nodes[m].name)
        if not _is_streamified(g, m):
            raise MultipumpError("NotStreamified", g.nodes[m].name)
    legality = check_temporal_vectorizable(g, config.target)
    if not legality.temporal_ok:
        raise MultipumpError("NotTemporallyVectorizable", "; ".join(legality.reasons))
    if config.mode is Mode.NARROW:
        for m in sorted(targets):
            V = g.nodes[m].vector_width
            if V < M or V % M:
                raise MultipumpError("LaneCount", f"{g.nodes[m].name}: V={V} not divisible by M={M}")

    fast_ids = [d for d in g.clock_domains if d != slow]
    if fast_ids:
        fast = fast_ids[0]
        dom = g.clock_domains[fast]
        if dom.frequency_mhz != config.fast_frequency_mhz or dom.factor != M:
            raise MultipumpError("DomainConflict", "a fast domain with different settings already exists")
        if g.clock_domains[slow].frequency_mhz != config.slow_frequency_mhz:
            raise MultipumpError("DomainConflict", "slow domain frequency differs")
    else:
        fast = max(g.clock_domains) + 1
        g.clock_domains[fast] = ClockDomain(fast, config.fast_frequency_mhz, M)
        g.clock_domains[slow].frequency_mhz = config.slow_frequency_mhz

    # stream nodes wholly inside the target move along with the maps
    inner_streams, inbound, outbound = [], [], []
    for s in g.of_type(StreamNode):
        ins, outs = g.in_edges(s), g.out_edges(s)
        if len(ins) != 1 or len(outs) != 1:
            continue
        src_in, dst_in = ins[0].src in targets, outs[0].dst in targets
        if src_in and dst_in:
            inner_streams.append(s)
        elif dst_in:
            inbound.append(s)
        elif src_in:
            outbound.append(s)

    orig_width = {m: g.nodes[m].vector_width for m in targets}
    lane_split = {}
    for s in inbound:
        ce = g.out_edges(s)[0]
        lane_split[s] = is_lane_split(ce.memlet, g.nodes[ce.dst].vec_param, orig_width[ce.dst])
    for s in outbound:
        pe = g.in_edges(s)[0]
        lane_split[s] = is_lane_split(pe.memlet, g.nodes[pe.src].vec_param, orig_width[pe.src])

    for m in sorted(targets):
        g.node_domain[m] = fast
        for b in g.nodes[m].body:
            g.node_domain[b] = fast
    for s in inner_streams:
        g.node_domain[s] = fast

    if config.mode is Mode.NARROW:
        for m in sorted(targets):
            node = g.nodes[m]
            V, p = node.vector_width, node.vec_param
            r = node.params[-1]
            if r.begin != AffineExpr.const(0) or r.stride != 1:
                raise MultipumpError("NonContiguousLanes", node.name)
            for e in [e for e in g.edges if m in (e.src, e.dst)]:
                _replace_edge(g, e, memlet=_narrow_memlet(e.memlet, p, V, M))
            node.params = tuple(node.params[:-1]) + (Range(p, r.begin, r.end * M, 1),)
            node.vector_width = V // M
        for s in inner_streams:
            pe = g.in_edges(s)[0]
            g.nodes[s].lanes = pe.memlet.volume(g.symbols)

    depth, lat = config.fifo_depth, config.sync_latency
    widen = config.mode is Mode.WIDEN

    for s in inbound:
        pe, ce = g.in_edges(s)[0], g.out_edges(s)[0]
        snode = g.nodes[s]
        word = ce.memlet.volume(g.symbols)
        if widen:
            producer = g.nodes[pe.src]
            if not isinstance(producer, Reader):
                raise MultipumpError("WidenNeedsMemoryEndpoint", f"stream {snode.name} is fed by {type(producer).__name__}")
            n = _active_transfers(ce.memlet, g.nodes[ce.dst].params, g.symbols)
            if n % M:
                raise MultipumpError("WidthUnavailable", f"{n} transfers on {snode.name} not divisible by {M}")
            producer.lanes = word * M
            snode.lanes = word * M
        width = snode.lanes
        sync = g.add_node(Synchronizer(f"sync_{snode.name}", slow, fast, width, depth, lat), fast)
        s2 = g.add_node(StreamNode(f"{snode.name}_fast", width, depth, snode.dtype), fast)
        g.remove_edge(ce)
        g.add_edge(s, sync, kind="stream")
        g.add_edge(sync, s2, kind="stream")
        if widen or lane_split[s]:
            narrow = width // M
            iss = g.add_node(Issuer(f"issue_{snode.name}", width, narrow, M), fast)
            s3 = g.add_node(StreamNode(f"{snode.name}_narrow", narrow, depth, snode.dtype), fast)
            g.add_edge(s2, iss, kind="stream")
            g.add_edge(iss, s3, kind="stream")
            g.add_edge(s3, ce.dst, None, ce.dst_conn, ce.memlet, "stream")
        else:
            g.add_edge(s2, ce.dst, None, ce.dst_conn, ce.memlet, "stream")

    for s in outbound:
        pe, ce = g.in_edges(s)[0], g.out_edges(s)[0]
        snode = g.nodes[s]
        word = pe.memlet.volume(g.symbols)
        if widen:
            consumer = g.nodes[ce.dst]
            if not isinstance(consumer, Writer):
                raise MultipumpError("WidenNeedsMemoryEndpoint", f"stream {snode.name} drains into {type(consumer).__name__}")
            n = _active_transfers(pe.memlet, g.nodes[pe.src].params, g.symbols)
            if n % M:
                raise MultipumpError("WidthUnavailable", f"{n} transfers on {snode.name} not divisible by {M}")
            consumer.lanes = word * M
            snode.lanes = word * M
        width = snode.lanes
        sync = g.add_node(Synchronizer(f"sync_{snode.name}", fast, slow, width, depth, lat), slow)
        s2 = g.add_node(StreamNode(f"{snode.name}_fast", width, depth, snode.dtype), fast)
        g.remove_edge(pe)
        if widen or lane_split[s]:
            narrow = width // M
            pk = g.add_node(Packer(f"pack_{snode.name}", narrow, width, M), fast)
            s3 = g.add_node(StreamNode(f"{snode.name}_narrow", narrow, depth, snode.dtype), fast)
            g.add_edge(pe.src, s3, pe.src_conn, None, pe.memlet, "stream")
            g.add_edge(s3, pk, kind="stream")
            g.add_edge(pk, s2, kind="stream")
        else:
            g.add_edge(pe.src, s2, pe.src_conn, None, pe.memlet, "stream")
        g.add_edge(s2, sync, kind="stream")
        g.add_edge(sync, s, kind="stream")
    return g


def multipump_all(graph: Graph, M: int, mode, fast_frequency_mhz=600, slow_frequency_mhz=300,
                  fifo_depth: int = 16) -> Graph:
    """Apply multipump repeatedly to disjoint candidates until none remain."""
    g = graph.copy()
    if M == 1:
        return g
    while True:
        cand = find_multipump_candidate(g)
        if not cand:
            return g
        cfg = MultipumpConfig(M, mode, cand, fast_frequency_mhz, slow_frequency_mhz, fifo_depth)
        g = multipump(g, cfg)
