import pytest

from pumpkin import ir
from pumpkin.benchmarks import BenchmarkSpec, add_map, generate
from pumpkin.errors import MultipumpError, StreamifyError, VectorizeError
from pumpkin.ir import (
    Container,
    Graph,
    Issuer,
    MapScope,
    Packer,
    Reader,
    StreamNode,
    Synchronizer,
    Writer,
    build_node,
    extract_subgraph,
    validate,
)
from pumpkin.transforms import (
    Mode,
    MultipumpConfig,
    check_temporal_vectorizable,
    find_multipump_candidate,
    find_streamable_subgraph,
    multipump,
    multipump_all,
    streamify,
    streamify_all,
    vectorize,
)

COPY = [["out", "o", ["in", "a"]]]


def chain(write: str, read: str, n: int = 8) -> Graph:
    """x -> m0 -> t -> m1 -> y with the given memlets on t."""
    g = Graph(symbols={"N": n})
    for name, loc in (("x", "external"), ("t", "local"), ("y", "external")):
        build_node(g, Container(name, "f32", ("N",), loc))
    add_map(g, "m0", [("i", "0:N")], 1, {"a": "x[i]"}, {"o": write}, COPY)
    add_map(g, "m1", [("i", "0:N")], 1, {"a": read}, {"o": "y[i]"}, COPY)
    return g


def kinds(g, cls):
    return [n for n in g.nodes.values() if isinstance(n, cls)]


def vecadd(N=1024, V=2):
    return generate(BenchmarkSpec("vecadd", N=N, V=V))


# ---------------------------------------------------------------------------
# vectorize


def test_vectorize_divides_range_and_widens_memlets():
    g = vecadd(V=2)
    (m,) = kinds(g, MapScope)
    assert m.params[0].text() == "0:512:1" or m.params[0].text() == "0:N/2:1"
    assert m.vector_width == 2
    assert sorted(str(e.memlet) for e in g.edges) == ["x[2*i : 2*i + 2]", "y[2*i : 2*i + 2]", "z[2*i : 2*i + 2]"]


def test_vectorize_by_one_is_identity():
    g = vecadd(V=1)
    (mid,) = g.of_type(MapScope)
    assert ir.dumps(vectorize(g, mid, 1)) == ir.dumps(g)


def test_vectorize_rejects_strided_access():
    g = Graph(symbols={"N": 16})
    build_node(g, Container("x", "f32", ("2*N",)))
    build_node(g, Container("z", "f32", ("N",)))
    mid = add_map(g, "m", [("i", "0:N")], 1, {"a": "x[2*i]"}, {"o": "z[i]"}, COPY)
    with pytest.raises(VectorizeError) as exc:
        vectorize(g, mid, 2)
    assert exc.value.reason == "NonContiguous"


def test_vectorize_rejects_remainder():
    g = vecadd(N=10, V=1)
    (mid,) = g.of_type(MapScope)
    with pytest.raises(VectorizeError) as exc:
        vectorize(g, mid, 4)
    assert exc.value.reason == "Remainder"


def test_vectorize_rejects_loop_carried_floyd_warshall():
    g = generate(BenchmarkSpec("floyd_warshall", N=8))
    (mid,) = g.of_type(MapScope)
    with pytest.raises(VectorizeError) as exc:
        vectorize(g, mid, 2)
    assert exc.value.reason == "LoopCarried"


# ---------------------------------------------------------------------------
# streamable subgraph search and streamify


def test_vecadd_streamable_subgraph_is_the_map():
    g = vecadd()
    assert find_streamable_subgraph(g).nodes == frozenset(g.of_type(MapScope))


def test_in_order_chain_internalizes_container():
    g = chain("t[i]", "t[i]")
    view = find_streamable_subgraph(g)
    maps = set(g.of_type(MapScope))
    assert view.nodes == maps | {g.container_by_name("t")}


def test_reversal_leaves_singletons():
    g = chain("t[i]", "t[N - 1 - i]")
    view = find_streamable_subgraph(g)
    assert view.nodes == frozenset({min(g.of_type(MapScope))})


def test_streamify_vecadd_adds_readers_writer_streams():
    g = vecadd()
    s = streamify(g, find_streamable_subgraph(g))
    assert len(kinds(s, Reader)) == 2 and len(kinds(s, Writer)) == 1
    assert len(kinds(s, StreamNode)) == 3
    (mid,) = s.of_type(MapScope)
    assert all(e.kind == "stream" for e in s.edges if mid in (e.src, e.dst))
    assert validate(s) == []


def test_streamify_is_idempotent():
    once = streamify_all(vecadd())
    twice = streamify(once, find_streamable_subgraph(once))
    assert ir.dumps(twice) == ir.dumps(once)
    assert ir.dumps(streamify_all(once)) == ir.dumps(once)


def test_streamify_replaces_internal_container_by_stream():
    s = streamify_all(chain("t[i]", "t[i]"))
    assert [n.name for n in kinds(s, Container)] == ["x", "y"]
    assert "t" in [n.name for n in kinds(s, StreamNode)]


def test_streamify_rejects_data_dependent_read():
    g = Graph(symbols={"N": 4})
    build_node(g, Container("a", "f32", ("N",)))
    build_node(g, Container("z", "f32", ("N",)))
    add_map(g, "m", [("i", "0:N")], 1, {"a": "a[b[i]]"}, {"o": "z[i]"}, COPY)
    with pytest.raises(StreamifyError) as exc:
        streamify_all(g)
    assert exc.value.reason == "NonAffine"


# ---------------------------------------------------------------------------
# legality


def data_dependent_graph():
    g = Graph(symbols={"N": 4})
    build_node(g, Container("idx", "i64", ("N",)))
    build_node(g, Container("a", "f32", ("N",)))
    build_node(g, Container("z", "f32", ("N",)))
    code = [["out", "o", ["load", "a", [["in", "p"]]]]]
    add_map(g, "gather", [("i", "0:N")], 1, {"p": "idx[i]"}, {"o": "z[i]"}, code)
    return g


def test_floyd_warshall_is_temporally_vectorizable():
    g = streamify_all(generate(BenchmarkSpec("floyd_warshall", N=8)))
    rep = check_temporal_vectorizable(g, find_streamable_subgraph(g))
    assert rep.temporal_ok and rep.reasons == []


def test_vecadd_is_temporally_vectorizable():
    g = streamify_all(vecadd())
    assert check_temporal_vectorizable(g, find_streamable_subgraph(g)).temporal_ok


def test_data_dependent_io_is_rejected():
    g = streamify_all(data_dependent_graph())
    rep = check_temporal_vectorizable(g, find_streamable_subgraph(g))
    assert not rep.temporal_ok
    assert rep.reasons[0].startswith("DataDependentIO")
    assert not find_multipump_candidate(g)


def test_gemm_candidate_is_whole_chain_without_memory_endpoints():
    g = streamify_all(generate(BenchmarkSpec("gemm_systolic", N=16, pes=4, V=4)))
    cand = find_multipump_candidate(g)
    assert set(g.of_type(MapScope)) <= cand.nodes
    assert not any(isinstance(g.nodes[n], (Reader, Writer, Container)) for n in cand.nodes)
    names = sorted(g.nodes[n].name for n in cand.nodes if isinstance(g.nodes[n], MapScope))
    assert names == ["drain_c", "feed_b", "pe0", "pe1", "pe2", "pe3"]


def test_stencil_candidates_are_single_stages():
    g = streamify_all(generate(BenchmarkSpec("jacobi3d", shape=(5, 4, 4), stages=3, V=2)))
    cand = find_multipump_candidate(g)
    maps = [g.nodes[n] for n in cand.nodes if isinstance(g.nodes[n], MapScope)]
    assert [m.name for m in maps] == ["jacobi3d_0"]


# ---------------------------------------------------------------------------
# multipump


def pumped(mode, N=1024, V=2, M=2):
    s = streamify_all(vecadd(N, V))
    return s, multipump(s, MultipumpConfig(M, mode, find_multipump_candidate(s), 600, 300))


def test_widen_doubles_memory_width_keeps_compute():
    s, p = pumped(Mode.WIDEN)
    assert [r.lanes for r in kinds(p, Reader)] == [4, 4]
    assert [w.lanes for w in kinds(p, Writer)] == [4]
    (m,) = kinds(p, MapScope)
    assert m.vector_width == 2
    assert sorted(p.clock_domains) == [0, 1] and p.clock_domains[1].factor == 2
    assert [(i.wide, i.narrow) for i in kinds(p, Issuer)] == [(4, 2), (4, 2)]
    assert [(k.narrow, k.wide) for k in kinds(p, Packer)] == [(2, 4)]
    assert validate(p) == []


def test_narrow_halves_compute_lanes():
    s, p = pumped(Mode.NARROW)
    (m,) = kinds(p, MapScope)
    assert m.vector_width == 1
    assert m.params[0].text() == "0:1024:1"
    assert [r.lanes for r in kinds(p, Reader)] == [2, 2]
    assert [(i.wide, i.narrow) for i in kinds(p, Issuer)] == [(2, 1), (2, 1)]
    (mid,) = p.of_type(MapScope)
    assert sorted(str(e.memlet) for e in p.edges if mid in (e.src, e.dst)) == ["x[i]", "y[i]", "z[i]"]


def test_domain_assignment():
    s, p = pumped(Mode.WIDEN)
    (mid,) = p.of_type(MapScope)
    assert p.node_domain[mid] == 1
    for nid in p.of_type(Reader) + p.of_type(Writer):
        assert p.node_domain[nid] == 0


def test_plumbing_order():
    s, p = pumped(Mode.WIDEN)
    r = p.of_type(Reader)[0]
    chain_ = []
    node = r
    while not isinstance(p.nodes[node], MapScope):
        node = p.out_edges(node)[0].dst
        chain_.append(type(p.nodes[node]).__name__)
    assert [c for c in chain_ if c != "StreamNode"] == ["Synchronizer", "Issuer", "MapScope"]
    (w,) = p.of_type(Writer)
    back, node = [], w
    while not isinstance(p.nodes[node], MapScope):
        node = p.in_edges(node)[0].src
        back.append(type(p.nodes[node]).__name__)
    assert [c for c in reversed(back) if c != "StreamNode"] == ["MapScope", "Packer", "Synchronizer"]


def test_m_equal_one_is_identity():
    s = streamify_all(vecadd())
    same = multipump(s, MultipumpConfig(1, Mode.WIDEN, find_multipump_candidate(s)))
    assert ir.dumps(same) == ir.dumps(s)
    assert ir.dumps(multipump_all(s, 1, "narrow")) == ir.dumps(s)


def test_rejects_second_application_to_same_target():
    s, p = pumped(Mode.WIDEN)
    cand = find_multipump_candidate(s)
    with pytest.raises(MultipumpError) as exc:
        multipump(p, MultipumpConfig(2, Mode.WIDEN, cand, 600, 300))
    assert exc.value.reason == "AlreadyPumped"


def test_narrow_needs_divisible_lanes():
    s = streamify_all(vecadd(V=1))
    with pytest.raises(MultipumpError) as exc:
        multipump(s, MultipumpConfig(2, Mode.NARROW, find_multipump_candidate(s)))
    assert exc.value.reason == "LaneCount"


def test_target_must_be_streamified():
    g = vecadd()
    with pytest.raises(MultipumpError) as exc:
        multipump(g, MultipumpConfig(2, Mode.WIDEN, find_streamable_subgraph(g)))
    assert exc.value.reason == "NotStreamified"


def test_widen_requires_memory_endpoints():
    s = streamify_all(generate(BenchmarkSpec("jacobi3d", shape=(5, 4, 4), stages=2, V=2)))
    with pytest.raises(MultipumpError) as exc:
        multipump(s, MultipumpConfig(2, Mode.WIDEN, find_multipump_candidate(s)))
    assert exc.value.reason == "WidenNeedsMemoryEndpoint"


def test_widen_requires_divisible_transfer_count():
    s = streamify_all(vecadd(N=6, V=2))
    with pytest.raises(MultipumpError) as exc:
        multipump(s, MultipumpConfig(2, Mode.WIDEN, find_multipump_candidate(s)))
    assert exc.value.reason == "WidthUnavailable"


def test_repeated_application_reuses_fast_domain():
    s = streamify_all(generate(BenchmarkSpec("jacobi3d", shape=(5, 4, 4), stages=4, V=2)))
    p = multipump_all(s, 2, "narrow")
    assert sorted(p.clock_domains) == [0, 1]
    assert all(p.node_domain[m] == 1 for m in p.of_type(MapScope))
    assert validate(p) == []


def test_conflicting_fast_frequency_is_rejected():
    s = streamify_all(generate(BenchmarkSpec("jacobi3d", shape=(5, 4, 4), stages=2, V=2)))
    first = multipump(s, MultipumpConfig(2, Mode.NARROW, find_multipump_candidate(s), 600, 300))
    with pytest.raises(MultipumpError) as exc:
        multipump(first, MultipumpConfig(2, Mode.NARROW, find_multipump_candidate(first), 700, 300))
    assert exc.value.reason == "DomainConflict"


CASES = [
    (BenchmarkSpec("vecadd", N=64, V=4), "widen"),
    (BenchmarkSpec("vecadd", N=64, V=4), "narrow"),
    (BenchmarkSpec("floyd_warshall", N=6), "widen"),
    (BenchmarkSpec("gemm_systolic", N=8, pes=2, V=2), "widen"),
    (BenchmarkSpec("gemm_systolic", N=8, pes=2, V=2), "narrow"),
    (BenchmarkSpec("jacobi3d", shape=(5, 4, 4), stages=3, V=2), "narrow"),
]


@pytest.mark.parametrize("spec,mode", CASES, ids=lambda c: getattr(c, "kind", c))
def test_plumbing_count_matches_boundary_streams(spec, mode):
    s = streamify_all(generate(spec))
    p = multipump_all(s, 2, mode)
    fast = {n for n in p.nodes if p.node_domain[n] == 1}
    syncs = p.of_type(Synchronizer)
    inbound = [n for n in syncs if p.nodes[n].dst_domain == 1]
    outbound = [n for n in syncs if p.nodes[n].src_domain == 1]
    assert len(inbound) + len(outbound) == len(syncs)
    crossing = [e for e in p.edges if (e.src in fast) != (e.dst in fast)
                and not isinstance(p.nodes[e.src], Synchronizer) and not isinstance(p.nodes[e.dst], Synchronizer)]
    assert crossing == []
    assert len(p.of_type(Packer)) <= len(outbound)
    if mode == "widen":
        assert len(p.of_type(Issuer)) == len(inbound)
        assert len(p.of_type(Packer)) == len(outbound)


def test_vectorize_then_narrow_lane_count():
    for V in (2, 4, 8):
        s = streamify_all(vecadd(64, V))
        (m,) = kinds(multipump_all(s, 2, "narrow"), MapScope)
        assert m.vector_width == V // 2
        (w,) = kinds(multipump_all(s, 2, "widen"), MapScope)
        assert w.vector_width == V


def test_extracting_candidate_view_is_pure():
    s = streamify_all(vecadd())
    before = ir.dumps(s)
    view = find_multipump_candidate(s)
    extract_subgraph(s, view.nodes)
    multipump(s, MultipumpConfig(2, Mode.NARROW, view))
    assert ir.dumps(s) == before
