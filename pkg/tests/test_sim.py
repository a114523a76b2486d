from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pumpkin.benchmarks import BenchmarkSpec, generate, make_inputs
from pumpkin.errors import BudgetExceeded, DeadlockError, TraceNotEnabled, ValidationError
from pumpkin.ir import Reader
from pumpkin.sim import (
    Channel,
    ClockConfig,
    IssuerState,
    Limits,
    PackerState,
    SynchronizerState,
    effective_clock,
    export_trace,
    reference_execute,
    simulate,
    step_issuer,
    step_packer,
    step_synchronizer,
)
from pumpkin.transforms import multipump_all, streamify_all


def variants(spec, modes=("widen", "narrow")):
    g = generate(spec)
    s = streamify_all(g)
    out = {"direct": g, "stream": s}
    for mode in modes:
        out[mode] = multipump_all(s, 2, mode)
    return out


def run(graph, spec, M=1, clk0=300, clk1=600, **kw):
    return simulate(graph, make_inputs(spec), ClockConfig(clk0, clk1, M), Limits(**kw))


# ---------------------------------------------------------------------------
# primitive units


def test_issuer_splits_lane_zero_first():
    inp, out = Channel("in", 2, 4), Channel("out", 8, 2)
    inp.push([1, 2, 3, 4])
    st_ = IssuerState("iss", inp, out, 2)
    for t in range(3):
        step_issuer(st_, t)
    assert list(out.queue) == [[1, 2], [3, 4]]
    assert st_.done()


def test_issuer_holds_word_when_output_full():
    inp, out = Channel("in", 2, 4), Channel("out", 1, 2)
    inp.push([1, 2, 3, 4])
    st_ = IssuerState("iss", inp, out, 2)
    for t in range(4):
        step_issuer(st_, t)
    assert list(out.queue) == [[1, 2]] and out.stall_full > 0
    out.pop()
    step_issuer(st_, 5)
    assert list(out.queue) == [[3, 4]]


def test_packer_concatenates_in_arrival_order():
    inp, out = Channel("in", 4, 2), Channel("out", 2, 4)
    inp.push([1, 2])
    inp.push([3, 4])
    pk = PackerState("pk", inp, out, 2)
    for t in range(3):
        step_packer(pk, t)
    assert list(out.queue) == [[1, 2, 3, 4]]


@pytest.mark.parametrize("t", [0, 1, 5])
def test_synchronizer_latency_in_destination_ticks(t):
    # slow period 2, fast period 1 on the shared time base (300 / 600 MHz)
    inp, out = Channel("in", 4, 1), Channel("out", 4, 1)
    sync = SynchronizerState("s", inp, out, depth=4, latency=2, src_period=2, dst_period=1)
    inp.push(["w"])
    step_synchronizer(sync, 2 * t, src_tick=True, dst_tick=True)
    arrival = None
    for now in range(2 * t + 1, 2 * t + 6):
        step_synchronizer(sync, now, src_tick=now % 2 == 0, dst_tick=True)
        if out.queue and arrival is None:
            arrival = now
    assert arrival == 2 * t + 2


def test_synchronizer_respects_depth():
    inp, out = Channel("in", 8, 1), Channel("out", 1, 1)
    sync = SynchronizerState("s", inp, out, depth=2, latency=1, src_period=1, dst_period=1)
    for i in range(5):
        inp.push([i])
    for now in range(10):
        step_synchronizer(sync, now)
        assert len(sync.fifo) <= 2
    assert list(out.queue) == [[0]]


def test_effective_clock_examples():
    assert effective_clock(300, 600, 2) == 300
    assert effective_clock(300, 500, 2) == 250
    assert effective_clock("527.9", "674.7", 2) == Fraction(6747, 20)
    assert effective_clock(300, 300, 1) == 300
    with pytest.raises(ValueError):
        effective_clock(300, 600, 0)


def test_clock_config_rejects_fast_slower_than_slow():
    with pytest.raises(ValidationError):
        ClockConfig(600, 300, 2)


# ---------------------------------------------------------------------------
# whole-graph simulation, frozen cycle counts


VECADD = BenchmarkSpec("vecadd", N=64, V=2)


def test_vecadd_cycle_counts():
    g = variants(VECADD)
    assert run(g["direct"], VECADD).slow_cycles == 33
    assert run(g["stream"], VECADD).slow_cycles == 35
    w = run(g["widen"], VECADD, M=2)
    assert w.slow_cycles == 25 and w.elements_out_per_slow_cycle == 4
    n = run(g["narrow"], VECADD, M=2)
    assert n.slow_cycles == 41 and n.elements_out_per_slow_cycle == 2


def test_outputs_match_reference_for_every_variant():
    specs = [VECADD, BenchmarkSpec("floyd_warshall", N=6), BenchmarkSpec("gemm_systolic", N=8, pes=2, V=2),
             BenchmarkSpec("jacobi3d", shape=(5, 4, 4), stages=2, V=2),
             BenchmarkSpec("diffusion3d", shape=(4, 4, 4), stages=2, V=2)]
    for spec in specs:
        modes = ("widen",) if spec.kind == "floyd_warshall" else ("narrow",)
        ref = reference_execute(generate(spec), make_inputs(spec))
        for name, g in variants(spec, modes).items():
            rep = run(g, spec, M=2 if name in ("widen", "narrow") else 1)
            for k, v in ref.items():
                np.testing.assert_array_equal(rep.outputs[k], v, err_msg=f"{spec.kind}/{name}/{k}")


def test_floyd_warshall_cycle_counts_and_path():
    spec = BenchmarkSpec("floyd_warshall", N=8)
    g = variants(spec, ("widen",))
    assert run(g["direct"], spec).slow_cycles == 513
    assert run(g["stream"], spec).slow_cycles == 515
    assert run(g["widen"], spec, M=2).slow_cycles == 265


def test_floyd_warshall_four_node_chain():
    INF = 2 ** 40
    adj = np.full((4, 4), INF, dtype=np.int64)
    np.fill_diagonal(adj, 0)
    adj[0, 1] = adj[1, 2] = adj[2, 3] = 1
    g = multipump_all(streamify_all(generate(BenchmarkSpec("floyd_warshall", N=4))), 2, "widen")
    dist = simulate(g, {"adj": adj}, ClockConfig(300, 600, 2)).outputs["dist"]
    assert dist[0, 3] == 3 and dist[3, 0] == INF and dist[1, 3] == 2


def test_gemm_cycle_counts_and_identity():
    spec = BenchmarkSpec("gemm_systolic", N=8, pes=2, V=2)
    g = variants(spec)
    assert [run(g[k], spec, M=1 if k in ("direct", "stream") else 2).slow_cycles
            for k in ("direct", "stream", "widen", "narrow")] == [132, 41, 28, 44]
    A = np.random.default_rng(1).standard_normal((8, 8)).astype(np.float32)
    out = simulate(g["narrow"], {"A": A, "BT": np.eye(8, dtype=np.float32)}, ClockConfig(300, 600, 2))
    np.testing.assert_array_equal(out.outputs["C"], A)


def test_stencil_cycle_counts():
    spec = BenchmarkSpec("jacobi3d", shape=(5, 4, 4), stages=2, V=2)
    g = variants(spec, ("narrow",))
    assert run(g["direct"], spec).slow_cycles == 98
    assert run(g["stream"], spec).slow_cycles == 61
    assert run(g["narrow"], spec, M=2).slow_cycles == 73


# ---------------------------------------------------------------------------
# invariants


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([2, 4, 8]), st.sampled_from(["widen", "narrow"]), st.sampled_from([1, 2, 4, 16]),
       st.integers(0, 1000))
def test_conservation_and_drain(V, mode, depth, seed):
    spec = BenchmarkSpec("vecadd", N=32, V=V)
    s = streamify_all(generate(spec))
    p = multipump_all(s, 2, mode, fifo_depth=depth)
    rep = simulate(p, make_inputs(spec, seed), ClockConfig(300, 600, 2))
    for stats in rep.channels.values():
        assert stats["pushes"] == stats["pops"]
        assert stats["final_occupancy"] == 0
        assert stats["max_occupancy"] <= stats["depth"]
    np.testing.assert_array_equal(rep.outputs["z"], reference_execute(generate(spec), make_inputs(spec, seed))["z"])


def test_simulation_is_deterministic(tmp_path):
    g = variants(VECADD)["widen"]
    a = run(g, VECADD, M=2, trace=True)
    b = run(g, VECADD, M=2, trace=True)
    assert a.to_json() == b.to_json()
    export_trace(a, tmp_path / "a.csv")
    export_trace(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_trace_requires_opt_in(tmp_path):
    rep = run(variants(VECADD)["stream"], VECADD)
    assert rep.trace is None
    with pytest.raises(TraceNotEnabled):
        export_trace(rep, tmp_path / "t.csv")


def test_empty_trace_has_header_only(tmp_path):
    rep = run(variants(VECADD)["stream"], VECADD, trace=True)
    rep.trace = []
    export_trace(rep, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == "tick,domain,node,port,event,payload_hash\n"


def test_trace_shows_issuer_lane_order(tmp_path):
    rep = run(variants(VECADD)["narrow"], VECADD, M=2, trace=True)
    pushes = [r for r in rep.trace if r[2].startswith("issue") and r[4] == "push"]
    assert pushes, "issuer pushes are traced"
    export_trace(rep, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "tick,domain,node,port,event,payload_hash" and len(lines) == len(rep.trace) + 1
    x = make_inputs(VECADD)["x"]
    y = make_inputs(VECADD)["y"]
    assert rep.outputs["z"][0] == x[0] + y[0]


def test_tick_budget():
    with pytest.raises(BudgetExceeded):
        run(variants(VECADD)["stream"], VECADD, max_ticks=5)


def test_starved_reader_deadlocks():
    g = variants(VECADD)["stream"]
    r = g.of_type(Reader)[0]
    g.nodes[r].params = (g.nodes[r].params[0].__class__.parse("i", "0:1"),)
    with pytest.raises(DeadlockError):
        run(g, VECADD, watchdog=50)


def test_report_serializes_fractions():
    rep = run(variants(VECADD)["widen"], VECADD, M=2, clk0="527.9", clk1="674.7")
    d = rep.to_dict()
    assert d["clk0_mhz"] == "5279/10"
    assert d["effective_clock_mhz"] == "6747/20"
