import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pumpkin.benchmarks import BenchmarkSpec, add_map, generate
from pumpkin.errors import UnknownOpCost, ValidationError
from pumpkin.ir import Container, Graph, StreamNode, build_node
from pumpkin.resources import (
    CATEGORIES,
    Budget,
    CostTable,
    ResourceVector,
    compare,
    estimate,
    scaling_headroom,
)
from pumpkin.transforms import multipump_all, streamify_all

PUMPABLE = [
    BenchmarkSpec("vecadd", N=1024, V=4),
    BenchmarkSpec("gemm_systolic", N=16, pes=4, V=4),
    BenchmarkSpec("jacobi3d", shape=(8, 8, 8), stages=4, V=2),
    BenchmarkSpec("diffusion3d", shape=(8, 8, 8), stages=4, V=2),
]


def pair(spec, mode="narrow", M=2):
    s = streamify_all(generate(spec))
    return s, multipump_all(s, M, mode)


@pytest.mark.parametrize("spec", PUMPABLE, ids=lambda s: s.stencil if s.kind == "stencil_chain" else s.kind)
def test_narrow_divides_dsp_exactly(spec):
    s, p = pair(spec)
    assert estimate(p).dsp * 2 == estimate(s).dsp


@pytest.mark.parametrize("spec", PUMPABLE[:2] + [BenchmarkSpec("floyd_warshall", N=8)], ids=lambda s: s.kind)
def test_widen_keeps_dsp(spec):
    s, p = pair(spec, "widen")
    assert estimate(p).dsp == estimate(s).dsp


def test_widen_scales_memory_interface():
    s, p = pair(PUMPABLE[0], "widen")
    # 3 Reader/Writer nodes go from 4 to 8 lanes at 16 LUT per lane
    assert estimate(p).lut_logic - estimate(s).lut_logic >= 3 * 4 * 16


def test_plumbing_adds_no_dsp_or_bram():
    s, p = pair(PUMPABLE[0], "widen")
    d = estimate(p) - estimate(s)
    assert d.dsp == 0 and d.bram == 0


def test_vecadd_plumbing_deltas_frozen():
    s, p = pair(PUMPABLE[0])
    pct = compare(estimate(s), estimate(p)).delta_percent
    assert pct["lut_logic"] == pytest.approx(-0.056, abs=5e-4)
    assert pct["lut_memory"] == pytest.approx(0.281, abs=5e-4)
    assert pct["registers"] == pytest.approx(0.019, abs=5e-4)


def test_stencil_sixteen_stages_dsp():
    s, p = pair(BenchmarkSpec("jacobi3d", shape=(8, 8, 8), stages=16, V=4))
    assert (estimate(s).dsp, estimate(p).dsp) == (960, 480)


def test_local_buffer_bram_divides_with_lanes():
    # stencil line buffers are per lane, so halving lanes halves block count
    s, p = pair(BenchmarkSpec("jacobi3d", shape=(8, 8, 8), stages=16, V=8))
    assert estimate(p).bram * 2 == estimate(s).bram


def test_diffusion_ratio_is_exact_half():
    """The linear model halves exactly; the synthesized design measured 0.526."""
    s, p = pair(BenchmarkSpec("diffusion3d", shape=(8, 8, 8), stages=16, V=4))
    ratio = estimate(p).dsp / estimate(s).dsp
    assert ratio == 0.5
    assert abs(ratio - 0.526) > 0.02


@pytest.mark.xfail(strict=True, reason="exact lane halving cannot give the measured 0.526 ratio")
def test_diffusion_ratio_matches_measured_within_two_points():
    s, p = pair(BenchmarkSpec("diffusion3d", shape=(8, 8, 8), stages=16, V=4))
    assert abs(estimate(p).dsp / estimate(s).dsp - 0.526) <= 0.02


# ---------------------------------------------------------------------------
# model plumbing


def test_vector_arithmetic():
    a = ResourceVector(1, 2, 3, 4, 5)
    assert a + a == a.scale(2)
    assert (a - a) == ResourceVector()
    assert a <= a.scale(2) and not a.scale(2) <= a


def test_identical_vectors_compare_to_zero():
    v = estimate(generate(PUMPABLE[0]))
    d = compare(v, v)
    assert all(x == 0 for x in d.delta.values()) and d.flags == []
    assert d.ratio("dsp") == 1.0


def test_over_budget_is_flagged():
    tiny = Budget(lut_logic=100, lut_memory=100, registers=100_000, bram=10, dsp=1)
    d = compare(ResourceVector(), estimate(generate(PUMPABLE[0])), tiny)
    assert [f.category for f in d.flags] == ["lut_logic", "dsp"]
    assert json.loads(d.to_json())["over_budget"] == ["lut_logic", "dsp"]


def test_ratio_undefined_for_zero_baseline():
    assert compare(ResourceVector(), ResourceVector(dsp=1)).ratio("dsp") is None


def test_budget_validation_and_load(tmp_path):
    with pytest.raises(ValidationError):
        Budget(dsp=0)
    path = tmp_path / "b.json"
    path.write_text(json.dumps({"dsp": 100}))
    b = Budget.load(path)
    assert b.dsp == 100 and b.lut_logic == Budget().lut_logic


def test_cost_table_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"ops": {"add:f32": {"dsp": 5}}, "plumbing": {"issuer": {"lut_logic_per_lane": 1}}}))
    costs = CostTable.load(path)
    assert costs.ops["add:f32"] == {"dsp": 5}
    assert costs.plumbing["issuer"]["lut_logic_per_lane"] == 1
    assert estimate(generate(BenchmarkSpec("vecadd", N=16, V=2)), costs).dsp == 10
    assert json.loads(costs.dumps())["ops"]["add:f32"] == {"dsp": 5}


def test_negative_costs_rejected():
    with pytest.raises(ValidationError):
        CostTable(buffers={"bram_bits": -1})


def test_unknown_op_cost_names_the_op():
    costs = CostTable()
    del costs.ops["add:f32"]
    with pytest.raises(UnknownOpCost) as exc:
        estimate(generate(BenchmarkSpec("vecadd", N=16)), costs)
    assert "add:f32" in str(exc.value)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["stream", "container", "map"]), st.integers(1, 8), st.integers(1, 64))
def test_adding_a_node_never_decreases_any_category(kind, lanes, depth):
    g = generate(BenchmarkSpec("vecadd", N=64, V=2))
    before = estimate(g)
    if kind == "stream":
        build_node(g, StreamNode("extra", lanes, depth))
    elif kind == "container":
        build_node(g, Container("extra", "f32", (depth * 1000,), "local"))
    else:
        build_node(g, Container("q", "f32", ("N",)))
        build_node(g, Container("r", "f32", ("N",)))
        add_map(g, "extra", [("i", "0:N")], 1, {"a": "q[i]"}, {"o": "r[i]"},
                [["out", "o", ["mul", ["in", "a"], ["in", "a"]]]])
    after = estimate(g)
    assert before <= after


# ---------------------------------------------------------------------------
# headroom


def test_gemm_headroom_doubles_when_dsp_binds():
    s, p = pair(BenchmarkSpec("gemm_systolic", N=16, pes=4, V=4))
    budget = Budget(dsp=int(estimate(s).dsp / 0.9) + 1)
    assert scaling_headroom(s, budget) == 4
    assert scaling_headroom(p, budget) == 8


def test_stencil_headroom_grows_with_halved_dsp():
    s, p = pair(BenchmarkSpec("jacobi3d", shape=(8, 8, 8), stages=16, V=8))
    assert scaling_headroom(s) == 24
    assert scaling_headroom(p) == 48


def test_headroom_zero_when_over_budget():
    s, _ = pair(BenchmarkSpec("gemm_systolic", N=16, pes=4, V=4))
    assert scaling_headroom(s, Budget(dsp=1)) == 0


def test_headroom_zero_without_units():
    assert scaling_headroom(generate(BenchmarkSpec("vecadd", N=16))) == 0


def test_estimate_is_sum_over_top_level():
    g = Graph(symbols={"N": 4})
    assert estimate(g) == ResourceVector()
    build_node(g, StreamNode("s", 2, 64, "f32"))
    assert estimate(g) == ResourceVector(lut_memory=64 * 2, registers=64)
    assert set(estimate(g).to_dict()) == set(CATEGORIES)


def test_gemm_bram_does_not_grow():
    s, p = pair(BenchmarkSpec("gemm_systolic", N=16, pes=4, V=4))
    assert estimate(p).bram <= estimate(s).bram == 0
