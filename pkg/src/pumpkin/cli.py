"""``pumpkin`` command-line driver.

Every invocation ends with a machine-parsable ``status=<ok|rejected|error>``
line. Exit codes: 0 ok, 1 error, 2 legality rejection.
"""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import ir
from .benchmarks import BenchmarkSpec, generate, make_inputs, ops_per_output
from .errors import MultipumpError, PumpkinError, ReportError
from .ir import Container, StreamNode, validate
from .resources import Budget, CostTable, compare, estimate
from .sim import ClockConfig, Limits, export_trace, reference_execute, simulate
from .transforms import (
    Mode,
    check_temporal_vectorizable,
    find_multipump_candidate,
    find_streamable_subgraph,
    multipump_all,
    streamify_all,
)

EXIT_OK, EXIT_ERROR, EXIT_REJECTED = 0, 1, 2


class Rejected(Exception):
    def __init__(self, message: str, legality: str = ""):
        super().__init__(message)
        self.legality = legality


def _fmt_frac(x: Fraction) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{float(x):.4f}".rstrip("0")


def default_inputs(graph, seed: int = 0) -> dict:
    """Deterministic values for every external container nobody writes."""
    rng = np.random.default_rng(seed)
    written = {e.dst for e in graph.edges}
    out = {}
    for nid in graph.top_level():
        node = graph.nodes[nid]
        if isinstance(node, Container) and node.location == "external" and nid not in written:
            shape = graph.shape_of(node)
            if node.dtype == "f32":
                out[node.name] = rng.standard_normal(shape).astype(np.float32)
            elif node.dtype == "bool":
                out[node.name] = rng.random(shape) < 0.5
            else:
                out[node.name] = rng.integers(0, 100, size=shape).astype(np.int64 if node.dtype == "i64" else np.int32)
    return out


def summarize(label: str, bench: str, report, resources, budget: Budget, ops_per_elem: int) -> dict:
    """Numbers for one table column. Performance = ops per slow cycle x clk0."""
    time_us = Fraction(report.slow_cycles) / report.clk0_mhz
    ops = report.elements_out * ops_per_elem
    mops = Fraction(ops) / time_us if time_us else Fraction(0)
    pct = resources.percent(budget)
    return {
        "label": label,
        "bench": bench,
        "clk0_mhz": _fmt_frac(report.clk0_mhz),
        "clk1_mhz": _fmt_frac(report.clk1_mhz) if report.M > 1 else "-",
        "M": report.M,
        "slow_cycles": report.slow_cycles,
        "time_us": round(float(time_us), 6),
        "mops": round(float(mops), 6),
        "resources": resources.to_dict(),
        "percent": {c: round(v, 6) for c, v in pct.items()},
        "mops_per_dsp": round(float(mops) / resources.dsp, 6) if resources.dsp else None,
    }


_ROWS = [
    ("Freq CL0 [MHz]", lambda s: s["clk0_mhz"]),
    ("Freq CL1 [MHz]", lambda s: s["clk1_mhz"]),
    ("Time [us]", lambda s: f"{s['time_us']:.3f}"),
    ("Perf [MOp/s]", lambda s: f"{s['mops']:.1f}"),
    ("LUT Logic [%]", lambda s: f"{s['percent']['lut_logic']:.2f}"),
    ("LUT Memory [%]", lambda s: f"{s['percent']['lut_memory']:.2f}"),
    ("Registers [%]", lambda s: f"{s['percent']['registers']:.2f}"),
    ("BRAM [%]", lambda s: f"{s['percent']['bram']:.2f}"),
    ("DSP [%]", lambda s: f"{s['percent']['dsp']:.2f}"),
    ("MOp/s per DSP", lambda s: "-" if s["mops_per_dsp"] is None else f"{s['mops_per_dsp']:.2f}"),
]


def report(before: dict, after: dict) -> str:
    """Fixed-width side-by-side table of two run summaries."""
    if before.get("bench") != after.get("bench"):
        raise ReportError(f"cannot compare {before.get('bench')!r} with {after.get('bench')!r}")
    w0 = max(len(r[0]) for r in _ROWS)
    cells = [(name, f(before), f(after)) for name, f in _ROWS]
    w1 = max(len(before["label"]), *(len(c[1]) for c in cells))
    w2 = max(len(after["label"]), *(len(c[2]) for c in cells))
    lines = [f"{'':<{w0}}  {before['label']:>{w1}}  {after['label']:>{w2}}"]
    lines.append("-" * len(lines[0]))
    lines += [f"{n:<{w0}}  {a:>{w1}}  {b:>{w2}}" for n, a, b in cells]
    return "\n".join(lines) + "\n"


def _spec_from_args(args) -> BenchmarkSpec:
    shape = tuple(int(s) for s in args.shape.split(",")) if args.shape else (8, 8, 8)
    n = args.size if args.size is not None else (32 if args.bench == "floyd_warshall" else
                                                  16 if args.bench == "gemm_systolic" else 1024)
    return BenchmarkSpec(args.bench, N=n, V=args.vector, pes=args.pes, stages=args.stages, shape=shape)


def _load_graph(args):
    if args.graph:
        g = ir.load(args.graph)
        return g, default_inputs(g), Path(args.graph).stem, 1
    spec = _spec_from_args(args)
    g = generate(spec)
    return g, make_inputs(spec), spec.kind if spec.kind != "stencil_chain" else spec.stencil, ops_per_output(spec)


def _set_depth(graph, depth: int) -> None:
    for nid in graph.of_type(StreamNode):
        graph.nodes[nid].depth = depth


def run_pipeline(args, out=sys.stdout) -> int:
    graph, inputs, bench, ops_per_elem = _load_graph(args)
    problems = validate(graph)
    if problems:
        raise PumpkinError("invalid graph: " + "; ".join(f"{v.rule}@{v.where}" for v in problems))
    budget = Budget.load(args.budget) if args.budget else Budget()
    costs = CostTable.load(args.costs) if args.costs else CostTable()
    clk0, clk1, M = Fraction(args.clk0), Fraction(args.clk1), args.multipump
    mode = Mode(args.mode)

    original = streamify_all(graph)
    _set_depth(original, args.fifo_depth)
    if M > 1:
        if not find_multipump_candidate(original):
            legality = check_temporal_vectorizable(original, find_streamable_subgraph(original))
            raise Rejected("no subgraph qualifies for multi-pumping", legality.describe())
        try:
            pumped = multipump_all(original, M, mode, clk1, clk0, args.fifo_depth)
        except MultipumpError as exc:
            raise Rejected(str(exc)) from exc
    else:
        pumped = original.copy()

    expected = reference_execute(graph, inputs)
    rep_o = simulate(original, inputs, ClockConfig(clk0, max(clk0, clk1), 1))
    trace = bool(args.trace)
    rep_p = simulate(pumped, inputs, ClockConfig(clk0, max(clk0, clk1), M), Limits(trace=trace))
    equivalent = all(np.array_equal(rep_o.outputs[k], v) and np.array_equal(rep_p.outputs[k], v)
                     for k, v in expected.items())
    est_o, est_p = estimate(original, costs), estimate(pumped, costs)
    diff = compare(est_o, est_p, budget)
    s_o = summarize("O", bench, rep_o, est_o, budget, ops_per_elem)
    s_p = summarize("DP" if M == 2 else f"P{M}", bench, rep_p, est_p, budget, ops_per_elem)

    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    ir.save(original, dest / "original.json")
    ir.save(pumped, dest / "transformed.json")
    (dest / "sim_original.json").write_text(rep_o.to_json())
    (dest / "sim_transformed.json").write_text(rep_p.to_json())
    (dest / "diff.json").write_text(diff.to_json())
    summary = {"original": s_o, "transformed": s_p, "equivalent": equivalent,
               "mode": mode.value, "dsp_ratio": diff.ratio("dsp"),
               "speedup_slow_cycles": rep_o.slow_cycles / rep_p.slow_cycles if rep_p.slow_cycles else None}
    (dest / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    table = report(s_o, s_p)
    (dest / "report.txt").write_text(table)
    if trace:
        export_trace(rep_p, args.trace)
    out.write(table)
    ratio, speedup = diff.ratio("dsp"), summary["speedup_slow_cycles"]
    out.write(f"dsp_ratio={'n/a' if ratio is None else f'{ratio:.4f}'} "
              f"speedup={'n/a' if speedup is None else f'{speedup:.4f}'} equivalent={str(equivalent).lower()}\n")
    for f in diff.flags:
        out.write(f"over_budget={f.category}\n")
    if not equivalent:
        raise PumpkinError("simulated outputs differ from the reference interpreter")
    return EXIT_OK


def _cmd_generate(args, out) -> int:
    graph, _, bench, _ = _load_graph(args)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    ir.save(graph, dest / f"{bench}.json")
    out.write(f"wrote {dest / (bench + '.json')}\n")
    return EXIT_OK


def _cmd_validate(args, out) -> int:
    graph, _, _, _ = _load_graph(args)
    problems = validate(graph)
    for v in problems:
        out.write(f"{v.rule} {v.where} {v.detail}\n")
    if problems:
        raise PumpkinError(f"{len(problems)} violation(s)")
    out.write("valid\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("input")
    src.add_argument("--bench", default="vecadd",
                     choices=["vecadd", "gemm_systolic", "jacobi3d", "diffusion3d", "floyd_warshall"])
    src.add_argument("--graph", help="graph JSON file instead of a generated benchmark")
    src.add_argument("-N", "--size", type=int, help="problem size (vector length, node count, GEMM dims)")
    src.add_argument("-V", "--vector", type=int, default=1, help="vector width")
    src.add_argument("--pes", type=int, default=4, help="systolic PE count")
    src.add_argument("--stages", type=int, default=4, help="stencil chain length")
    src.add_argument("--shape", help="stencil grid X,Y,Z (default 8,8,8)")
    src.add_argument("--out", default="pumpkin-out", help="artifact directory")

    parser = argparse.ArgumentParser(prog="pumpkin", description="Multi-pumping pipeline for dataflow graphs")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a benchmark graph")
    sub.add_parser("validate", parents=[common], help="check graph invariants")
    run = sub.add_parser("run", parents=[common], help="transform, simulate and report")
    run.add_argument("--multipump", type=int, default=2, metavar="M")
    run.add_argument("--mode", choices=["widen", "narrow"], default="widen")
    run.add_argument("--clk0", default="300", help="slow clock [MHz]")
    run.add_argument("--clk1", default="600", help="fast clock [MHz]")
    run.add_argument("--fifo-depth", type=int, default=16)
    run.add_argument("--trace", help="write a waveform trace CSV of the transformed run")
    run.add_argument("--budget", help="budget JSON file")
    run.add_argument("--costs", help="cost table JSON file")
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            out.write("status=error\n")
            return EXIT_ERROR
        raise
    try:
        code = {"generate": _cmd_generate, "validate": _cmd_validate, "run": run_pipeline}[args.command](args, out)
    except Rejected as exc:
        out.write(f"rejected: {exc}\n")
        if exc.legality:
            out.write(exc.legality + "\n")
        out.write("status=rejected\n")
        return EXIT_REJECTED
    except (PumpkinError, OSError, ValueError, json.JSONDecodeError) as exc:
        out.write(f"error: {exc}\n")
        out.write("status=error\n")
        return EXIT_ERROR
    out.write("status=ok\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
