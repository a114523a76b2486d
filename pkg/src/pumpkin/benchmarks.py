"""Deterministic generators for the four benchmark programs and their inputs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError, ValidationError
from .ir import Container, Graph, MapScope, Tasklet, build_node
from .symbolic import Range, parse_memlet
from .transforms import vectorize

KINDS = ("vecadd", "gemm_systolic", "stencil_chain", "floyd_warshall")
STENCILS = ("jacobi3d", "diffusion3d")
FW_INF = 2 ** 40


@dataclass
class BenchmarkSpec:
    """Size parameters for one benchmark.

    ``N`` is the vector length (vecadd), node count (floyd_warshall) or the
    default for every GEMM dimension. ``shape`` is the stencil grid.
    """

    kind: str
    N: int = 1024
    V: int = 1
    K: int | None = None
    M: int | None = None
    pes: int = 4
    stages: int = 4
    shape: tuple = (8, 8, 8)
    stencil: str = "jacobi3d"

    def __post_init__(self):
        if self.kind in STENCILS:
            self.kind, self.stencil = "stencil_chain", self.kind
        if self.kind not in KINDS:
            raise SpecError(f"unknown benchmark {self.kind!r}")
        if self.stencil not in STENCILS:
            raise SpecError(f"unknown stencil {self.stencil!r}")
        self.shape = tuple(self.shape)
        sizes = [self.N, self.V, self.pes, self.stages, *self.shape]
        if self.K is not None:
            sizes.append(self.K)
        if self.M is not None:
            sizes.append(self.M)
        if any(int(s) < 1 for s in sizes):
            raise SpecError("all sizes must be positive")


# ---------------------------------------------------------------------------
# map construction helper


def add_map(g: Graph, name: str, params, V: int, ins: dict, outs: dict, code: list,
            local_buffers=(), kernel: int = 0, unit: int | None = None, latency: int = 1) -> int:
    """Insert a map with its tasklet and scope-local buffers and wire its memlets.

    ``params`` is a list of (name, "begin:end[:stride]"); ``ins``/``outs`` map
    connector names to memlet strings over top-level containers.
    """
    body = [build_node(g, c) for c in local_buffers]
    body.append(build_node(g, Tasklet(f"{name}_code", sorted(ins), sorted(outs), code)))
    ranges = tuple(Range.parse(p, r) for p, r in params)
    mid = build_node(g, MapScope(name, ranges, V, body, kernel, unit, latency))
    for conn, text in sorted(ins.items()):
        m = parse_memlet(text)
        g.add_edge(g.container_by_name(m.data), mid, None, conn, m)
    for conn, text in sorted(outs.items()):
        m = parse_memlet(text)
        g.add_edge(mid, g.container_by_name(m.data), conn, None, m)
    return mid


@dataclass
class ChainStage:
    name: str
    ins: dict
    outs: dict
    code: list
    local_buffers: list = field(default_factory=list)


@dataclass
class ChainScope:
    """Linear chain of processing stages connected head to tail.

    Lowers to one map per stage. Every link container written by stage p
    must be read only by stage p+1, so the lowered graph has forward edges
    only; a stage never talks to anything but its two neighbours and the
    chain's own feeders and drainers.
    """

    name: str
    params: list
    V: int
    stages: list
    kernel: int = 0

    def lower(self, g: Graph, link_shapes: dict, dtype: str = "f32") -> list[int]:
        readers_of: dict[str, int] = {}
        writers_of: dict[str, int] = {}
        for p, st in enumerate(self.stages):
            for text in st.ins.values():
                readers_of.setdefault(parse_memlet(text).data, p)
            for text in st.outs.values():
                writers_of.setdefault(parse_memlet(text).data, p)
        for link, p in writers_of.items():
            reader = readers_of.get(link, len(self.stages) if p == len(self.stages) - 1 else None)
            if link in link_shapes and reader != p + 1:
                raise ValidationError(f"link {link} does not connect stage {p} to stage {p + 1}", self.name)
        for link, shape in link_shapes.items():
            build_node(g, Container(link, dtype, tuple(shape), "local"))
        return [add_map(g, st.name, self.params, self.V, st.ins, st.outs, st.code, st.local_buffers,
                        kernel=self.kernel, unit=p)
                for p, st in enumerate(self.stages)]


# ---------------------------------------------------------------------------
# generators


def _vecadd(spec: BenchmarkSpec) -> Graph:
    if spec.N % spec.V:
        raise SpecError(f"N={spec.N} not divisible by V={spec.V}")
    g = Graph(symbols={"N": spec.N})
    for name in ("x", "y", "z"):
        build_node(g, Container(name, "f32", ("N",)))
    code = [["out", "c", ["add", ["in", "a"], ["in", "b"]]]]
    mid = add_map(g, "vecadd", [("i", "0:N")], 1, {"a": "x[i]", "b": "y[i]"}, {"c": "z[i]"}, code)
    return vectorize(g, mid, spec.V) if spec.V > 1 else g


def _floyd_warshall(spec: BenchmarkSpec) -> Graph:
    if spec.V != 1:
        raise SpecError("floyd_warshall is generated scalar; vectorization is rejected by the loop-carried check")
    g = Graph(symbols={"N": spec.N})
    build_node(g, Container("adj", "i64", ("N", "N")))
    build_node(g, Container("dist", "i64", ("N", "N")))
    P = lambda n: ["param", n]  # noqa: E731
    code = [
        ["let", "cur", ["select", ["eq", P("k"), ["const", 0]], ["in", "din"], ["load", "D", ["i", "j"]]]],
        ["let", "dik", ["select", ["eq", P("j"), P("k")], ["var", "cur"], ["load", "D", ["i", "k"]]]],
        ["let", "dkj", ["select", ["eq", P("i"), P("k")], ["var", "cur"], ["load", "D", ["k", "j"]]]],
        ["let", "new", ["min", ["var", "cur"], ["add", ["var", "dik"], ["var", "dkj"]]]],
        ["store", "D", ["i", "j"], ["var", "new"]],
        ["out", "dout", ["var", "new"]],
    ]
    add_map(g, "relax", [("k", "0:N"), ("i", "0:N"), ("j", "0:N")], 1,
            {"din": "adj[i, j] if k == 0"}, {"dout": "dist[i, j] if k == N - 1"}, code,
            [Container("D", "i64", ("N", "N"), "local")])
    return g


def _gemm(spec: BenchmarkSpec) -> Graph:
    n, k, m, P, V = spec.N, spec.K or spec.N, spec.M or spec.N, spec.pes, spec.V
    if k % P:
        raise SpecError(f"K={k} not divisible by {P} PEs")
    if m % V:
        raise SpecError(f"M={m} not divisible by V={V}")
    g = Graph(symbols={"N": n, "K": k, "M": m})
    build_node(g, Container("A", "f32", ("N", "K")))
    build_node(g, Container("BT", "f32", ("M", "K")))
    build_node(g, Container("C", "f32", ("N", "M")))
    params = [("i", "0:N"), ("j", f"0:{m // V}")]
    lanes = "V*j : V*j + V".replace("V", str(V))
    build_node(g, Container("bq0", "f32", ("N", "M", "K"), "local"))
    add_map(g, "feed_b", params, V, {"bt": f"BT[{lanes}, 0:K]"}, {"b": f"bq0[i, {lanes}, 0:K]"},
            [["copy", "b", "bt"]], kernel=0)
    ks = k // P
    stages, links = [], {}
    for p in range(P):
        a_src = "A[i, 0:K] if j == 0" if p == 0 else f"a{p}[i, 0:K] if j == 0"
        ins = {"a": a_src, "b": f"bq{p}[i, {lanes}, 0:K]"}
        acc = ["in", "c"] if p > 0 else None
        if p > 0:
            ins["c"] = f"c{p}[i, {lanes}]"
        for kk in range(p * ks, (p + 1) * ks):
            term = ["mul", ["in", "a", kk], ["in", "b", kk]]
            acc = term if acc is None else ["add", acc, term]
        outs = {"co": f"c{p + 1}[i, {lanes}]"}
        links[f"c{p + 1}"] = ("N", "M")
        code = [["out", "co", acc]]
        if p < P - 1:
            outs["ao"] = f"a{p + 1}[i, 0:K] if j == 0"
            outs["bo"] = f"bq{p + 1}[i, {lanes}, 0:K]"
            links[f"a{p + 1}"] = ("N", "K")
            links[f"bq{p + 1}"] = ("N", "M", "K")
            code += [["copy", "ao", "a"], ["copy", "bo", "b"]]
        stages.append(ChainStage(f"pe{p}", ins, outs, code))
    ChainScope("systolic", params, V, stages).lower(g, links)
    add_map(g, "drain_c", params, V, {"c": f"c{P}[i, {lanes}]"}, {"o": f"C[i, {lanes}]"},
            [["copy", "o", "c"]], kernel=0)
    return g


_DIFFUSION = (0.4, 0.15, 0.1, 0.05)


def _stencil_expr(kind: str, buf: str):
    L = lambda dx, dy, dz: ["load", buf, [f"x - 1 + {dx}", f"y + {dy}", f"z + {dz}"]]  # noqa: E731
    c = L(0, 0, 0)
    pairs = [(L(-1, 0, 0), L(1, 0, 0)), (L(0, -1, 0), L(0, 1, 0)), (L(0, 0, -1), L(0, 0, 1))]
    if kind == "jacobi3d":
        total = c
        for a, b in pairs:
            total = ["add", ["add", total, a], b]
        return ["mul", total, ["const", float(np.float32(1 / 7)), "f32"]]
    c0, c1, c2, c3 = (["const", w, "f32"] for w in _DIFFUSION)
    total = ["mul", c0, c]
    for w, (a, b) in zip((c1, c2, c3), pairs):
        total = ["add", total, ["mul", w, ["add", a, b]]]
    return total


def _stencil(spec: BenchmarkSpec) -> Graph:
    X, Y, Z = spec.shape
    V, S = spec.V, spec.stages
    if Z % V:
        raise SpecError(f"Z={Z} not divisible by V={V}")
    if min(X, Y, Z) < 3:
        raise SpecError("stencil grid needs at least 3 points per axis")
    g = Graph(symbols={"X": X, "Y": Y, "Z": Z})
    for s in range(S + 1):
        build_node(g, Container(f"g{s}", "f32", ("X", "Y", "Z"), "external" if s in (0, S) else "local"))
    lanes = f"{V}*z : {V}*z + {V}"
    params = [("x", "0:X + 1"), ("y", "0:Y"), ("z", f"0:{Z // V}")]
    ge = lambda a, b: ["ge", ["param", a], ["const", b]]  # noqa: E731
    le = lambda a, b: ["le", ["param", a], ["const", b]]  # noqa: E731
    interior = ["and", ["and", ["and", ge("x", 2), le("x", X - 1)], ["and", ge("y", 1), le("y", Y - 2)]],
                ["and", ge("z", 1), le("z", Z - 2)]]
    for s in range(S):
        buf = f"buf{s}"
        code = [
            ["store", buf, ["x", "y", "z"], ["in", "u"], ["lt", ["param", "x"], ["const", X]]],
            ["out", "w", ["select", interior, _stencil_expr(spec.stencil, buf),
                          ["load", buf, ["x - 1", "y", "z"]]]],
        ]
        add_map(g, f"{spec.stencil}_{s}", params, V,
                {"u": f"g{s}[x, y, {lanes}] if x <= X - 1"}, {"w": f"g{s + 1}[x - 1, y, {lanes}] if x >= 1"},
                code, [Container(buf, "f32", ("X", "Y", "Z"), "local")], kernel=s, unit=s)
    return g


def generate(spec: BenchmarkSpec) -> Graph:
    return {"vecadd": _vecadd, "floyd_warshall": _floyd_warshall,
            "gemm_systolic": _gemm, "stencil_chain": _stencil}[spec.kind](spec)


def make_inputs(spec: BenchmarkSpec, seed: int = 0) -> dict:
    """Deterministic input arrays for a benchmark."""
    rng = np.random.default_rng(seed)
    if spec.kind == "vecadd":
        return {"x": rng.standard_normal(spec.N).astype(np.float32),
                "y": rng.standard_normal(spec.N).astype(np.float32)}
    if spec.kind == "floyd_warshall":
        n = spec.N
        w = rng.integers(1, 10, size=(n, n)).astype(np.int64)
        adj = np.where(rng.random((n, n)) < 0.3, w, FW_INF)
        np.fill_diagonal(adj, 0)
        return {"adj": adj}
    if spec.kind == "gemm_systolic":
        n, k, m = spec.N, spec.K or spec.N, spec.M or spec.N
        return {"A": rng.standard_normal((n, k)).astype(np.float32),
                "BT": rng.standard_normal((m, k)).astype(np.float32)}
    return {"g0": rng.standard_normal(spec.shape).astype(np.float32)}


def ops_per_output(spec: BenchmarkSpec) -> int:
    """Arithmetic operations counted per output element for throughput reports."""
    if spec.kind == "vecadd":
        return 1
    if spec.kind == "gemm_systolic":
        return 2 * (spec.K or spec.N)
    if spec.kind == "floyd_warshall":
        return 2 * spec.N
    return (7 if spec.stencil == "jacobi3d" else 10) * spec.stages
