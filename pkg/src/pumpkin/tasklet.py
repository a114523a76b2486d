"""Tasklet code: compilation to closures, per-iteration map execution, op counts.

Tasklet code is a JSON-friendly list of statements run once per lane:

    ["let", name, expr]
    ["store", buffer, [index, ...], expr]            optional 5th item: predicate
    ["out", connector, expr]                         optional 4th item: offset
    ["copy", out_connector, in_connector]            forwards a whole lane slice

Expressions are nested lists. Leaves: ``["const", v]`` (optional dtype),
``["in", conn]`` (optional offset), ``["param", name]``, ``["var", name]``,
``["load", buffer, [index, ...]]``. Index items are affine strings over map
parameters and graph symbols, or expressions (computed addresses). Operators:
add sub mul div min max, lt le gt ge eq ne, and or not neg, and the lazy
``["select", cond, a, b]``.
"""
from __future__ import annotations

from collections import Counter
from typing import Callable, Mapping

import numpy as np

from .errors import PumpkinError, UnboundSymbol
from .symbolic import Memlet, eval_affine, parse_affine

NP_TYPES = {"f32": np.float32, "i32": np.int32, "i64": np.int64, "bool": np.bool_}

ARITH = {"add", "sub", "mul", "div", "min", "max"}
COMPARE = {"lt", "le", "gt", "ge", "eq", "ne"}
LOGIC = {"and", "or"}
UNARY = {"not", "neg"}


def _div(a, b):
    if isinstance(a, (np.floating, float)):
        return a / b
    return a // b


_BINOPS: dict[str, Callable] = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": _div,
    "min": lambda a, b: b if b < a else a,
    "max": lambda a, b: b if b > a else a,
    "lt": lambda a, b: np.bool_(a < b),
    "le": lambda a, b: np.bool_(a <= b),
    "gt": lambda a, b: np.bool_(a > b),
    "ge": lambda a, b: np.bool_(a >= b),
    "eq": lambda a, b: np.bool_(a == b),
    "ne": lambda a, b: np.bool_(a != b),
    "and": lambda a, b: np.bool_(a and b),
    "or": lambda a, b: np.bool_(a or b),
}


class TaskletError(PumpkinError):
    pass


class Env:
    __slots__ = ("params", "vars", "ins", "mem", "outs")

    def __init__(self, params, ins, mem):
        self.params = params
        self.vars = {}
        self.ins = ins
        self.mem = mem
        self.outs = {}


def _const(value, dtype=None):
    if dtype is None:
        dtype = "bool" if isinstance(value, bool) else "i64" if isinstance(value, int) else "f32"
    return NP_TYPES[dtype](value)


def _compile_index(item, symbols) -> Callable:
    if isinstance(item, (str, int)):
        expr = parse_affine(item)
        return lambda env: eval_affine(expr, env.params)
    f = compile_expr(item, symbols)
    return lambda env: int(f(env))


def compile_expr(e, symbols: Mapping[str, int]) -> Callable:
    op = e[0]
    if op == "const":
        v = _const(e[1], e[2] if len(e) > 2 else None)
        return lambda env: v
    if op == "in":
        conn, off = e[1], (e[2] if len(e) > 2 else 0)

        def read(env):
            word, base = env.ins[conn]
            return word[base + off]
        return read
    if op == "param":
        name = e[1]

        def param(env):
            try:
                return np.int64(env.params[name])
            except KeyError:
                raise UnboundSymbol(name) from None
        return param
    if op == "var":
        name = e[1]
        return lambda env: env.vars[name]
    if op == "load":
        buf = e[1]
        idx = [_compile_index(i, symbols) for i in e[2]]

        def load(env):
            return env.mem[buf][tuple(f(env) for f in idx)]
        return load
    if op == "select":
        c, a, b = (compile_expr(x, symbols) for x in e[1:4])
        return lambda env: a(env) if c(env) else b(env)
    if op in UNARY:
        a = compile_expr(e[1], symbols)
        if op == "not":
            return lambda env: np.bool_(not a(env))
        return lambda env: -a(env)
    if op in _BINOPS:
        fn = _BINOPS[op]
        a, b = compile_expr(e[1], symbols), compile_expr(e[2], symbols)
        return lambda env: fn(a(env), b(env))
    raise TaskletError(f"unknown expression operator {op!r}")


def compile_code(code: list, symbols: Mapping[str, int]) -> list[Callable]:
    """Compile statements into callables ``f(env)`` executed in order."""
    out = []
    for st in code:
        kind = st[0]
        if kind == "let":
            name, f = st[1], compile_expr(st[2], symbols)

            def let(env, name=name, f=f):
                env.vars[name] = f(env)
            out.append(let)
        elif kind == "store":
            buf = st[1]
            idx = [_compile_index(i, symbols) for i in st[2]]
            f = compile_expr(st[3], symbols)
            pred = compile_expr(st[4], symbols) if len(st) > 4 else None

            def store(env, buf=buf, idx=idx, f=f, pred=pred):
                if pred is None or pred(env):
                    env.mem[buf][tuple(g(env) for g in idx)] = f(env)
            out.append(store)
        elif kind == "out":
            conn, f = st[1], compile_expr(st[2], symbols)
            off = st[3] if len(st) > 3 else 0

            def emit(env, conn=conn, f=f, off=off):
                env.outs[(conn, off)] = f(env)
            out.append(emit)
        elif kind == "copy":
            dst, src = st[1], st[2]

            def copy(env, dst=dst, src=src):
                word, base = env.ins[src]
                env.outs[(dst, "copy")] = (word, base)
            out.append(copy)
        else:
            raise TaskletError(f"unknown statement {kind!r}")
    return out


# ---------------------------------------------------------------------------
# expression walking


def iter_exprs(code: list):
    """Yield every top-level expression in the statement list."""
    for st in code:
        kind = st[0]
        if kind == "let":
            yield st[2]
        elif kind == "store":
            yield from (i for i in st[2] if isinstance(i, list))
            yield st[3]
            if len(st) > 4:
                yield st[4]
        elif kind == "out":
            yield st[2]


def walk(e):
    yield e
    op = e[0]
    if op == "load":
        for i in e[2]:
            if isinstance(i, list):
                yield from walk(i)
    elif op in ARITH | COMPARE | LOGIC | UNARY or op == "select":
        for sub in e[1:]:
            yield from walk(sub)


def loads_and_stores(code: list):
    """Return (loads, stores): lists of (buffer, index items, computed?)."""
    loads, stores = [], []
    for e in iter_exprs(code):
        for sub in walk(e):
            if sub[0] == "load":
                loads.append((sub[1], tuple(map(_index_key, sub[2])), any(isinstance(i, list) for i in sub[2])))
    for st in code:
        if st[0] == "store":
            stores.append((st[1], tuple(map(_index_key, st[2])), any(isinstance(i, list) for i in st[2])))
    return loads, stores


def _index_key(i):
    return str(parse_affine(i)) if isinstance(i, (str, int)) else repr(i)


def _dtype_of(e, types: Mapping[str, str], lets: Mapping[str, str]) -> str:
    op = e[0]
    if op == "const":
        return e[2] if len(e) > 2 else ("bool" if isinstance(e[1], bool) else "i64" if isinstance(e[1], int) else "f32")
    if op == "in":
        return types.get(e[1], "f32")
    if op == "param":
        return "i64"
    if op == "var":
        return lets.get(e[1], "f32")
    if op == "load":
        return types.get(e[1], "f32")
    if op in COMPARE | LOGIC or op == "not":
        return "bool"
    if op == "select":
        return _dtype_of(e[2], types, lets)
    if op == "neg":
        return _dtype_of(e[1], types, lets)
    return _dtype_of(e[1], types, lets)


def op_counts(code: list, types: Mapping[str, str]) -> Counter:
    """Count arithmetic/comparison operators per lane, keyed by ``op:dtype``.

    Both arms of a select are counted since both exist in hardware. Operations
    whose operands are all parameters (address/loop logic) are keyed with
    dtype ``idx``.
    """
    counts: Counter = Counter()
    lets: dict[str, str] = {}

    def visit(e):
        op = e[0]
        if op in ARITH | COMPARE | LOGIC | UNARY or op == "select":
            operands = e[1:]
            if op == "select":
                operands = e[2:4]
            if all(_is_index_expr(x) for x in e[1:]):
                counts[f"{op}:idx"] += 1
            else:
                dt = _dtype_of(operands[0], types, lets)
                if dt == "bool" and len(operands) > 1:
                    dt = _dtype_of(operands[1], types, lets)
                counts[f"{op}:{dt}"] += 1
            for sub in e[1:]:
                visit(sub)
        elif op == "load":
            for i in e[2]:
                if isinstance(i, list):
                    visit(i)

    for st in code:
        if st[0] == "let":
            visit(st[2])
            lets[st[1]] = _dtype_of(st[2], types, lets)
        elif st[0] == "store":
            for i in st[2]:
                if isinstance(i, list):
                    visit(i)
            visit(st[3])
            if len(st) > 4:
                visit(st[4])
        elif st[0] == "out":
            visit(st[2])
    return counts


def _is_index_expr(e) -> bool:
    subs = list(walk(e))
    if any(s[0] in ("in", "var", "load") for s in subs):
        return False
    return any(s[0] == "param" for s in subs) or (e[0] == "const" and isinstance(e[1], (int, bool)))


# ---------------------------------------------------------------------------
# per-iteration execution of a map


class Connector:
    __slots__ = ("name", "memlet", "volume", "lane_split", "per_lane", "dtype")

    def __init__(self, name, memlet: Memlet, volume, lane_split, per_lane, dtype):
        self.name = name
        self.memlet = memlet
        self.volume = volume
        self.lane_split = lane_split
        self.per_lane = per_lane
        self.dtype = dtype


def is_lane_split(memlet: Memlet, vec_param: str, vector_width: int) -> bool:
    if vector_width == 1:
        return True
    return any(vec_param in d.begin.symbols for d in memlet.subset or ())


class MapKernel:
    """Executes one map iteration at a time, shared by the reference interpreter
    and the simulator so both produce bit-identical values."""

    def __init__(self, graph, map_id: int):
        from .ir import Container, StreamNode  # local import to avoid a cycle

        self.graph = graph
        self.map_id = map_id
        node = graph.nodes[map_id]
        self.node = node
        self.V = node.vector_width
        self.vec = node.vec_param
        self.symbols = dict(graph.symbols)
        self.ranges = node.params
        tasklet = graph.tasklet_of(map_id)
        self.code = compile_code(tasklet.code, self.symbols)
        self.locals = {}
        for b in graph.locals_of(map_id):
            c = graph.nodes[b]
            self.locals[c.name] = np.zeros(graph.shape_of(c), dtype=NP_TYPES[c.dtype])

        def dtype_of_edge(e, other):
            n = graph.nodes[other]
            if isinstance(n, Container):
                return n.dtype
            if isinstance(n, StreamNode):
                return n.dtype
            return "f32"

        self.inputs: list[Connector] = []
        self.outputs: list[Connector] = []
        for e in sorted(graph.in_edges(map_id), key=lambda e: e.dst_conn or ""):
            self.inputs.append(self._connector(e.dst_conn, e.memlet, dtype_of_edge(e, e.src)))
        for e in sorted(graph.out_edges(map_id), key=lambda e: e.src_conn or ""):
            self.outputs.append(self._connector(e.src_conn, e.memlet, dtype_of_edge(e, e.dst)))
        self.last = {c.name: [c_zero(c.dtype)] * c.volume for c in self.inputs}

    def _connector(self, name, memlet, dtype) -> Connector:
        if memlet is None or not memlet.affine:
            raise TaskletError(f"map {self.map_id} connector {name!r} has no affine memlet")
        volume = memlet.volume(self.symbols)
        split = is_lane_split(memlet, self.vec, self.V)
        per_lane = volume // self.V if split else volume
        return Connector(name, memlet, volume, split, per_lane, dtype)

    def iterations(self):
        from .symbolic import iterate
        return iterate(self.ranges, self.symbols)

    def active_inputs(self, it) -> list[Connector]:
        return [c for c in self.inputs if c.memlet.active(it)]

    def active_outputs(self, it) -> list[Connector]:
        return [c for c in self.outputs if c.memlet.active(it)]

    def run(self, it: dict, words: Mapping[str, list], memory: Mapping[str, np.ndarray] | None = None) -> dict:
        """Run one iteration. ``words`` holds the words for active inputs;
        inactive inputs keep their previous value. Returns words for active
        outputs."""
        for name, w in words.items():
            self.last[name] = w
        mem = dict(memory or {})
        mem.update(self.locals)
        outs = {c.name: [None] * c.volume for c in self.active_outputs(it)}
        V, vec = self.V, self.vec
        base_param = it[vec]
        for lane in range(V):
            params = dict(it)
            params[vec] = base_param * V + lane
            ins = {c.name: (self.last[c.name], lane * c.per_lane if c.lane_split else 0) for c in self.inputs}
            env = Env(params, ins, mem)
            for f in self.code:
                f(env)
            for (conn, off), value in env.outs.items():
                if conn not in outs:
                    continue
                c = next(o for o in self.outputs if o.name == conn)
                base = lane * c.per_lane if c.lane_split else 0
                if off == "copy":
                    word, src_base = value
                    n = c.per_lane if c.lane_split else c.volume
                    outs[conn][base:base + n] = word[src_base:src_base + n]
                else:
                    outs[conn][base + off] = value
        return outs


def c_zero(dtype: str):
    return NP_TYPES[dtype](0)
