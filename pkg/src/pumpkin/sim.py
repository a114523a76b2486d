"""Deterministic two-clock cycle-level simulator and the sequential reference
interpreter used as its oracle.

Time is kept as an exact integer: every domain frequency is scaled onto a
common base so that each domain ticks every ``period`` base units. At each
event time the nodes whose domain ticks are evaluated once, consumers before
producers, so a word pushed into a channel becomes visible to its consumer on
the consumer's next tick (registered outputs).
"""
from __future__ import annotations

import csv
import json
import math
import zlib
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BudgetExceeded, DeadlockError, TraceNotEnabled, ValidationError
from .ir import (
    Container,
    Graph,
    Issuer,
    MapScope,
    Packer,
    Reader,
    StreamNode,
    Synchronizer,
    Writer,
    validate,
)
from .symbolic import iterate
from .tasklet import NP_TYPES, MapKernel


def effective_clock(clk0, clk1, M: int) -> Fraction:
    """Rate at which a pumped pipeline progresses: the slower of the two sides."""
    clk0, clk1 = Fraction(str(clk0)), Fraction(str(clk1))
    if clk0 <= 0 or clk1 <= 0 or M < 1:
        raise ValueError("clock frequencies and M must be positive")
    return min(clk0, clk1 / M)


@dataclass(frozen=True)
class ClockConfig:
    clk0_mhz: Fraction = Fraction(300)
    clk1_mhz: Fraction = Fraction(600)
    M: int = 1

    def __post_init__(self):
        object.__setattr__(self, "clk0_mhz", Fraction(str(self.clk0_mhz)))
        object.__setattr__(self, "clk1_mhz", Fraction(str(self.clk1_mhz)))
        if self.clk0_mhz <= 0 or self.clk1_mhz <= 0:
            raise ValidationError("frequencies must be positive", "clock")
        if self.clk1_mhz < self.clk0_mhz:
            raise ValidationError("clk1 must not be slower than clk0", "clock")
        if self.M < 1:
            raise ValidationError("M must be >= 1", "clock")


@dataclass(frozen=True)
class Limits:
    watchdog: int = 10_000
    max_ticks: int = 50_000_000
    trace: bool = False


def _payload_hash(word) -> int:
    return zlib.crc32(np.asarray(word).tobytes())


class Tracer:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.rows: list[tuple] = []

    def log(self, tick, domain, node, port, event, word=None):
        if self.enabled:
            self.rows.append((tick, domain, node, port, event, "" if word is None else _payload_hash(word)))


class Channel:
    """Bounded FIFO of lane-vectors with stall accounting."""

    def __init__(self, name: str, depth: int, lanes: int):
        if depth < 1:
            raise ValidationError("channel depth must be >= 1", name)
        self.name = name
        self.depth = depth
        self.lanes = lanes
        self.queue: deque = deque()
        self.pushes = 0
        self.pops = 0
        self.stall_full = 0
        self.stall_empty = 0
        self.max_occupancy = 0

    @property
    def full(self) -> bool:
        return len(self.queue) >= self.depth

    @property
    def empty(self) -> bool:
        return not self.queue

    def push(self, word) -> None:
        assert len(self.queue) < self.depth, "push into full channel"
        self.queue.append(word)
        self.pushes += 1
        self.max_occupancy = max(self.max_occupancy, len(self.queue))

    def pop(self):
        self.pops += 1
        return self.queue.popleft()

    def stats(self) -> dict:
        return {
            "depth": self.depth,
            "lanes": self.lanes,
            "pushes": self.pushes,
            "pops": self.pops,
            "stall_full": self.stall_full,
            "stall_empty": self.stall_empty,
            "max_occupancy": self.max_occupancy,
            "final_occupancy": len(self.queue),
        }


# ---------------------------------------------------------------------------
# node state machines. Each has ``step(now)`` returning True on progress.


class _Unit:
    name = ""
    domain = 0
    tick_index = 0
    tracer: Tracer = Tracer(False)

    def done(self) -> bool:
        return True

    def _try_push(self, ch: Channel, word) -> bool:
        if ch.full:
            ch.stall_full += 1
            self.tracer.log(self.tick_index, self.domain, self.name, ch.name, "stall_full")
            return False
        ch.push(word)
        self.tracer.log(self.tick_index, self.domain, self.name, ch.name, "push", word)
        return True

    def _pop(self, ch: Channel):
        word = ch.pop()
        self.tracer.log(self.tick_index, self.domain, self.name, ch.name, "pop", word)
        return word

    def _note_empty(self, ch: Channel) -> None:
        ch.stall_empty += 1
        self.tracer.log(self.tick_index, self.domain, self.name, ch.name, "stall_empty")


class IssuerState(_Unit):
    """Splits each wide word into ``factor`` narrow words, lane group 0 first."""

    def __init__(self, name, inp: Channel, out: Channel, factor: int, domain=0, tracer=None):
        self.name, self.inp, self.out, self.factor, self.domain = name, inp, out, factor, domain
        self.tracer = tracer or Tracer(False)
        self.holding = None
        self.phase = 0

    def step(self, now=0) -> bool:
        progress = False
        if self.holding is not None:
            n = len(self.holding) // self.factor
            part = self.holding[self.phase * n:(self.phase + 1) * n]
            if self._try_push(self.out, part):
                progress = True
                self.phase += 1
                if self.phase == self.factor:
                    self.holding, self.phase = None, 0
        if self.holding is None:
            if self.inp.empty:
                self._note_empty(self.inp)
            else:
                self.holding = self._pop(self.inp)
                progress = True
        return progress

    def done(self) -> bool:
        return self.holding is None


class PackerState(_Unit):
    """Collects ``factor`` narrow words and emits their concatenation."""

    def __init__(self, name, inp: Channel, out: Channel, factor: int, domain=0, tracer=None):
        self.name, self.inp, self.out, self.factor, self.domain = name, inp, out, factor, domain
        self.tracer = tracer or Tracer(False)
        self.parts: list = []

    def step(self, now=0) -> bool:
        progress = False
        if len(self.parts) == self.factor:
            word = [v for p in self.parts for v in p]
            if self._try_push(self.out, word):
                self.parts = []
                progress = True
        if len(self.parts) < self.factor:
            if self.inp.empty:
                self._note_empty(self.inp)
            else:
                self.parts.append(self._pop(self.inp))
                progress = True
        return progress

    def done(self) -> bool:
        return not self.parts


class SynchronizerState(_Unit):
    """Dual-clock FIFO. A word accepted on a source tick is forwarded on the
    ``latency``-th destination tick after acceptance (or later if the output
    channel is full)."""

    def __init__(self, name, inp: Channel, out: Channel, depth: int, latency: int,
                 src_period: int, dst_period: int, src_domain=0, dst_domain=1, tracer=None):
        self.name, self.inp, self.out = name, inp, out
        self.depth, self.latency = depth, latency
        self.src_period, self.dst_period = src_period, dst_period
        self.src_domain, self.dst_domain = src_domain, dst_domain
        self.domain = dst_domain
        self.tracer = tracer or Tracer(False)
        self.fifo: deque = deque()  # (visible_time, word)

    def step_dst(self, now: int) -> bool:
        self.domain = self.dst_domain
        self.tick_index = now // self.dst_period
        if self.fifo and self.fifo[0][0] <= now:
            if self._try_push(self.out, self.fifo[0][1]):
                self.fifo.popleft()
                return True
        return False

    def step_src(self, now: int) -> bool:
        self.domain = self.src_domain
        self.tick_index = now // self.src_period
        if len(self.fifo) >= self.depth:
            return False
        if self.inp.empty:
            self._note_empty(self.inp)
            return False
        word = self._pop(self.inp)
        visible = (now // self.dst_period + self.latency) * self.dst_period
        self.fifo.append((visible, word))
        return True

    def step(self, now: int, src_tick: bool = True, dst_tick: bool = True) -> bool:
        progress = False
        if dst_tick:
            progress |= self.step_dst(now)
        if src_tick:
            progress |= self.step_src(now)
        return progress

    def done(self) -> bool:
        return not self.fifo


def step_issuer(state: IssuerState, tick: int = 0) -> IssuerState:
    state.tick_index = tick
    state.step(tick)
    return state


def step_packer(state: PackerState, tick: int = 0) -> PackerState:
    state.tick_index = tick
    state.step(tick)
    return state


def step_synchronizer(state: SynchronizerState, tick: int, src_tick: bool = True, dst_tick: bool = True):
    """Advance a synchronizer at base time ``tick``; flags select which side ticks."""
    state.step(tick, src_tick, dst_tick)
    return state


# ---------------------------------------------------------------------------
# memory-side units


class _Memory:
    """Container arrays plus completion tracking of their producers."""

    def __init__(self, arrays: dict[str, np.ndarray], producers: dict[str, set]):
        self.arrays = arrays
        self.producers = producers
        self.finished: set = set()

    def ready(self, name: str, me) -> bool:
        return all(p in self.finished or p is me for p in self.producers.get(name, ()))


def _sequence(memlet, ranges, symbols):
    seq = []
    for env in iterate(ranges, symbols):
        if memlet.active(env):
            seq.extend(memlet.elements(env))
    return seq


class ReaderState(_Unit):
    def __init__(self, name, container, memlet, ranges, symbols, lanes, out: Channel, memory: _Memory, tracer):
        self.name, self.container, self.out, self.memory, self.tracer = name, container, out, memory, tracer
        seq = _sequence(memlet, ranges, symbols)
        if len(seq) % lanes:
            raise ValidationError(f"{len(seq)} elements not divisible into {lanes}-lane words", name)
        self.words = [seq[k:k + lanes] for k in range(0, len(seq), lanes)]
        self.ptr = 0

    def step(self, now) -> bool:
        if self.ptr >= len(self.words) or not self.memory.ready(self.container, self):
            return False
        arr = self.memory.arrays[self.container]
        word = [arr[idx] for idx in self.words[self.ptr]]
        if self._try_push(self.out, word):
            self.ptr += 1
            return True
        return False

    def done(self) -> bool:
        return self.ptr >= len(self.words)


class WriterState(_Unit):
    def __init__(self, name, container, memlet, ranges, symbols, lanes, inp: Channel, memory: _Memory, tracer, commits):
        self.name, self.container, self.inp, self.memory, self.tracer = name, container, inp, memory, tracer
        seq = _sequence(memlet, ranges, symbols)
        if len(seq) % lanes:
            raise ValidationError(f"{len(seq)} elements not divisible into {lanes}-lane words", name)
        self.words = [seq[k:k + lanes] for k in range(0, len(seq), lanes)]
        self.ptr = 0
        self.commits = commits

    def step(self, now) -> bool:
        if self.ptr >= len(self.words):
            return False
        if self.inp.empty:
            self._note_empty(self.inp)
            return False
        word = self._pop(self.inp)
        arr = self.memory.arrays[self.container]
        for idx, v in zip(self.words[self.ptr], word):
            arr[idx] = v
        self.ptr += 1
        self.commits.append((now, len(word)))
        if self.ptr == len(self.words):
            self.memory.finished.add(self)
        return True

    def done(self) -> bool:
        return self.ptr >= len(self.words)


class MapState(_Unit):
    """Compute map with initiation interval 1 and a fixed pipeline latency."""

    def __init__(self, graph: Graph, map_id: int, ins: dict, outs: dict, memory: _Memory, tracer, commits):
        self.kernel = MapKernel(graph, map_id)
        node = graph.nodes[map_id]
        self.name, self.memory, self.tracer, self.commits = node.name, memory, tracer, commits
        self.latency = max(int(node.latency), 0)
        self.capacity = max(self.latency, 1)
        self.ins, self.outs = ins, outs  # connector -> Channel or container name
        self.iters = list(self.kernel.iterations())
        self.ptr = 0
        self.pipe: deque = deque()  # (ready_tick, iteration, outputs)
        self.mem_inputs = sorted({v for v in ins.values() if isinstance(v, str)})
        self.tick = 0

    def step(self, now) -> bool:
        progress = False
        self.tick += 1
        if self.pipe and self.pipe[0][0] <= self.tick:
            _, it, outs = self.pipe[0]
            chans = [self.outs[c] for c in outs if not isinstance(self.outs[c], str)]
            blocked = [ch for ch in chans if ch.full]
            if blocked:
                for ch in blocked:
                    ch.stall_full += 1
                    self.tracer.log(self.tick_index, self.domain, self.name, ch.name, "stall_full")
            else:
                self.pipe.popleft()
                for conn, word in outs.items():
                    target = self.outs[conn]
                    if isinstance(target, str):
                        c = next(o for o in self.kernel.outputs if o.name == conn)
                        arr = self.memory.arrays[target]
                        for idx, v in zip(c.memlet.elements(it), word):
                            arr[idx] = v
                        self.commits.append((now, len(word)))
                    else:
                        self._try_push(target, word)
                progress = True
        if self.ptr < len(self.iters) and len(self.pipe) < self.capacity:
            if all(self.memory.ready(c, self) for c in self.mem_inputs):
                it = self.iters[self.ptr]
                active = self.kernel.active_inputs(it)
                empty = [self.ins[c.name] for c in active
                         if not isinstance(self.ins[c.name], str) and self.ins[c.name].empty]
                if empty:
                    for ch in empty:
                        self._note_empty(ch)
                else:
                    words = {}
                    for c in active:
                        src = self.ins[c.name]
                        if isinstance(src, str):
                            arr = self.memory.arrays[src]
                            words[c.name] = [arr[idx] for idx in c.memlet.elements(it)]
                        else:
                            words[c.name] = self._pop(src)
                    outs = self.kernel.run(it, words, self.memory.arrays)
                    self.pipe.append((self.tick + self.latency, it, outs))
                    self.ptr += 1
                    progress = True
        if self.done():
            self.memory.finished.add(self)
        return progress

    def done(self) -> bool:
        return self.ptr >= len(self.iters) and not self.pipe


# ---------------------------------------------------------------------------
# report


def _frac(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


@dataclass
class SimReport:
    outputs: dict
    slow_cycles: int
    fast_cycles: int
    elements_out: int
    elements_out_per_slow_cycle: Fraction
    effective_clock_mhz: Fraction
    element_rate_mhz: Fraction
    clk0_mhz: Fraction
    clk1_mhz: Fraction
    M: int
    channels: dict = field(default_factory=dict)
    trace: list | None = None

    def to_dict(self) -> dict:
        return {
            "outputs": {k: np.asarray(v).tolist() for k, v in sorted(self.outputs.items())},
            "slow_cycles": self.slow_cycles,
            "fast_cycles": self.fast_cycles,
            "elements_out": self.elements_out,
            "elements_out_per_slow_cycle": _frac(self.elements_out_per_slow_cycle),
            "effective_clock_mhz": _frac(self.effective_clock_mhz),
            "element_rate_mhz": _frac(self.element_rate_mhz),
            "clk0_mhz": _frac(self.clk0_mhz),
            "clk1_mhz": _frac(self.clk1_mhz),
            "M": self.M,
            "channels": self.channels,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def export_trace(report: SimReport, path) -> None:
    if report.trace is None:
        raise TraceNotEnabled("simulate was run without trace enabled")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tick", "domain", "node", "port", "event", "payload_hash"])
        w.writerows(report.trace)


# ---------------------------------------------------------------------------
# simulate


def _time_base(freqs: dict[int, Fraction]) -> dict[int, int]:
    """Integer tick period per domain on a common exact time base."""
    den = math.lcm(*(f.denominator for f in freqs.values()))
    scaled = {d: int(f * den) for d, f in freqs.items()}
    base = math.lcm(*scaled.values())
    return {d: base // s for d, s in scaled.items()}


def _prepare_memory(graph: Graph, inputs: dict) -> dict[str, np.ndarray]:
    arrays = {}
    for nid in graph.top_level():
        node = graph.nodes[nid]
        if isinstance(node, Container):
            shape = graph.shape_of(node)
            if node.name in inputs:
                arr = np.array(inputs[node.name], dtype=NP_TYPES[node.dtype])
                if arr.shape != shape:
                    raise ValidationError(f"input shape {arr.shape} != {shape}", node.name)
            else:
                arr = np.zeros(shape, dtype=NP_TYPES[node.dtype])
            arrays[node.name] = arr
    return arrays


def _written_containers(graph: Graph) -> set[int]:
    return {e.dst for e in graph.edges if isinstance(graph.nodes[e.dst], Container)
            and e.dst in set(graph.top_level())}


def _outputs(graph: Graph, arrays) -> dict:
    out = {}
    for c in sorted(_written_containers(graph)):
        node = graph.nodes[c]
        if node.location == "external":
            out[node.name] = arrays[node.name].copy()
    return out


def reference_execute(graph: Graph, inputs: dict) -> dict:
    """Sequential interpretation of every map in dependency order."""
    problems = validate(graph)
    if problems:
        raise ValidationError("; ".join(f"{v.rule}@{v.where}" for v in problems), "graph")
    if any(e.kind == "stream" for e in graph.edges):
        raise ValidationError("reference_execute needs a graph without streams", "graph")
    arrays = _prepare_memory(graph, inputs)
    for nid in graph.topological_order():
        if not isinstance(graph.nodes[nid], MapScope):
            continue
        k = MapKernel(graph, nid)
        srcs = {e.dst_conn: graph.nodes[e.src].name for e in graph.in_edges(nid)}
        dsts = {e.src_conn: graph.nodes[e.dst].name for e in graph.out_edges(nid)}
        for it in k.iterations():
            words = {}
            for c in k.active_inputs(it):
                arr = arrays[srcs[c.name]]
                words[c.name] = [arr[idx] for idx in c.memlet.elements(it)]
            outs = k.run(it, words, arrays)
            for c in k.active_outputs(it):
                arr = arrays[dsts[c.name]]
                for idx, v in zip(c.memlet.elements(it), outs[c.name]):
                    arr[idx] = v
    return _outputs(graph, arrays)


def _steady_rate(commits, total: int, slow_period: int) -> Fraction:
    if not commits or total == 0:
        return Fraction(0)
    lo, hi = total / 10, total * 9 / 10
    cum, t_lo, c_lo, t_hi, c_hi = 0, None, 0, None, 0
    for t, n in commits:
        cum += n
        if t_lo is None and cum >= lo:
            t_lo, c_lo = t, cum
        if t_hi is None and cum >= hi:
            t_hi, c_hi = t, cum
    if t_hi is None or t_hi == t_lo:
        end = commits[-1][0]
        return Fraction(total * slow_period, max(end, slow_period))
    return Fraction((c_hi - c_lo) * slow_period, t_hi - t_lo)


def simulate(graph: Graph, inputs: dict, clock: ClockConfig | None = None, limits: Limits | None = None) -> SimReport:
    """Run the graph cycle by cycle and report outputs, cycle counts and stalls."""
    limits = limits or Limits()
    problems = validate(graph)
    if problems:
        raise ValidationError("; ".join(f"{v.rule}@{v.where}" for v in problems), "graph")
    slow = graph.default_domain
    fast_ids = [d for d in graph.clock_domains if d != slow]
    M = graph.clock_domains[fast_ids[0]].factor if fast_ids else 1
    if clock is None:
        clk0 = graph.clock_domains[slow].frequency_mhz
        clk1 = graph.clock_domains[fast_ids[0]].frequency_mhz if fast_ids else clk0 * M
        clock = ClockConfig(clk0, clk1, M)
    freqs = {slow: clock.clk0_mhz}
    for d in fast_ids:
        freqs[d] = clock.clk1_mhz
    periods = _time_base(freqs)
    tracer = Tracer(limits.trace)

    arrays = _prepare_memory(graph, inputs)
    commits: list = []
    channels: dict[int, Channel] = {}
    for nid in graph.of_type(StreamNode):
        s = graph.nodes[nid]
        channels[nid] = Channel(f"{nid}:{s.name}", s.depth, s.lanes)

    def chan_in(nid):
        (e,) = [e for e in graph.in_edges(nid) if e.kind == "stream"]
        return channels[e.src]

    def chan_out(nid):
        (e,) = [e for e in graph.out_edges(nid) if e.kind == "stream"]
        return channels[e.dst]

    producers: dict[str, set] = {}
    units: dict[int, _Unit] = {}
    memory = _Memory(arrays, producers)
    symbols = graph.symbols
    for nid in graph.topological_order():
        node = graph.nodes[nid]
        dom = graph.node_domain[nid]
        if isinstance(node, Reader):
            (me,) = [e for e in graph.in_edges(nid) if e.kind == "memlet"]
            u = ReaderState(node.name, graph.nodes[node.container].name, me.memlet, node.params, symbols,
                            node.lanes, chan_out(nid), memory, tracer)
        elif isinstance(node, Writer):
            (me,) = [e for e in graph.out_edges(nid) if e.kind == "memlet"]
            u = WriterState(node.name, graph.nodes[node.container].name, me.memlet, node.params, symbols,
                            node.lanes, chan_in(nid), memory, tracer, commits)
            producers.setdefault(graph.nodes[node.container].name, set()).add(u)
        elif isinstance(node, MapScope):
            ins = {e.dst_conn: channels[e.src] if e.kind == "stream" else graph.nodes[e.src].name
                   for e in graph.in_edges(nid)}
            outs = {e.src_conn: channels[e.dst] if e.kind == "stream" else graph.nodes[e.dst].name
                    for e in graph.out_edges(nid)}
            u = MapState(graph, nid, ins, outs, memory, tracer, commits)
            for target in outs.values():
                if isinstance(target, str):
                    producers.setdefault(target, set()).add(u)
        elif isinstance(node, Issuer):
            u = IssuerState(node.name, chan_in(nid), chan_out(nid), node.factor, dom, tracer)
        elif isinstance(node, Packer):
            u = PackerState(node.name, chan_in(nid), chan_out(nid), node.factor, dom, tracer)
        elif isinstance(node, Synchronizer):
            u = SynchronizerState(node.name, chan_in(nid), chan_out(nid), node.depth, node.latency,
                                  periods[node.src_domain], periods[node.dst_domain],
                                  node.src_domain, node.dst_domain, tracer)
        else:
            continue
        u.domain = dom
        units[nid] = u

    order = list(reversed([n for n in graph.topological_order() if n in units]))
    now, idle = 0, 0
    period_list = sorted(set(periods.values()))
    while not all(u.done() for u in units.values()) or any(c.queue for c in channels.values()):
        progress = False
        for nid in order:
            u = units[nid]
            if isinstance(u, SynchronizerState):
                src = now % periods[u.src_domain] == 0
                dst = now % periods[u.dst_domain] == 0
                if src or dst:
                    progress |= u.step(now, src, dst)
            elif now % periods[u.domain] == 0:
                if isinstance(u, (ReaderState, WriterState, MapState)) and u.done():
                    continue
                u.tick_index = now // periods[u.domain]
                progress |= u.step(now)
        idle = 0 if progress else idle + 1
        if idle > limits.watchdog:
            snap = {c.name: len(c.queue) for c in channels.values()}
            raise DeadlockError(f"no progress for {limits.watchdog} events at time {now}", snap)
        now = min(((now // p) + 1) * p for p in period_list)
        if now // periods[slow] > limits.max_ticks:
            raise BudgetExceeded(f"exceeded {limits.max_ticks} slow ticks")

    end = commits[-1][0] if commits else 0
    slow_p = periods[slow]
    fast_p = periods[fast_ids[0]] if fast_ids else slow_p
    slow_cycles = end // slow_p + 1 if commits else 0
    fast_cycles = end // fast_p + 1 if commits else 0
    total = sum(n for _, n in commits)
    rate = _steady_rate(commits, total, slow_p)
    return SimReport(
        outputs=_outputs(graph, arrays),
        slow_cycles=slow_cycles,
        fast_cycles=fast_cycles,
        elements_out=total,
        elements_out_per_slow_cycle=rate,
        effective_clock_mhz=effective_clock(clock.clk0_mhz, clock.clk1_mhz, M),
        element_rate_mhz=rate * clock.clk0_mhz,
        clk0_mhz=clock.clk0_mhz,
        clk1_mhz=clock.clk1_mhz,
        M=M,
        channels={c.name: c.stats() for c in channels.values()},
        trace=list(tracer.rows) if limits.trace else None,
    )
