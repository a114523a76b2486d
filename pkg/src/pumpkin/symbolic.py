"""Affine index expressions, memlets and access-sequence analysis.

Memlets are written as strings such as ``x[2*i : 2*i + 2]`` or
``dist[i, j] if k == 0``. A subset dimension is either a single affine index
or a half-open ``begin : end (: stride)`` slice. The optional ``if`` clause is
a conjunction of affine guards over map parameters; a guarded memlet moves
data only on iterations where every guard holds.
"""
from __future__ import annotations

import ast
import itertools
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from .errors import NonAffine, SequenceTooLong, UnboundSymbol

DEFAULT_SEQUENCE_CAP = 2 ** 20


@dataclass(frozen=True)
class AffineExpr:
    """Integer-linear combination of symbols plus a constant."""

    coeffs: tuple[tuple[str, int], ...] = ()
    constant: int = 0

    @staticmethod
    def make(coeffs: Mapping[str, int] | None = None, constant: int = 0) -> "AffineExpr":
        items = tuple(sorted((k, int(v)) for k, v in (coeffs or {}).items() if v != 0))
        return AffineExpr(items, int(constant))

    @staticmethod
    def const(value: int) -> "AffineExpr":
        return AffineExpr((), int(value))

    @staticmethod
    def sym(name: str) -> "AffineExpr":
        return AffineExpr(((name, 1),), 0)

    @property
    def coeff_map(self) -> dict[str, int]:
        return dict(self.coeffs)

    @property
    def symbols(self) -> set[str]:
        return {k for k, _ in self.coeffs}

    def coeff(self, name: str) -> int:
        return self.coeff_map.get(name, 0)

    def is_const(self) -> bool:
        return not self.coeffs

    def __add__(self, other) -> "AffineExpr":
        other = _lift(other)
        merged = self.coeff_map
        for k, v in other.coeffs:
            merged[k] = merged.get(k, 0) + v
        return AffineExpr.make(merged, self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self) -> "AffineExpr":
        return AffineExpr.make({k: -v for k, v in self.coeffs}, -self.constant)

    def __sub__(self, other) -> "AffineExpr":
        return self + (-_lift(other))

    def __rsub__(self, other) -> "AffineExpr":
        return _lift(other) - self

    def __mul__(self, k: int) -> "AffineExpr":
        if isinstance(k, AffineExpr):
            if k.is_const():
                k = k.constant
            elif self.is_const():
                return k * self.constant
            else:
                raise NonAffine(f"product of non-constant terms ({self}) * ({k})")
        return AffineExpr.make({n: v * k for n, v in self.coeffs}, self.constant * k)

    __rmul__ = __mul__

    def substitute(self, binding: Mapping[str, "int | AffineExpr"]) -> "AffineExpr":
        out = AffineExpr.const(self.constant)
        for name, c in self.coeffs:
            out = out + (_lift(binding[name]) * c if name in binding else AffineExpr.sym(name) * c)
        return out

    def __str__(self) -> str:
        parts: list[str] = []
        for name, c in self.coeffs:
            mag = abs(c)
            term = name if mag == 1 else f"{mag}*{name}"
            if not parts:
                parts.append(term if c > 0 else f"-{term}")
            else:
                parts.append(("+ " if c > 0 else "- ") + term)
        if self.constant or not parts:
            if not parts:
                parts.append(str(self.constant))
            else:
                parts.append(("+ " if self.constant > 0 else "- ") + str(abs(self.constant)))
        return " ".join(parts)


def _lift(value) -> AffineExpr:
    if isinstance(value, AffineExpr):
        return value
    if isinstance(value, bool) or not isinstance(value, int):
        raise NonAffine(f"not an integer: {value!r}")
    return AffineExpr.const(value)


def eval_affine(expr: AffineExpr, binding: Mapping[str, int]) -> int:
    total = expr.constant
    for name, c in expr.coeffs:
        if name not in binding:
            raise UnboundSymbol(name)
        total += c * binding[name]
    return total


def _convert(node: ast.AST) -> AffineExpr:
    if isinstance(node, ast.Expression):
        return _convert(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, int) and not isinstance(node.value, bool):
        return AffineExpr.const(node.value)
    if isinstance(node, ast.Name):
        return AffineExpr.sym(node.id)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _convert(node.operand)
        return -inner if isinstance(node.op, ast.USub) else inner
    if isinstance(node, ast.BinOp):
        lhs, rhs = _convert(node.left), _convert(node.right)
        if isinstance(node.op, ast.Add):
            return lhs + rhs
        if isinstance(node.op, ast.Sub):
            return lhs - rhs
        if isinstance(node.op, ast.Mult):
            return lhs * rhs
    raise NonAffine(f"unsupported construct {ast.dump(node)}")


def parse_affine(text: "str | int | AffineExpr") -> AffineExpr:
    if isinstance(text, AffineExpr):
        return text
    if isinstance(text, int):
        return AffineExpr.const(text)
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise NonAffine(f"cannot parse {text!r}") from exc
    return _convert(tree)


@dataclass(frozen=True)
class Range:
    """Map parameter range ``begin:end:stride`` (end exclusive)."""

    param: str
    begin: AffineExpr
    end: AffineExpr
    stride: int = 1

    @staticmethod
    def parse(param: str, text: str) -> "Range":
        pieces = [p.strip() for p in text.split(":")]
        if len(pieces) not in (2, 3):
            raise NonAffine(f"bad range {text!r}")
        stride = int(pieces[2]) if len(pieces) == 3 else 1
        if stride <= 0:
            raise NonAffine(f"range stride must be positive in {text!r}")
        return Range(param, parse_affine(pieces[0]), parse_affine(pieces[1]), stride)

    def text(self) -> str:
        return f"{self.begin}:{self.end}:{self.stride}"

    def values(self, binding: Mapping[str, int]) -> range:
        return range(eval_affine(self.begin, binding), eval_affine(self.end, binding), self.stride)

    def __str__(self) -> str:
        return f"{self.param}={self.text()}"


@dataclass(frozen=True)
class Dim:
    begin: AffineExpr
    end: AffineExpr
    stride: int = 1

    @staticmethod
    def index(expr: AffineExpr) -> "Dim":
        return Dim(expr, expr + 1, 1)

    def is_index(self) -> bool:
        return self.stride == 1 and (self.end - self.begin) == AffineExpr.const(1)

    def count(self, binding: Mapping[str, int]) -> int:
        return len(range(eval_affine(self.begin, binding), eval_affine(self.end, binding), self.stride))

    def extent_expr(self) -> AffineExpr:
        return self.end - self.begin

    def __str__(self) -> str:
        if self.is_index():
            return str(self.begin)
        s = f"{self.begin} : {self.end}"
        return s if self.stride == 1 else f"{s} : {self.stride}"


_GUARD_OPS = ("==", ">=", "<=", ">", "<")


@dataclass(frozen=True)
class Guard:
    """Affine predicate ``expr == 0`` or ``expr >= 0``."""

    expr: AffineExpr
    op: str

    @staticmethod
    def parse(text: str) -> "Guard":
        for op in _GUARD_OPS:
            if op in text:
                lhs, rhs = text.split(op, 1)
                diff = parse_affine(lhs) - parse_affine(rhs)
                if op == "==":
                    return Guard(diff, "==")
                if op == ">=":
                    return Guard(diff, ">=")
                if op == "<=":
                    return Guard(-diff, ">=")
                if op == ">":
                    return Guard(diff - 1, ">=")
                return Guard(-diff - 1, ">=")
        raise NonAffine(f"bad guard {text!r}")

    def holds(self, binding: Mapping[str, int]) -> bool:
        value = eval_affine(self.expr, binding)
        return value == 0 if self.op == "==" else value >= 0

    def __str__(self) -> str:
        return f"{self.expr} {self.op} 0"


@dataclass(frozen=True)
class Memlet:
    """Symbolic description of the elements an edge moves per iteration.

    ``subset`` is None when the index expressions are not affine; such memlets
    keep their source text in ``raw`` and are never streamable.
    """

    data: str
    subset: tuple[Dim, ...] | None
    guard: tuple[Guard, ...] = ()
    raw: str = field(default="", compare=False)

    @property
    def affine(self) -> bool:
        return self.subset is not None

    def volume(self, binding: Mapping[str, int] | None = None) -> int:
        """Elements moved per active iteration. Dimension extents must be constant."""
        if self.subset is None:
            raise NonAffine(self.raw)
        total = 1
        for d in self.subset:
            extent = d.extent_expr()
            if not extent.is_const():
                if binding is None:
                    raise NonAffine(f"non-constant extent in {self}")
                total *= d.count(binding)
            else:
                total *= len(range(0, extent.constant, d.stride))
        return total

    def active(self, binding: Mapping[str, int]) -> bool:
        return all(g.holds(binding) for g in self.guard)

    def elements(self, binding: Mapping[str, int]) -> list[tuple[int, ...]]:
        """Row-major element indices for one iteration."""
        if self.subset is None:
            raise NonAffine(self.raw)
        axes = [
            range(eval_affine(d.begin, binding), eval_affine(d.end, binding), d.stride)
            for d in self.subset
        ]
        return list(itertools.product(*axes))

    def with_subset(self, subset: Sequence[Dim]) -> "Memlet":
        return Memlet(self.data, tuple(subset), self.guard)

    def __str__(self) -> str:
        if self.subset is None:
            return self.raw
        s = f"{self.data}[{', '.join(str(d) for d in self.subset)}]"
        if self.guard:
            s += " if " + " and ".join(str(g) for g in self.guard)
        return s


def _split_top(text: str, sep: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return out


def parse_memlet(text: str) -> Memlet:
    """Parse the memlet string grammar. Non-affine subsets yield ``subset=None``."""
    text = text.strip()
    body, guard_text = text, ""
    if " if " in text:
        body, guard_text = text.split(" if ", 1)
    body = body.strip()
    if "[" not in body or not body.endswith("]"):
        raise NonAffine(f"bad memlet {text!r}")
    name = body[: body.index("[")].strip()
    inner = body[body.index("[") + 1 : -1]
    guards = tuple(Guard.parse(g) for g in guard_text.split(" and ")) if guard_text else ()
    try:
        dims = []
        for piece in _split_top(inner, ","):
            parts = _split_top(piece, ":")
            if len(parts) == 1:
                dims.append(Dim.index(parse_affine(parts[0])))
            elif len(parts) in (2, 3):
                stride = int(parts[2]) if len(parts) == 3 else 1
                if stride <= 0:
                    raise NonAffine(f"stride must be positive in {text!r}")
                dims.append(Dim(parse_affine(parts[0]), parse_affine(parts[1]), stride))
            else:
                raise NonAffine(f"bad dimension {piece!r}")
    except (NonAffine, ValueError):
        return Memlet(name, None, guards, raw=text)
    return Memlet(name, tuple(dims), guards, raw=text)


def iterate(ranges: Sequence[Range], binding: Mapping[str, int]) -> Iterator[dict[str, int]]:
    """Lexicographic iteration over map parameters, outermost first."""
    env = dict(binding)

    def rec(level: int):
        if level == len(ranges):
            yield dict(env)
            return
        r = ranges[level]
        for v in r.values(env):
            env[r.param] = v
            yield from rec(level + 1)
        env.pop(r.param, None)

    yield from rec(0)


def iteration_count(ranges: Sequence[Range], binding: Mapping[str, int]) -> int:
    if all(r.begin.symbols | r.end.symbols <= set(binding) for r in ranges):
        total = 1
        for r in ranges:
            total *= len(r.values(binding))
        return total
    return sum(1 for _ in iterate(ranges, binding))


def access_sequence(
    memlet: Memlet,
    ranges: Sequence[Range],
    binding: Mapping[str, int],
    cap: int = DEFAULT_SEQUENCE_CAP,
) -> list[tuple[int, ...]]:
    """Ordered element indices touched by ``memlet`` over the whole map."""
    if not memlet.affine:
        raise NonAffine(memlet.raw)
    bound = iteration_count(ranges, binding) * memlet.volume(binding)
    if bound > cap:
        raise SequenceTooLong(f"{bound} elements exceeds cap {cap}")
    seq: list[tuple[int, ...]] = []
    for env in iterate(ranges, binding):
        if memlet.active(env):
            seq.extend(memlet.elements(env))
    return seq


@dataclass(frozen=True)
class Verdict:
    streamable: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.streamable


Streamable = Verdict(True)


def NotStreamable(reason: str) -> Verdict:
    return Verdict(False, reason)


def _range_count(r: Range, binding: Mapping[str, int]) -> int | None:
    if r.begin.symbols | r.end.symbols <= set(binding):
        return len(r.values(binding))
    return None


def symbolic_compatible(
    producer: Memlet,
    consumer: Memlet,
    ranges: Sequence[Range],
    binding: Mapping[str, int],
    consumer_ranges: Sequence[Range] | None = None,
) -> bool | None:
    """Decide sequence equality without enumeration, or return None if undecidable.

    Applies when both memlets run over the same ranges, carry no guards and
    have constant per-iteration shapes: the sequences are then equal exactly
    when the per-iteration subsets agree on every iteration.
    """
    if consumer_ranges is not None and tuple(consumer_ranges) != tuple(ranges):
        return None
    if not (producer.affine and consumer.affine) or producer.guard or consumer.guard:
        return None
    if len(producer.subset) != len(consumer.subset):
        return None
    counts = {}
    for r in ranges:
        n = _range_count(r, binding)
        if n is None:
            return None
        counts[r.param] = n
    if any(n == 0 for n in counts.values()):
        return True
    fixed = {r.param: eval_affine(r.begin, binding) for r in ranges if counts[r.param] == 1}
    for pd, cd in zip(producer.subset, consumer.subset):
        if not (pd.extent_expr().is_const() and cd.extent_expr().is_const()):
            return None
        pn = len(range(0, pd.extent_expr().constant, pd.stride))
        cn = len(range(0, cd.extent_expr().constant, cd.stride))
        if pn != cn:
            return None
        if pn == 0:
            continue
        if pn > 1 and pd.stride != cd.stride:
            return False
        delta = (pd.begin - cd.begin).substitute(fixed)
        if any(counts.get(name, 0) > 1 for name in delta.symbols):
            return False
        try:
            if eval_affine(delta, binding) != 0:
                return False
        except UnboundSymbol:
            return None
    return True


def sequences_compatible(
    producer: Memlet,
    consumer: Memlet,
    ranges: Sequence[Range],
    binding: Mapping[str, int],
    consumer_ranges: Sequence[Range] | None = None,
    cap: int = DEFAULT_SEQUENCE_CAP,
    method: str = "auto",
) -> Verdict:
    """Check whether a producer's write order equals a consumer's read order.

    ``method`` is "auto" (symbolic fast path, enumeration fallback),
    "enumerate" or "symbolic" (raises if undecidable).
    """
    if not (producer.affine and consumer.affine):
        return NotStreamable("NonAffine")
    if producer.data != consumer.data:
        return NotStreamable("ContainerMismatch")
    if method in ("auto", "symbolic"):
        if producer == consumer and (consumer_ranges is None or tuple(consumer_ranges) == tuple(ranges)):
            return Streamable
        fast = symbolic_compatible(producer, consumer, ranges, binding, consumer_ranges)
        if fast is True:
            return Streamable
        if method == "symbolic":
            if fast is None:
                raise NonAffine("symbolic comparison not applicable")
            return NotStreamable("Mismatch")
    writes = access_sequence(producer, ranges, binding, cap)
    reads = access_sequence(consumer, consumer_ranges or ranges, binding, cap)
    if writes == reads:
        return Streamable
    if sorted(writes) == sorted(reads):
        return NotStreamable("OrderMismatch")
    return NotStreamable("SetMismatch")
