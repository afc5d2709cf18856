"""Arithmetic and comparison expressions over place markings and automaton variables.

One small grammar serves rate expressions, location invariants, edge guards,
updates, flows and the ``y`` part of HASL path formulas::

    cond  ::= 'true' | cmp ('&&' cmp)*
    cmp   ::= arith op arith          op in  = == < <= > >=
    arith ::= term (('+' | '-') term)*
    term  ::= unary (('*' | '/') unary)*
    unary ::= '-' unary | atom
    atom  ::= NUMBER | NAME | '(' arith ')'

Names are resolved late, against whatever environment the expression is
evaluated in, so the same tree can mention places and variables.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union


class ExpressionError(ValueError):
    """Raised on malformed expression text; ``pos`` is the character offset."""

    def __init__(self, message: str, text: str = "", pos: int = 0):
        self.text = text
        self.pos = pos
        if text:
            message = f"{message} at position {pos} in {text!r}"
        super().__init__(message)


class NonLinearError(ValueError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self) -> str:
        v = self.value
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)


@dataclass(frozen=True)
class Name:
    id: str

    def __str__(self) -> str:
        return self.id


@dataclass(frozen=True)
class Neg:
    operand: "Node"

    def __str__(self) -> str:
        return f"-({self.operand})"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"

    def __str__(self) -> str:
        return f"({self.left} {self.op} {self.right})"


Node = Union[Num, Name, Neg, Bin]

COMPARISONS = ("=", "<", ">", "<=", ">=")


@dataclass(frozen=True)
class Cmp:
    op: str  # one of COMPARISONS
    left: Node
    right: Node

    def __str__(self) -> str:
        return f"{_strip(self.left)} {self.op} {_strip(self.right)}"


def _strip(node: Node) -> str:
    s = str(node)
    if isinstance(node, Bin) and s.startswith("(") and s.endswith(")"):
        return s[1:-1]
    return s


def to_text(node: Node) -> str:
    return _strip(node)


def condition_text(atoms: Sequence[Cmp]) -> str:
    if not atoms:
        return "true"
    return " && ".join(str(a) for a in atoms)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<op><=|>=|==|&&|[-+*/()<>=&,\[\]]|≤|≥|∧|⊤)
    """,
    re.VERBOSE,
)

_ALIASES = {"≤": "<=", "≥": ">=", "==": "=", "∧": "&&", "&": "&&", "⊤": "true"}


def tokenize(text: str) -> list[tuple[str, str, int]]:
    """Split ``text`` into (kind, value, position) triples ending with an 'end' token."""
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExpressionError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        value = m.group(kind)
        if kind == "op":
            value = _ALIASES.get(value, value)
            if value == "true":
                kind = "name"
        elif kind == "name" and value == "and":
            kind, value = "op", "&&"
        if kind != "ws":
            out.append((kind, value, pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class Parser:
    """Recursive-descent parser over a token list; other grammars reuse it."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def error(self, message: str) -> ExpressionError:
        return ExpressionError(message, self.text, self.tok[2])

    def accept(self, value: str) -> bool:
        kind, v, _ = self.tok
        if kind in ("op", "name") and v == value:
            self.i += 1
            return True
        return False

    def expect(self, value: str) -> None:
        if not self.accept(value):
            got = self.tok[1] or "end of input"
            raise self.error(f"expected {value!r}, got {got!r}")

    def done(self) -> None:
        if self.tok[0] != "end":
            raise self.error(f"unexpected {self.tok[1]!r}")

    def arith(self) -> Node:
        node = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op = self.tok[1]
            self.i += 1
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok[0] == "op" and self.tok[1] in ("*", "/"):
            op = self.tok[1]
            self.i += 1
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.accept("-"):
            inner = self.unary()
            if isinstance(inner, Num):
                return Num(-inner.value)
            return Neg(inner)
        if self.accept("+"):
            return self.unary()
        return self.atom()

    def atom(self) -> Node:
        kind, value, _ = self.tok
        if kind == "num":
            self.i += 1
            return Num(float(value))
        if kind == "name" and value != "true":
            self.i += 1
            return Name(value)
        if self.accept("("):
            node = self.arith()
            self.expect(")")
            return node
        raise self.error(f"unexpected {value or 'end of input'!r}")

    def comparison(self) -> Cmp:
        left = self.arith()
        kind, value, _ = self.tok
        if kind != "op" or value not in COMPARISONS:
            raise self.error("expected a comparison operator")
        self.i += 1
        return Cmp(value, left, self.arith())

    def condition(self) -> list[Cmp]:
        if self.accept("true"):
            return []
        atoms = [self.comparison()]
        while self.accept("&&"):
            if self.accept("true"):
                continue
            atoms.append(self.comparison())
        return atoms


def parse(text: str) -> Node:
    """Parse an arithmetic expression."""
    p = Parser(str(text))
    node = p.arith()
    p.done()
    return node


def parse_condition(text: str) -> list[Cmp]:
    """Parse a conjunction of comparisons; ``"true"`` or empty text give ``[]``."""
    text = str(text).strip()
    if not text:
        return []
    p = Parser(text)
    atoms = p.condition()
    p.done()
    return atoms


def as_node(value: Union[str, float, int, Node]) -> Node:
    if isinstance(value, (Num, Name, Neg, Bin)):
        return value
    if isinstance(value, (int, float)):
        return Num(float(value))
    return parse(value)


# ---------------------------------------------------------------------------
# Inspection and evaluation


def names(node: Union[Node, Cmp, Iterable[Cmp]]) -> set[str]:
    if isinstance(node, Name):
        return {node.id}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return names(node.operand)
    if isinstance(node, (Bin, Cmp)):
        return names(node.left) | names(node.right)
    out: set[str] = set()
    for atom in node:
        out |= names(atom)
    return out


def evaluate(node: Node, env: Mapping[str, float]) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Name):
        return float(env[node.id])
    if isinstance(node, Neg):
        return -evaluate(node.operand, env)
    a = evaluate(node.left, env)
    b = evaluate(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    return a / b if b != 0 else math.nan


def compare(op: str, a: float, b: float) -> bool:
    if op == "=":
        return a == b
    if op == "<":
        return a < b
    if op == ">":
        return a > b
    if op == "<=":
        return a <= b
    return a >= b


def holds_all(atoms: Sequence[Cmp], env: Mapping[str, float]) -> bool:
    return all(compare(a.op, evaluate(a.left, env), evaluate(a.right, env)) for a in atoms)


Getter = Callable[[Sequence[float], Sequence[float]], float]


def compile_node(node: Node, places: Mapping[str, int], variables: Mapping[str, int]) -> Getter:
    """Close over ``node`` as ``f(marking, valuation) -> float``.

    Places shadow nothing: a name must be either a place or a variable.
    """
    if isinstance(node, Num):
        v = node.value
        return lambda m, x: v
    if isinstance(node, Name):
        if node.id in variables:
            k = variables[node.id]
            return lambda m, x: x[k]
        if node.id in places:
            k = places[node.id]
            return lambda m, x: float(m[k])
        raise KeyError(node.id)
    if isinstance(node, Neg):
        f = compile_node(node.operand, places, variables)
        return lambda m, x: -f(m, x)
    f = compile_node(node.left, places, variables)
    g = compile_node(node.right, places, variables)
    if node.op == "+":
        return lambda m, x: f(m, x) + g(m, x)
    if node.op == "-":
        return lambda m, x: f(m, x) - g(m, x)
    if node.op == "*":
        return lambda m, x: f(m, x) * g(m, x)
    def div(m, x):
        b = g(m, x)
        return f(m, x) / b if b != 0 else math.nan

    return div


# ---------------------------------------------------------------------------
# Polynomial normal form, used by the determinism checker and linearisation

Monomial = tuple  # sorted tuple of symbol names; () is the constant term
Poly = dict


def polynomial(node: Node) -> Poly | None:
    """Expand ``node`` into {monomial: coefficient}, or None if it divides by a symbol."""
    if isinstance(node, Num):
        return {(): node.value} if node.value != 0 else {}
    if isinstance(node, Name):
        return {(node.id,): 1.0}
    if isinstance(node, Neg):
        p = polynomial(node.operand)
        return None if p is None else {k: -v for k, v in p.items()}
    a = polynomial(node.left)
    b = polynomial(node.right)
    if a is None or b is None:
        return None
    if node.op in "+-":
        sign = 1.0 if node.op == "+" else -1.0
        out = dict(a)
        for k, v in b.items():
            out[k] = out.get(k, 0.0) + sign * v
        return {k: v for k, v in out.items() if v != 0}
    if node.op == "*":
        out = {}
        for ka, va in a.items():
            for kb, vb in b.items():
                k = tuple(sorted(ka + kb))
                out[k] = out.get(k, 0.0) + va * vb
        return {k: v for k, v in out.items() if v != 0}
    # division: only by a nonzero numeric constant
    if set(b) <= {()} and b.get((), 0.0) != 0:
        d = b[()]
        return {k: v / d for k, v in a.items()}
    return None


def linear_form(node: Node, variables: Iterable[str]) -> tuple[dict[str, Node], Node]:
    """Split ``node`` as sum_i coef_i * x_i + rest with coefficients free of variables.

    Raises NonLinearError when a variable appears non-linearly (products of
    variables, or a variable in a denominator).
    """
    variables = set(variables)
    coefs, rest = _linear(node, variables)
    return coefs, rest


def _linear(node: Node, vs: set[str]) -> tuple[dict[str, Node], Node]:
    if isinstance(node, Num):
        return {}, node
    if isinstance(node, Name):
        if node.id in vs:
            return {node.id: Num(1.0)}, Num(0.0)
        return {}, node
    if isinstance(node, Neg):
        c, r = _linear(node.operand, vs)
        return {k: _neg(v) for k, v in c.items()}, _neg(r)
    if node.op in "+-":
        ca, ra = _linear(node.left, vs)
        cb, rb = _linear(node.right, vs)
        out = dict(ca)
        for k, v in cb.items():
            v = v if node.op == "+" else _neg(v)
            out[k] = _add(out[k], v) if k in out else v
        rest = _add(ra, rb) if node.op == "+" else _sub(ra, rb)
        return out, rest
    if node.op == "*":
        ca, ra = _linear(node.left, vs)
        cb, rb = _linear(node.right, vs)
        if ca and cb:
            raise NonLinearError(f"product of variables in {to_text(node)!r}")
        if ca:
            return {k: _mul(v, rb) for k, v in ca.items()}, _mul(ra, rb)
        if cb:
            return {k: _mul(ra, v) for k, v in cb.items()}, _mul(ra, rb)
        return {}, _mul(ra, rb)
    ca, ra = _linear(node.left, vs)
    cb, rb = _linear(node.right, vs)
    if cb:
        raise NonLinearError(f"variable in denominator of {to_text(node)!r}")
    return {k: Bin("/", v, rb) for k, v in ca.items()}, Bin("/", ra, rb)


def _neg(a: Node) -> Node:
    if isinstance(a, Num):
        return Num(-a.value)
    return Neg(a)


def _add(a: Node, b: Node) -> Node:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if isinstance(a, Num) and a.value == 0:
        return b
    if isinstance(b, Num) and b.value == 0:
        return a
    return Bin("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if isinstance(b, Num) and b.value == 0:
        return a
    return Bin("-", a, b)


def _mul(a: Node, b: Node) -> Node:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if isinstance(a, Num) and a.value == 1:
        return b
    if isinstance(b, Num) and b.value == 1:
        return a
    return Bin("*", a, b)


def is_constant(node: Node) -> bool:
    return not names(node)


def constant_value(node: Node) -> float:
    return evaluate(node, {})


def finite(value: float) -> bool:
    return not (math.isnan(value) or math.isinf(value))
