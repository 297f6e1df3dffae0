"""Expression DAG: construction, parsing, printing, differentiation, evaluation.

Nodes are hash-consed, so structurally equal expressions are the same object.
That gives common-subexpression sharing for free, which matters for Lie
derivatives whose trees otherwise grow exponentially with the order.
"""
from __future__ import annotations

import math
import re
import weakref
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import interval as ia
from .interval import IA

FUNCTIONS = ("sin", "cos", "tan", "atan", "exp", "mod2pi", "sqrt", "abs")
VAR_KINDS = ("x", "u", "w")


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{msg} (line {line}, column {col})" if line else msg)
        self.line = line
        self.col = col


class Expr:
    """Immutable, interned expression node.

    ``op`` is one of ``const x u w neg add sub mul div pow call``.  ``value``
    holds the constant, the variable index, the integer exponent or the
    function name depending on ``op``.
    """

    __slots__ = ("op", "args", "value", "__weakref__")
    _table: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()

    def __new__(cls, op: str, args: tuple = (), value=None):
        key = (op, tuple(id(a) for a in args), value)
        node = cls._table.get(key)
        if node is None:
            node = object.__new__(cls)
            node.op = op
            node.args = args
            node.value = value
            cls._table[key] = node
        return node

    def __reduce__(self):
        return (Expr, (self.op, self.args, self.value))

    def __repr__(self):
        return f"Expr({to_string(self)})"

    def __str__(self):
        return to_string(self)

    # operator sugar builds simplified nodes
    def __add__(self, o):
        return add(self, _wrap(o))

    def __radd__(self, o):
        return add(_wrap(o), self)

    def __sub__(self, o):
        return sub(self, _wrap(o))

    def __rsub__(self, o):
        return sub(_wrap(o), self)

    def __mul__(self, o):
        return mul(self, _wrap(o))

    def __rmul__(self, o):
        return mul(_wrap(o), self)

    def __truediv__(self, o):
        return div(self, _wrap(o))

    def __rtruediv__(self, o):
        return div(_wrap(o), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return pow_(self, n)

    @property
    def is_const(self) -> bool:
        return self.op == "const"


def _wrap(v) -> Expr:
    return v if isinstance(v, Expr) else const(v)


def const(v: float) -> Expr:
    v = float(v)
    if v == 0.0:
        v = 0.0  # fold -0.0
    return Expr("const", (), v)


def var(kind: str, index: int) -> Expr:
    if kind not in VAR_KINDS:
        raise ExprError(f"unknown variable kind {kind!r}")
    return Expr(kind, (), int(index))


ZERO = const(0.0)
ONE = const(1.0)


def _exact(a: float, b: float, op: str) -> float | None:
    """Fold two constants only when the float result is exact."""
    fa, fb = Fraction(a), Fraction(b)
    if op == "add":
        r, exact = a + b, fa + fb
    elif op == "sub":
        r, exact = a - b, fa - fb
    elif op == "mul":
        r, exact = a * b, fa * fb
    else:
        if b == 0:
            return None
        r, exact = a / b, fa / fb
    if math.isfinite(r) and Fraction(r) == exact:
        return r
    return None


def neg(a: Expr) -> Expr:
    if a.op == "const":
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    return Expr("neg", (a,))


def add(a: Expr, b: Expr) -> Expr:
    if a is ZERO:
        return b
    if b is ZERO:
        return a
    if a.is_const and b.is_const:
        r = _exact(a.value, b.value, "add")
        if r is not None:
            return const(r)
    if b.op == "neg":
        return sub(a, b.args[0])
    return Expr("add", (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if b is ZERO:
        return a
    if a is ZERO:
        return neg(b)
    if a is b:
        return ZERO
    if a.is_const and b.is_const:
        r = _exact(a.value, b.value, "sub")
        if r is not None:
            return const(r)
    return Expr("sub", (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if a is ZERO or b is ZERO:
        return ZERO
    if a is ONE:
        return b
    if b is ONE:
        return a
    if a.is_const and a.value == -1.0:
        return neg(b)
    if b.is_const and b.value == -1.0:
        return neg(a)
    if a.is_const and b.is_const:
        r = _exact(a.value, b.value, "mul")
        if r is not None:
            return const(r)
    if a.op == "neg" and b.op == "neg":
        return mul(a.args[0], b.args[0])
    if a.op == "neg":
        return neg(mul(a.args[0], b))
    if b.op == "neg":
        return neg(mul(a, b.args[0]))
    if b.is_const and not a.is_const:
        a, b = b, a  # constants first
    return Expr("mul", (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if b is ONE:
        return a
    if a is ZERO:
        return ZERO
    if a.is_const and b.is_const:
        r = _exact(a.value, b.value, "div")
        if r is not None:
            return const(r)
    return Expr("div", (a, b))


def pow_(a: Expr, n: int) -> Expr:
    if int(n) != n or n < 0:
        raise ExprError(f"exponent must be a non-negative integer, got {n!r}")
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if a.op == "pow":
        return pow_(a.args[0], a.value * n)
    return Expr("pow", (a,), n)


def call(name: str, a: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ExprError(f"unknown function {name!r}")
    return Expr("call", (a,), name)


sin = lambda a: call("sin", a)  # noqa: E731
cos = lambda a: call("cos", a)  # noqa: E731


# --- traversal ----------------------------------------------------------------

def topo_order(roots: Iterable[Expr]) -> list[Expr]:
    """Unique nodes of the DAG, children before parents."""
    seen: set[int] = set()
    order: list[Expr] = []
    stack: list[tuple[Expr, bool]] = [(r, False) for r in reversed(list(roots))]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for c in reversed(node.args):
            if id(c) not in seen:
                stack.append((c, False))
    return order


def node_count(roots: Iterable[Expr]) -> int:
    return len(topo_order(roots))


def free_vars(roots: Iterable[Expr]) -> set[tuple[str, int]]:
    return {(n.op, n.value) for n in topo_order(roots) if n.op in VAR_KINDS}


def substitute(e: Expr, mapping: Mapping[tuple[str, int], Expr]) -> Expr:
    memo: dict[int, Expr] = {}
    for n in topo_order([e]):
        if n.op in VAR_KINDS:
            memo[id(n)] = mapping.get((n.op, n.value), n)
        elif n.args:
            memo[id(n)] = _rebuild(n, [memo[id(c)] for c in n.args])
        else:
            memo[id(n)] = n
    return memo[id(e)]


def _rebuild(n: Expr, args: list[Expr]) -> Expr:
    op = n.op
    if op == "neg":
        return neg(args[0])
    if op == "add":
        return add(*args)
    if op == "sub":
        return sub(*args)
    if op == "mul":
        return mul(*args)
    if op == "div":
        return div(*args)
    if op == "pow":
        return pow_(args[0], n.value)
    if op == "call":
        return call(n.value, args[0])
    raise ExprError(op)


# --- differentiation --------------------------------------------------------------

def diff(e: Expr, kind: str, index: int, memo: dict | None = None) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to one variable."""
    memo = {} if memo is None else memo
    for n in topo_order([e]):
        if id(n) in memo:
            continue
        memo[id(n)] = _d(n, kind, index, memo)
    return memo[id(e)]


def _d(n: Expr, kind: str, index: int, memo: dict) -> Expr:
    op = n.op
    if op == "const":
        return ZERO
    if op in VAR_KINDS:
        return ONE if (op == kind and n.value == index) else ZERO
    a = n.args[0]
    da = memo[id(a)]
    if op == "neg":
        return neg(da)
    if op in ("add", "sub", "mul", "div"):
        b = n.args[1]
        db = memo[id(b)]
        if op == "add":
            return add(da, db)
        if op == "sub":
            return sub(da, db)
        if op == "mul":
            return add(mul(da, b), mul(a, db))
        # quotient rule
        if db is ZERO:
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), pow_(b, 2))
    if op == "pow":
        k = n.value
        return mul(mul(const(k), pow_(a, k - 1)), da)
    if da is ZERO:
        return ZERO
    name = n.value
    if name == "sin":
        return mul(call("cos", a), da)
    if name == "cos":
        return neg(mul(call("sin", a), da))
    if name == "tan":
        return mul(add(ONE, pow_(n, 2)), da)
    if name == "atan":
        return div(da, add(ONE, pow_(a, 2)))
    if name == "exp":
        return mul(n, da)
    if name == "mod2pi":
        return da  # derivative is 1 away from the wrap points
    if name == "sqrt":
        return div(da, mul(const(2.0), n))
    raise ExprError(f"{name} is not differentiable symbolically")


# --- printing -----------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _prec(n: Expr) -> int:
    if n.op == "const":
        return 3 if n.value < 0 else 5
    return _PREC.get(n.op, 5)


def _fmt_const(v: float) -> str:
    s = repr(float(v))
    if "inf" in s or "nan" in s:
        raise ExprError(f"cannot print non-finite constant {v}")
    return s


def to_string(e: Expr, names: Mapping[str, Sequence[str]] | None = None) -> str:
    names = names or {}
    out: dict[int, str] = {}

    def wrap(c: Expr, ok: bool) -> str:
        return out[id(c)] if ok else f"({out[id(c)]})"

    for n in topo_order([e]):
        op = n.op
        if op == "const":
            s = _fmt_const(n.value)
        elif op in VAR_KINDS:
            lst = names.get(op)
            s = lst[n.value] if lst else f"{op}{n.value + 1}"
        elif op == "neg":
            s = "-" + wrap(n.args[0], _prec(n.args[0]) > 3)
        elif op in ("add", "sub", "mul", "div"):
            a, b = n.args
            p = _PREC[op]
            sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[op]
            left = wrap(a, _prec(a) >= p)
            right = wrap(b, _prec(b) > p)
            s = f"{left} {sym} {right}"
        elif op == "pow":
            s = f"{wrap(n.args[0], _prec(n.args[0]) > 4)}^{n.value}"
        else:
            s = f"{n.value}({out[id(n.args[0])]})"
        out[id(n)] = s
    return out[id(e)]


# --- tokenizing and parsing -------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>==|[-+*/^(),;=\[\]{}'])
    """,
    re.VERBOSE,
)


class Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind, self.text, self.line, self.col = kind, text, line, col

    def __repr__(self):
        return f"Token({self.kind}, {self.text!r}, {self.line}:{self.col})"


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


class TokenStream:
    def __init__(self, toks: list[Token]):
        self.toks = toks
        self.i = 0

    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i = min(self.i + 1, len(self.toks) - 1)
        return t

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind in ("op", "ident") and t.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.peek()
        if not self.at(text):
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}", t.line, t.col)
        return self.next()

    def error(self, msg: str) -> ParseError:
        t = self.peek()
        return ParseError(msg, t.line, t.col)


class ExprParser:
    """Recursive-descent parser for arithmetic expressions.

    ``symbols`` maps identifiers to expressions (variables or named
    constants).  Only ``-<number>`` is folded; the tree otherwise mirrors the
    written formula.
    """

    def __init__(self, stream: TokenStream, symbols: Mapping[str, Expr]):
        self.s = stream
        self.symbols = symbols

    def parse(self) -> Expr:
        return self.expr()

    def expr(self) -> Expr:
        left = self.term()
        while self.s.at("+") or self.s.at("-"):
            op = self.s.next().text
            right = self.term()
            left = Expr("add" if op == "+" else "sub", (left, right))
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.s.at("*") or self.s.at("/"):
            op = self.s.next().text
            right = self.factor()
            left = Expr("mul" if op == "*" else "div", (left, right))
        return left

    def factor(self) -> Expr:
        if self.s.accept("-"):
            inner = self.factor()
            return const(-inner.value) if inner.op == "const" else Expr("neg", (inner,))
        if self.s.accept("+"):
            return self.factor()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.s.accept("^"):
            t = self.s.peek()
            if t.kind != "num" or not re.fullmatch(r"\d+", t.text):
                raise ParseError("exponent must be a non-negative integer literal", t.line, t.col)
            self.s.next()
            return Expr("pow", (base,), int(t.text))
        return base

    def primary(self) -> Expr:
        t = self.s.peek()
        if t.kind == "num":
            self.s.next()
            return const(float(t.text))
        if t.kind == "ident":
            self.s.next()
            if t.text in FUNCTIONS:
                self.s.expect("(")
                arg = self.expr()
                self.s.expect(")")
                return Expr("call", (arg,), t.text)
            if t.text in self.symbols:
                return self.symbols[t.text]
            raise ParseError(f"undeclared identifier {t.text!r}", t.line, t.col)
        if self.s.accept("("):
            e = self.expr()
            self.s.expect(")")
            return e
        raise ParseError(f"unexpected token {t.text or 'end of input'!r}", t.line, t.col)


def parse_expr(text: str, symbols: Mapping[str, Expr] | None = None) -> Expr:
    """Parse a standalone expression.  Default symbols: x1.., u1.., w1.. and pi."""
    if symbols is None:
        symbols = default_symbols(9, 9, 9)
    s = TokenStream(tokenize(text))
    e = ExprParser(s, symbols).parse()
    if s.peek().kind != "eof":
        raise s.error(f"unexpected trailing token {s.peek().text!r}")
    return e


def default_symbols(n: int, m: int = 0, p: int = 0) -> dict[str, Expr]:
    sym: dict[str, Expr] = {"pi": const(math.pi)}
    for kind, count in (("x", n), ("u", m), ("w", p)):
        for i in range(count):
            sym[f"{kind}{i + 1}"] = var(kind, i)
    return sym


# --- compiled evaluation ---------------------------------------------------------

_IA_FUNCS: dict[str, Callable[[IA], IA]] = {
    "sin": ia.sin, "cos": ia.cos, "tan": ia.tan, "atan": ia.atan, "exp": ia.exp,
    "mod2pi": ia.mod2pi, "sqrt": ia.sqrt, "abs": ia.iabs,
}
_NP_FUNCS: dict[str, Callable] = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "atan": np.arctan, "exp": np.exp,
    "mod2pi": lambda v: np.mod(v, math.tau), "sqrt": np.sqrt, "abs": np.abs,
}


class Program:
    """A list of expressions compiled to straight-line code over shared nodes."""

    def __init__(self, roots: Sequence[Expr]):
        self.roots = tuple(roots)
        self.nodes = topo_order(self.roots)
        slot = {id(n): k for k, n in enumerate(self.nodes)}
        self.code = [
            (n.op, tuple(slot[id(c)] for c in n.args), n.value) for n in self.nodes
        ]
        self.outputs = [slot[id(r)] for r in self.roots]

    def __len__(self):
        return len(self.nodes)

    def interval(self, env: Mapping[str, Sequence[IA]]) -> list[IA]:
        """Natural inclusion function; ``env`` maps 'x'/'u'/'w' to interval lists."""
        vals: list = [None] * len(self.code)
        for k, (op, a, v) in enumerate(self.code):
            if op == "const":
                r = IA(v)
            elif op in VAR_KINDS:
                r = env[op][v]
            elif op == "add":
                r = vals[a[0]] + vals[a[1]]
            elif op == "sub":
                r = vals[a[0]] - vals[a[1]]
            elif op == "mul":
                r = vals[a[0]] * vals[a[1]]
            elif op == "div":
                r = vals[a[0]] / vals[a[1]]
            elif op == "neg":
                r = -vals[a[0]]
            elif op == "pow":
                r = ia.power(vals[a[0]], v)
            else:
                r = _IA_FUNCS[v](vals[a[0]])
            vals[k] = r
        return [vals[i] for i in self.outputs]

    def numeric(self, env: Mapping[str, Sequence]) -> list[np.ndarray]:
        """Plain floating-point evaluation (simulation, sampling)."""
        vals: list = [None] * len(self.code)
        with np.errstate(all="ignore"):
            for k, (op, a, v) in enumerate(self.code):
                if op == "const":
                    r = v
                elif op in VAR_KINDS:
                    r = env[op][v]
                elif op == "add":
                    r = vals[a[0]] + vals[a[1]]
                elif op == "sub":
                    r = vals[a[0]] - vals[a[1]]
                elif op == "mul":
                    r = vals[a[0]] * vals[a[1]]
                elif op == "div":
                    r = vals[a[0]] / vals[a[1]]
                elif op == "neg":
                    r = -vals[a[0]]
                elif op == "pow":
                    r = vals[a[0]] ** v
                else:
                    r = _NP_FUNCS[v](vals[a[0]])
                vals[k] = r
        return [np.asarray(vals[i], dtype=float) for i in self.outputs]
