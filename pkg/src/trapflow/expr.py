"""Scalar symbolic expressions over named chart coordinates and parameters.

Expressions are small immutable trees (constants, name references, unary and
binary operations) parsed from a conventional infix grammar.  They are
evaluated either to plain floats or to first/second order jets (value,
gradient, Hessian) by forward-mode automatic differentiation, which is exact
for the supported operation set.  A symbolic single-variable derivative is
also provided; it is used to assemble Lie-derivative expressions where
third-order information is needed, while all numerical evaluation goes
through the jet classes.

Grammar (EBNF, also shipped in docs/grammar.md)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ "^" unary ] ;            (right associative)
    atom    = NUMBER | NAME | NAME "(" expr ")" | "(" expr ")" ;
    NAME    = letter { letter | digit | "_" } ;

Function names: sin cos tan sqrt exp log abs sign.  "**" is accepted as an
alias of "^".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "Expr", "Num", "Name", "Unary", "Binary",
    "ExprError", "ParseError", "UnboundNameError", "EvalDomainError",
    "NonSmoothError", "NonFiniteError",
    "parse", "to_str", "names_of", "evaluate", "jet1", "jet2", "diff",
    "Jet1", "Jet2", "KINK_WIDTH",
]

UNARY_FUNCTIONS = ("neg", "sin", "cos", "tan", "sqrt", "exp", "log", "abs", "sign")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")

#: evaluating jets of abs/sign closer than this to the kink is refused
KINK_WIDTH = 1e-8


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message, text, offset, expected=None):
        self.text = text
        self.offset = offset
        self.expected = expected
        hint = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at offset {offset}{hint}: "
                         f"...{text[max(0, offset - 12):offset]}>>>{text[offset:offset + 12]}")


class UnboundNameError(ExprError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unbound name {name!r}")


class EvalDomainError(ExprError):
    def __init__(self, message, node):
        self.node = node
        super().__init__(f"{message} in {to_str(node)!r}")


class NonSmoothError(EvalDomainError):
    """abs/sign differentiated within KINK_WIDTH of its kink."""


class NonFiniteError(EvalDomainError):
    """An intermediate value evaluated to NaN or +/-Inf."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"


Expr = Num | Name | Unary | Binary


def names_of(e: Expr) -> frozenset[str]:
    """All name references occurring in the tree."""
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Name):
        return frozenset((e.ident,))
    if isinstance(e, Unary):
        return names_of(e.arg)
    return names_of(e.lhs) | names_of(e.rhs)


def check_bound(e: Expr, allowed) -> None:
    """Raise UnboundNameError for the first reference not in `allowed`."""
    for n in sorted(names_of(e)):
        if n not in allowed:
            raise UnboundNameError(n)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_OPS = "+-*/^(),"


def _tokenize(text):
    toks = []  # (kind, value, offset)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            try:
                v = float(text[i:j])
            except ValueError:
                raise ParseError("malformed number", text, i) from None
            toks.append(("num", v, i))
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(("name", text[i:j], i))
            i = j
        elif c == "*" and i + 1 < n and text[i + 1] == "*":
            toks.append(("op", "^", i))
            i += 2
        elif c in _TOKEN_OPS:
            toks.append(("op", c, i))
            i += 1
        else:
            raise ParseError(f"unexpected character {c!r}", text, i)
    toks.append(("end", "", n))
    return toks


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.toks[self.pos]

    def take(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect_op(self, op):
        kind, val, off = self.peek()
        if kind != "op" or val != op:
            raise ParseError("unexpected token", self.text, off, expected=repr(op))
        return self.take()

    def parse_expr(self):
        node = self.parse_term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                rhs = self.parse_term()
                node = Binary("add" if val == "+" else "sub", node, rhs)
            else:
                return node

    def parse_term(self):
        node = self.parse_unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                rhs = self.parse_unary()
                node = Binary("mul" if val == "*" else "div", node, rhs)
            else:
                return node

    def parse_unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Unary("neg", self.parse_unary())
        return self.parse_power()

    def parse_power(self):
        base = self.parse_atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return Binary("pow", base, self.parse_unary())
        return base

    def parse_atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Num(val)
        if kind == "name":
            k2, v2, _ = self.peek()
            if k2 == "op" and v2 == "(":
                if val not in UNARY_FUNCTIONS or val == "neg":
                    raise ParseError(f"unknown function {val!r}", self.text, off,
                                     expected="one of " + ", ".join(UNARY_FUNCTIONS[1:]))
                self.take()
                arg = self.parse_expr()
                self.expect_op(")")
                return Unary(val, arg)
            return Name(val)
        if kind == "op" and val == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        raise ParseError("unexpected token", self.text, off,
                         expected="number, name or '('")


def parse(text: str) -> Expr:
    """Parse an expression string into an AST."""
    if not text or not text.strip():
        raise ParseError("empty expression", text or "", 0, expected="expression")
    p = _Parser(text)
    node = p.parse_expr()
    kind, _, off = p.peek()
    if kind != "end":
        raise ParseError("trailing input", text, off, expected="end of input")
    return node


# ---------------------------------------------------------------------------
# Printing (canonical, round-trips through parse)

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e):
    if isinstance(e, (Num, Name)):
        return _PREC_ATOM if not (isinstance(e, Num) and e.value < 0) else _PREC_NEG
    if isinstance(e, Unary):
        return _PREC_NEG if e.op == "neg" else _PREC_ATOM
    return {"add": _PREC_ADD, "sub": _PREC_ADD,
            "mul": _PREC_MUL, "div": _PREC_MUL, "pow": _PREC_POW}[e.op]


def _num_str(v):
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_str(e: Expr) -> str:
    """Canonical string form; parse(to_str(e)) reproduces e."""
    if isinstance(e, Num):
        if e.value < 0:
            return "-" + _num_str(-e.value)
        return _num_str(e.value)
    if isinstance(e, Name):
        return e.ident
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_str(e.arg)
            if _prec(e.arg) < _PREC_NEG:
                inner = f"({inner})"
            return "-" + inner
        return f"{e.op}({to_str(e.arg)})"
    sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/", "pow": "^"}[e.op]
    lp, rp = _prec(e.lhs), _prec(e.rhs)
    me = _prec(e)
    # left operand: parenthesize if looser than us; for pow (right assoc)
    # also parenthesize an equally tight left operand
    ls = to_str(e.lhs)
    if lp < me or (e.op == "pow" and lp == _PREC_POW):
        ls = f"({ls})"
    rs = to_str(e.rhs)
    # +,-,*,/ are left associative: a right operand of equal precedence
    # must keep its parentheses to round-trip structurally
    if rp < me or (rp == me and e.op != "pow"):
        rs = f"({rs})"
    return ls + sym + rs


# ---------------------------------------------------------------------------
# Jets


class Jet1:
    """First-order jet: value and gradient (tuple) wrt a fixed coordinate list."""

    __slots__ = ("v", "g")

    def __init__(self, v, g):
        self.v = v
        self.g = g

    def __add__(self, o):
        if isinstance(o, Jet1):
            return Jet1(self.v + o.v, tuple(a + b for a, b in zip(self.g, o.g)))
        return Jet1(self.v + o, self.g)

    __radd__ = __add__

    def __neg__(self):
        return Jet1(-self.v, tuple(-a for a in self.g))

    def __sub__(self, o):
        if isinstance(o, Jet1):
            return Jet1(self.v - o.v, tuple(a - b for a, b in zip(self.g, o.g)))
        return Jet1(self.v - o, self.g)

    def __rsub__(self, o):
        return Jet1(o - self.v, tuple(-a for a in self.g))

    def __mul__(self, o):
        if isinstance(o, Jet1):
            return Jet1(self.v * o.v,
                        tuple(self.v * b + o.v * a for a, b in zip(self.g, o.g)))
        return Jet1(self.v * o, tuple(a * o for a in self.g))

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Jet1):
            v = self.v / o.v
            return Jet1(v, tuple((a - v * b) / o.v for a, b in zip(self.g, o.g)))
        return Jet1(self.v / o, tuple(a / o for a in self.g))

    def __rtruediv__(self, o):
        v = o / self.v
        return Jet1(v, tuple(-v * b / self.v for b in self.g))


class Jet2:
    """Second-order jet: value, gradient and (symmetric) Hessian."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h):
        self.v = v
        self.g = g
        self.h = h

    def __add__(self, o):
        if isinstance(o, Jet2):
            return Jet2(self.v + o.v, self.g + o.g, self.h + o.h)
        return Jet2(self.v + o, self.g, self.h)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.v, -self.g, -self.h)

    def __sub__(self, o):
        if isinstance(o, Jet2):
            return Jet2(self.v - o.v, self.g - o.g, self.h - o.h)
        return Jet2(self.v - o, self.g, self.h)

    def __rsub__(self, o):
        return Jet2(o - self.v, -self.g, -self.h)

    def __mul__(self, o):
        if isinstance(o, Jet2):
            cross = np.outer(self.g, o.g)
            return Jet2(self.v * o.v,
                        self.v * o.g + o.v * self.g,
                        self.v * o.h + o.v * self.h + cross + cross.T)
        return Jet2(self.v * o, self.g * o, self.h * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Jet2):
            v = self.v / o.v
            g = (self.g - v * o.g) / o.v
            cross = np.outer(g, o.g)
            h = (self.h - cross - cross.T - v * o.h) / o.v
            return Jet2(v, g, h)
        return Jet2(self.v / o, self.g / o, self.h / o)

    def __rtruediv__(self, o):
        # o / self with o constant
        v = o / self.v
        g = -v * self.g / self.v
        cross = np.outer(g, self.g)
        h = (-cross - cross.T - v * self.h) / self.v
        return Jet2(v, g, h)


def _chain1(x, f, df):
    return Jet1(f, tuple(df * a for a in x.g))


def _chain2(x, f, df, d2f):
    return Jet2(f, df * x.g, df * x.h + d2f * np.outer(x.g, x.g))


def _apply_unary(op, x, node):
    """Apply a unary function to a float, Jet1 or Jet2."""
    if isinstance(x, (Jet1, Jet2)):
        v = x.v
        chain = _chain1 if isinstance(x, Jet1) else _chain2
        if op == "neg":
            return -x
        if op == "sin":
            return chain(x, math.sin(v), math.cos(v)) if isinstance(x, Jet1) \
                else _chain2(x, math.sin(v), math.cos(v), -math.sin(v))
        if op == "cos":
            return chain(x, math.cos(v), -math.sin(v)) if isinstance(x, Jet1) \
                else _chain2(x, math.cos(v), -math.sin(v), -math.cos(v))
        if op == "tan":
            t = math.tan(v)
            dt = 1.0 + t * t
            return chain(x, t, dt) if isinstance(x, Jet1) \
                else _chain2(x, t, dt, 2.0 * t * dt)
        if op == "sqrt":
            if v < 0:
                raise EvalDomainError("sqrt of negative value", node)
            if v == 0:
                raise EvalDomainError("sqrt differentiated at zero", node)
            s = math.sqrt(v)
            return chain(x, s, 0.5 / s) if isinstance(x, Jet1) \
                else _chain2(x, s, 0.5 / s, -0.25 / (s * v))
        if op == "exp":
            ev = math.exp(v)
            return chain(x, ev, ev) if isinstance(x, Jet1) \
                else _chain2(x, ev, ev, ev)
        if op == "log":
            if v <= 0:
                raise EvalDomainError("log of non-positive value", node)
            return chain(x, math.log(v), 1.0 / v) if isinstance(x, Jet1) \
                else _chain2(x, math.log(v), 1.0 / v, -1.0 / (v * v))
        if op == "abs":
            if abs(v) < KINK_WIDTH:
                raise NonSmoothError("abs differentiated at its kink", node)
            s = 1.0 if v > 0 else -1.0
            return chain(x, abs(v), s) if isinstance(x, Jet1) \
                else _chain2(x, abs(v), s, 0.0)
        if op == "sign":
            if abs(v) < KINK_WIDTH:
                raise NonSmoothError("sign differentiated at its kink", node)
            s = 1.0 if v > 0 else -1.0
            return chain(x, s, 0.0) if isinstance(x, Jet1) \
                else _chain2(x, s, 0.0, 0.0)
        raise ExprError(f"unknown unary op {op!r}")
    # plain float path
    if op == "neg":
        return -x
    if op == "sin":
        return math.sin(x)
    if op == "cos":
        return math.cos(x)
    if op == "tan":
        return math.tan(x)
    if op == "sqrt":
        if x < 0:
            raise EvalDomainError("sqrt of negative value", node)
        return math.sqrt(x)
    if op == "exp":
        return math.exp(x)
    if op == "log":
        if x <= 0:
            raise EvalDomainError("log of non-positive value", node)
        return math.log(x)
    if op == "abs":
        return abs(x)
    if op == "sign":
        return 0.0 if x == 0 else math.copysign(1.0, x)
    raise ExprError(f"unknown unary op {op!r}")


def _pow(a, b, node):
    """a ** b for mixed float/jet operands."""
    bj = isinstance(b, (Jet1, Jet2))
    aj = isinstance(a, (Jet1, Jet2))
    if not bj:
        if not aj:
            if a < 0 and b != int(b):
                raise EvalDomainError("fractional power of negative base", node)
            if a == 0 and b < 0:
                raise EvalDomainError("zero raised to negative power", node)
            return math.pow(a, b)
        v = a.v
        if v < 0 and b != int(b):
            raise EvalDomainError("fractional power of negative base", node)
        if v == 0:
            if b < 0:
                raise EvalDomainError("zero raised to negative power", node)
            if b != int(b) or (b < 2 and b != 0 and b != 1):
                raise EvalDomainError("power differentiated at zero base", node)
        if b == 0:
            return 1.0 + 0.0 * a
        if b == 1:
            return a
        f = math.pow(v, b)
        df = b * math.pow(v, b - 1)
        if isinstance(a, Jet1):
            return _chain1(a, f, df)
        return _chain2(a, f, df, b * (b - 1) * math.pow(v, b - 2))
    # variable exponent: a^b = exp(b log a)
    av = a.v if aj else a
    if av <= 0:
        raise EvalDomainError("variable power of non-positive base", node)
    return _apply_unary("exp", b * _apply_unary("log", a, node), node)


def _eval(e, env, lift, node_check):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Name):
        try:
            val = env[e.ident]
        except KeyError:
            raise UnboundNameError(e.ident) from None
        return lift(e.ident, val)
    if isinstance(e, Unary):
        try:
            return _apply_unary(e.op, _eval(e.arg, env, lift, node_check), e)
        except OverflowError:
            raise NonFiniteError("overflow", e) from None
    a = _eval(e.lhs, env, lift, node_check)
    b = _eval(e.rhs, env, lift, node_check)
    op = e.op
    try:
        if op == "add":
            r = a + b
        elif op == "sub":
            r = a - b
        elif op == "mul":
            r = a * b
        elif op == "div":
            bv = b.v if isinstance(b, (Jet1, Jet2)) else b
            if bv == 0:
                raise EvalDomainError("division by zero", e)
            r = a / b
        elif op == "pow":
            r = _pow(a, b, e)
        else:
            raise ExprError(f"unknown binary op {op!r}")
    except OverflowError:
        raise NonFiniteError("overflow", e) from None
    if node_check:
        rv = r.v if isinstance(r, (Jet1, Jet2)) else r
        if not math.isfinite(rv):
            raise NonFiniteError("non-finite value", e)
    return r


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate to a float.  Domain errors and non-finite intermediates raise."""
    return _eval(e, env, lambda name, v: v, True)


def jet1(e: Expr, env: Mapping[str, float], coords: Sequence[str]) -> Jet1:
    """Value and exact gradient with respect to `coords` (other names constant)."""
    idx = {c: i for i, c in enumerate(coords)}
    n = len(coords)
    zero = (0.0,) * n

    def lift(name, v):
        i = idx.get(name)
        if i is None:
            return v
        g = list(zero)
        g[i] = 1.0
        return Jet1(v, tuple(g))

    r = _eval(e, env, lift, True)
    if not isinstance(r, Jet1):
        return Jet1(r, zero)
    return r


def jet2(e: Expr, env: Mapping[str, float], coords: Sequence[str]) -> Jet2:
    """Value, gradient and Hessian with respect to `coords`."""
    idx = {c: i for i, c in enumerate(coords)}
    n = len(coords)

    def lift(name, v):
        i = idx.get(name)
        if i is None:
            return v
        g = np.zeros(n)
        g[i] = 1.0
        return Jet2(v, g, np.zeros((n, n)))

    r = _eval(e, env, lift, True)
    if not isinstance(r, Jet2):
        return Jet2(r, np.zeros(n), np.zeros((n, n)))
    return r


# ---------------------------------------------------------------------------
# Symbolic single-variable derivative (used to build Lie-derivative
# expressions; all evaluation still goes through the jets above)

_ZERO = Num(0.0)
_ONE = Num(1.0)


def _num(v):
    # negative constants become neg-nodes so every tree we build reparses
    # to an identical structure
    if v < 0:
        return Unary("neg", Num(-v))
    return Num(v)


def _is_num(e, v=None):
    return isinstance(e, Num) and (v is None or e.value == v)


def _add(a, b):
    if _is_num(a, 0):
        return b
    if _is_num(b, 0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value + b.value)
    return Binary("add", a, b)


def _sub(a, b):
    if _is_num(b, 0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value - b.value)
    if _is_num(a, 0):
        return Unary("neg", b)
    return Binary("sub", a, b)


def _mul(a, b):
    if _is_num(a, 0) or _is_num(b, 0):
        return _ZERO
    if _is_num(a, 1):
        return b
    if _is_num(b, 1):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value * b.value)
    return Binary("mul", a, b)


def _div(a, b):
    if _is_num(a, 0):
        return _ZERO
    if _is_num(b, 1):
        return a
    return Binary("div", a, b)


def _pow_node(a, b):
    if _is_num(b, 1):
        return a
    if _is_num(b, 0):
        return _ONE
    return Binary("pow", a, b)


def diff(e: Expr, name: str) -> Expr:
    """Symbolic partial derivative with basic constant folding.

    sign() differentiates to zero and abs(u) to sign(u)*u'; the jet
    evaluators still refuse the kink itself at evaluation time.
    """
    if isinstance(e, Num):
        return _ZERO
    if isinstance(e, Name):
        return _ONE if e.ident == name else _ZERO
    if isinstance(e, Unary):
        du = diff(e.arg, name)
        u = e.arg
        if e.op == "neg":
            return _sub(_ZERO, du) if not _is_num(du, 0) else _ZERO
        if _is_num(du, 0):
            return _ZERO
        if e.op == "sin":
            return _mul(Unary("cos", u), du)
        if e.op == "cos":
            return _sub(_ZERO, _mul(Unary("sin", u), du))
        if e.op == "tan":
            sec2 = _add(_ONE, _pow_node(Unary("tan", u), Num(2.0)))
            return _mul(sec2, du)
        if e.op == "sqrt":
            return _div(du, _mul(Num(2.0), Unary("sqrt", u)))
        if e.op == "exp":
            return _mul(Unary("exp", u), du)
        if e.op == "log":
            return _div(du, u)
        if e.op == "abs":
            return _mul(Unary("sign", u), du)
        if e.op == "sign":
            return _ZERO
        raise ExprError(f"unknown unary op {e.op!r}")
    da = diff(e.lhs, name)
    db = diff(e.rhs, name)
    if e.op == "add":
        return _add(da, db)
    if e.op == "sub":
        return _sub(da, db)
    if e.op == "mul":
        return _add(_mul(da, e.rhs), _mul(e.lhs, db))
    if e.op == "div":
        if _is_num(db, 0):
            return _div(da, e.rhs)
        num = _sub(_mul(da, e.rhs), _mul(e.lhs, db))
        return _div(num, _pow_node(e.rhs, Num(2.0)))
    if e.op == "pow":
        if isinstance(e.rhs, Num):
            c = e.rhs.value
            return _mul(_mul(e.rhs, _pow_node(e.lhs, _num(c - 1))), da)
        # general a^b = exp(b log a)
        term1 = _mul(db, Unary("log", e.lhs))
        term2 = _div(_mul(e.rhs, da), e.lhs)
        return _mul(e, _add(term1, term2))
    raise ExprError(f"unknown binary op {e.op!r}")
