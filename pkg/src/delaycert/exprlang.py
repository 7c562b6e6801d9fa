"""Parse and evaluate scalar arithmetic expressions over nonnegative state variables.

Expressions denote components of vector fields.  The grammar supports
``+ - * / ^`` (power, right associative), unary minus, parentheses, decimal
and scientific literals, and the functions ``exp log sqrt abs min max pow``.
Precedence, tightest first: ``^``, unary ``-``, ``* /``, ``+ -``.  Variables
are ``x1 .. xn`` by default; alternative names (e.g. ``t`` for time
expressions) can be supplied at parse time.

Parsed trees are immutable and safe to share between threads; evaluation is
pure.  Scalar evaluation uses Python floats and raises precise errors for
domain violations and overflow.  Batched evaluation (`ExprAst.eval_many`)
uses numpy and lets non-finite values flow; callers that need diagnostics
re-evaluate the offending point in scalar mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ExprAst",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "VariableRangeError",
    "ExprEvalError",
    "ExprDomainError",
    "ExprOverflowError",
    "parse",
    "evaluate",
]


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Malformed source text; `position` is a 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(ExprSyntaxError):
    pass


class VariableRangeError(ExprSyntaxError):
    pass


class ExprEvalError(ExprError):
    """Base class for evaluation-time errors."""


class ExprDomainError(ExprEvalError):
    """Argument outside the mathematical domain (log/sqrt of a negative
    number, division by zero, negative base with fractional exponent)."""


class ExprOverflowError(ExprEvalError):
    """Finite inputs produced a value outside double range.  Overflow is
    always reported, never returned as a silent infinity."""


_FUNCTIONS_1 = ("exp", "log", "sqrt", "abs")
_FUNCTIONS_2 = ("min", "max", "pow")


def _check_finite(value: float, what: str) -> float:
    if math.isinf(value):
        raise ExprOverflowError(f"overflow in {what}")
    if math.isnan(value):
        raise ExprDomainError(f"undefined value in {what}")
    return value


def _pow_scalar(base: float, exponent: float) -> float:
    if base < 0.0 and exponent != math.floor(exponent):
        raise ExprDomainError(
            f"fractional power of negative base ({base!r} ^ {exponent!r})"
        )
    if base == 0.0 and exponent < 0.0:
        raise ExprDomainError("zero raised to a negative power")
    try:
        return _check_finite(math.pow(base, exponent), "power")
    except OverflowError:
        raise ExprOverflowError("overflow in power") from None


# Precedence levels used by the printer; higher binds tighter.
_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


@dataclass(frozen=True)
class Const:
    value: float

    prec = _PREC_ATOM

    def eval(self, x) -> float:
        return self.value

    def eval_many(self, cols) -> np.ndarray:
        return np.full(cols[0].shape, self.value) if cols else np.asarray(self.value)

    def unparse(self, names) -> str:
        return repr(self.value)


@dataclass(frozen=True)
class Var:
    index: int  # 1-based

    prec = _PREC_ATOM

    def eval(self, x) -> float:
        return x[self.index - 1]

    def eval_many(self, cols) -> np.ndarray:
        return cols[self.index - 1]

    def unparse(self, names) -> str:
        return names[self.index - 1]


@dataclass(frozen=True)
class Neg:
    child: "Node"

    prec = _PREC_NEG

    def eval(self, x) -> float:
        return -self.child.eval(x)

    def eval_many(self, cols) -> np.ndarray:
        return -self.child.eval_many(cols)

    def unparse(self, names) -> str:
        inner = self.child.unparse(names)
        if self.child.prec < _PREC_NEG or isinstance(self.child, Neg):
            inner = f"({inner})"
        return f"-{inner}"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"

    @property
    def prec(self) -> int:
        if self.op in "+-":
            return _PREC_ADD
        if self.op in "*/":
            return _PREC_MUL
        return _PREC_POW

    def eval(self, x) -> float:
        a = self.left.eval(x)
        b = self.right.eval(x)
        op = self.op
        if op == "+":
            return _check_finite(a + b, "addition")
        if op == "-":
            return _check_finite(a - b, "subtraction")
        if op == "*":
            return _check_finite(a * b, "multiplication")
        if op == "/":
            if b == 0.0:
                raise ExprDomainError("division by zero")
            return _check_finite(a / b, "division")
        return _pow_scalar(a, b)

    def eval_many(self, cols) -> np.ndarray:
        a = self.left.eval_many(cols)
        b = self.right.eval_many(cols)
        op = self.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return a / b
        return np.power(a, b)

    def unparse(self, names) -> str:
        p = self.prec
        left = self.left.unparse(names)
        right = self.right.unparse(names)
        if self.op == "^":
            # Right associative; the exponent slot admits unary minus and
            # nested powers without parentheses.
            if self.left.prec <= _PREC_POW:
                left = f"({left})"
            if self.right.prec < _PREC_NEG:
                right = f"({right})"
        else:
            if self.left.prec < p:
                left = f"({left})"
            if self.right.prec <= p:
                right = f"({right})"
        return f"{left} {self.op} {right}"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple

    prec = _PREC_ATOM

    def eval(self, x) -> float:
        name = self.name
        if name == "exp":
            try:
                return math.exp(self.args[0].eval(x))
            except OverflowError:
                raise ExprOverflowError("overflow in exp") from None
        if name == "log":
            a = self.args[0].eval(x)
            if a <= 0.0:
                raise ExprDomainError(f"log of non-positive value ({a!r})")
            return math.log(a)
        if name == "sqrt":
            a = self.args[0].eval(x)
            if a < 0.0:
                raise ExprDomainError(f"sqrt of negative value ({a!r})")
            return math.sqrt(a)
        if name == "abs":
            return abs(self.args[0].eval(x))
        if name == "min":
            return min(self.args[0].eval(x), self.args[1].eval(x))
        if name == "max":
            return max(self.args[0].eval(x), self.args[1].eval(x))
        # pow
        return _pow_scalar(self.args[0].eval(x), self.args[1].eval(x))

    def eval_many(self, cols) -> np.ndarray:
        name = self.name
        a = self.args[0].eval_many(cols)
        if name == "exp":
            return np.exp(a)
        if name == "log":
            return np.log(a)
        if name == "sqrt":
            return np.sqrt(a)
        if name == "abs":
            return np.abs(a)
        b = self.args[1].eval_many(cols)
        if name == "min":
            return np.minimum(a, b)
        if name == "max":
            return np.maximum(a, b)
        return np.power(a, b)

    def unparse(self, names) -> str:
        inner = ", ".join(arg.unparse(names) for arg in self.args)
        return f"{self.name}({inner})"


Node = Union[Const, Var, Neg, Bin, Call]


@dataclass(frozen=True)
class ExprAst:
    """Immutable parsed expression over `n_vars` nonnegative variables.

    Repeated evaluation at the same point is bit-identical: the tree never
    changes and both evaluation paths are deterministic.
    """

    root: Node
    n_vars: int
    var_names: tuple

    def eval(self, x) -> float:
        """Evaluate at a point (sequence of `n_vars` finite floats).

        Raises `ExprDomainError` or `ExprOverflowError` on bad arithmetic;
        never returns a non-finite value.
        """
        if len(x) != self.n_vars:
            raise ValueError(
                f"point has dimension {len(x)}, expression expects {self.n_vars}"
            )
        return float(self.root.eval(tuple(float(v) for v in x)))

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at an (m, n_vars) array of points; returns shape (m,).

        Non-finite outputs are passed through for the caller to detect;
        use `eval` on a single point for a precise diagnostic.
        """
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.n_vars:
            raise ValueError(
                f"expected shape (m, {self.n_vars}), got {points.shape}"
            )
        cols = tuple(points[:, j] for j in range(self.n_vars))
        with np.errstate(all="ignore"):
            out = self.root.eval_many(cols)
        if np.ndim(out) == 0:
            out = np.full(points.shape[0], float(out))
        return out

    def to_source(self) -> str:
        """Render back to parseable text; re-parsing yields an identical tree."""
        return self.root.unparse(self.var_names)

    def __str__(self) -> str:
        return self.to_source()


def evaluate(ast: ExprAst, x) -> float:
    """Functional alias for `ExprAst.eval`."""
    return ast.eval(x)


# ---------------------------------------------------------------------------
# Lexer / parser
# ---------------------------------------------------------------------------

_TOKEN_OPS = "+-*/^(),"


class _Token:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind: str, text: str, pos: int):
        self.kind = kind  # 'num' | 'ident' | operator char | 'end'
        self.text = text
        self.pos = pos


def _tokenize(source: str):
    tokens = []
    i = 0
    n = len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in _TOKEN_OPS:
            tokens.append(_Token(c, c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            start = i
            while i < n and (source[i].isdigit() or source[i] == "."):
                i += 1
            if i < n and source[i] in "eE":
                j = i + 1
                if j < n and source[j] in "+-":
                    j += 1
                if j < n and source[j].isdigit():
                    i = j
                    while i < n and source[i].isdigit():
                        i += 1
            text = source[start:i]
            try:
                float(text)
            except ValueError:
                raise ExprSyntaxError(f"invalid number {text!r}", start) from None
            tokens.append(_Token("num", text, start))
            continue
        if c.isalpha() or c == "_":
            start = i
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
            tokens.append(_Token("ident", source[start:i], start))
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, n_vars: int, var_names):
        self.tokens = tokens
        self.pos = 0
        self.n_vars = n_vars
        self.var_names = var_names
        self.name_to_index = {name: k + 1 for k, name in enumerate(var_names)}

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ExprSyntaxError(
                f"expected {kind!r}, found {tok.text!r}" if tok.kind != "end"
                else f"expected {kind!r}, found end of input",
                tok.pos,
            )
        return self.advance()

    def parse_expr(self) -> Node:
        node = self.parse_term()
        while self.peek().kind in "+-":
            op = self.advance().kind
            node = Bin(op, node, self.parse_term())
        return node

    def parse_term(self) -> Node:
        node = self.parse_factor()
        while self.peek().kind in "*/":
            op = self.advance().kind
            node = Bin(op, node, self.parse_factor())
        return node

    def parse_factor(self) -> Node:
        if self.peek().kind == "-":
            self.advance()
            return Neg(self.parse_factor())
        return self.parse_power()

    def parse_power(self) -> Node:
        base = self.parse_atom()
        if self.peek().kind == "^":
            self.advance()
            # Exponent admits unary minus and chains right-associatively.
            return Bin("^", base, self.parse_factor())
        return base

    def parse_atom(self) -> Node:
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "(":
            self.advance()
            node = self.parse_expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            self.advance()
            return self.parse_ident(tok)
        if tok.kind == "end":
            raise ExprSyntaxError("unexpected end of input", tok.pos)
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.pos)

    def parse_ident(self, tok: _Token) -> Node:
        name = tok.text
        if name in _FUNCTIONS_1 or name in _FUNCTIONS_2:
            self.expect("(")
            args = [self.parse_expr()]
            while self.peek().kind == ",":
                self.advance()
                args.append(self.parse_expr())
            self.expect(")")
            arity = 1 if name in _FUNCTIONS_1 else 2
            if len(args) != arity:
                raise ExprSyntaxError(
                    f"{name} takes {arity} argument(s), got {len(args)}", tok.pos
                )
            return Call(name, tuple(args))
        if name in self.name_to_index:
            return Var(self.name_to_index[name])
        if name.startswith("x") and name[1:].isdigit():
            index = int(name[1:])
            if not 1 <= index <= self.n_vars:
                raise VariableRangeError(
                    f"variable {name} out of range 1..{self.n_vars}", tok.pos
                )
            # Reachable only with custom var_names shadowing the default
            # pattern; treat as unknown to avoid silent aliasing.
        raise UnknownIdentifierError(f"unknown identifier {name!r}", tok.pos)


def parse(source: str, n_vars: int, var_names=None) -> ExprAst:
    """Parse `source` into an `ExprAst` over variables ``x1 .. x{n_vars}``.

    `var_names` optionally renames the variables (e.g. ``("t",)`` for a
    history expression in time).  Raises `ExprSyntaxError` (with position),
    `UnknownIdentifierError`, or `VariableRangeError`.
    """
    if not isinstance(n_vars, int) or n_vars < 1:
        raise ValueError("n_vars must be a positive integer")
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    if var_names is None:
        var_names = tuple(f"x{k}" for k in range(1, n_vars + 1))
    else:
        var_names = tuple(var_names)
        if len(var_names) != n_vars:
            raise ValueError("var_names length must equal n_vars")
    parser = _Parser(_tokenize(source), n_vars, var_names)
    root = parser.parse_expr()
    tail = parser.peek()
    if tail.kind != "end":
        raise ExprSyntaxError(f"unexpected trailing input {tail.text!r}", tail.pos)
    return ExprAst(root=root, n_vars=n_vars, var_names=var_names)
