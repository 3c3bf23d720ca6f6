"""Piecewise vector-field expressions on the nonnegative orthant.

One small grammar covers reaction terms, diffusion substitutions and their
numeric inverses:

    field   := expr (';' expr)*
    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := number | var | '(' expr ')' | call | '-' factor
    call    := ident '(' expr (',' expr)* ')'
    var     := 'u' digit+              (1-based input component)
    ident   := min | max | abs | exp | sqrt | pow | piecewise

``piecewise(uk, t, left, right)`` switches on a single variable at a numeric
threshold; the value AT the threshold is the right branch.  Every piecewise
node is recorded as a jump descriptor so downstream regularization knows
where the graph can tear.  Components of a multi-output field are separated
by ';'.
"""

from __future__ import annotations

from dataclasses import dataclass
import re

import numpy as np

# name -> (min arity, max arity or None for unbounded)
_FUNCTIONS = {
    "min": (2, None),
    "max": (2, None),
    "abs": (1, 1),
    "exp": (1, 1),
    "sqrt": (1, 1),
    "pow": (2, 2),
    "piecewise": (4, 4),
}


class ParseError(ValueError):
    """Syntax, identifier or arity problem in a field expression."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class DomainError(ArithmeticError):
    """Evaluation left the domain (division by zero, sqrt of a negative, ...)."""

    def __init__(self, message: str, component: int):
        super().__init__(f"component {component}: {message}")
        self.component = component


@dataclass
class JumpDescriptor:
    """One switching surface u_var == threshold inside one output component."""

    component: int   # 1-based output component
    var: int         # 1-based switching variable
    threshold: float
    left: tuple      # branch taken for u_var <  threshold
    right: tuple     # branch taken for u_var >= threshold
    index: int       # stable id, used to force a branch during one-sided eval


@dataclass
class FieldExpr:
    """Parsed field: one expression tree per output component."""

    components: list
    arity: int
    jump_descriptors: list


_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/(),;])"
    r"|(?P<ws>[ \t\r]+)"
    r"|(?P<nl>\n)"
)


def _tokenize(text: str):
    tokens = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        lexeme = m.group()
        if kind == "nl":
            line += 1
            col = 1
        elif kind != "ws":
            tokens.append((kind, lexeme, line, col))
            col += len(lexeme)
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str, arity: int):
        self.tokens = _tokenize(text)
        self.arity = arity
        self.pos = 0
        self.component = 1
        self.pw_count = 0
        self.descriptors = []

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        if tok[0] != "end":
            self.pos += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ParseError(message, tok[2], tok[3])

    def expect_op(self, op):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != op:
            shown = tok[1] if tok[0] != "end" else "end of input"
            self.error(f"expected {op!r}, found {shown!r}")
        return self.advance()

    def at_op(self, *ops):
        tok = self.peek()
        return tok[0] == "op" and tok[1] in ops

    def parse_field(self):
        components = [self.parse_expr()]
        while self.at_op(";"):
            self.advance()
            self.component += 1
            components.append(self.parse_expr())
        tok = self.peek()
        if tok[0] != "end":
            self.error(f"unexpected trailing input {tok[1]!r}")
        return components

    def parse_expr(self):
        node = self.parse_term()
        while self.at_op("+", "-"):
            op = self.advance()[1]
            rhs = self.parse_term()
            node = ("add" if op == "+" else "sub", node, rhs)
        return node

    def parse_term(self):
        node = self.parse_factor()
        while self.at_op("*", "/"):
            op = self.advance()[1]
            rhs = self.parse_factor()
            node = ("mul" if op == "*" else "div", node, rhs)
        return node

    def parse_factor(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.advance()
            child = self.parse_factor()
            if child[0] == "num":
                return ("num", -child[1])
            return ("neg", child)
        if tok[0] == "op" and tok[1] == "(":
            self.advance()
            node = self.parse_expr()
            self.expect_op(")")
            return node
        if tok[0] == "num":
            self.advance()
            return ("num", float(tok[1]))
        if tok[0] == "name":
            return self.parse_name()
        shown = tok[1] if tok[0] != "end" else "end of input"
        self.error(f"unexpected {shown!r}")

    def parse_name(self):
        tok = self.advance()
        name = tok[1]
        m = re.fullmatch(r"u(\d+)", name)
        if m:
            k = int(m.group(1))
            if not 1 <= k <= self.arity:
                self.error(f"variable {name} out of range for arity {self.arity}", tok)
            return ("var", k)
        if name not in _FUNCTIONS:
            self.error(f"unknown identifier {name!r}", tok)
        self.expect_op("(")
        args = [self.parse_expr()]
        while self.at_op(","):
            self.advance()
            args.append(self.parse_expr())
        self.expect_op(")")
        lo, hi = _FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = f"at least {lo}" if hi is None else (
                str(lo) if lo == hi else f"{lo}..{hi}")
            self.error(f"{name} expects {want} argument(s), got {len(args)}", tok)
        if name == "piecewise":
            return self.build_piecewise(args, tok)
        return ("call", name, args)

    def build_piecewise(self, args, tok):
        switch, threshold, left, right = args
        if switch[0] != "var":
            self.error("piecewise switch must be a single variable", tok)
        if threshold[0] != "num":
            self.error("piecewise threshold must be a numeric constant", tok)
        idx = self.pw_count
        self.pw_count += 1
        node = ("pw", idx, switch[1], threshold[1], left, right)
        self.descriptors.append(JumpDescriptor(
            component=self.component, var=switch[1], threshold=threshold[1],
            left=left, right=right, index=idx))
        return node


def parse_field(text: str, arity: int) -> FieldExpr:
    """Parse a field over R^arity; raises ParseError with line/column on bad input."""
    if arity < 1:
        raise ValueError("arity must be at least 1")
    parser = _Parser(text, arity)
    components = parser.parse_field()
    return FieldExpr(components=components, arity=arity,
                     jump_descriptors=parser.descriptors)


def jump_points(f: FieldExpr) -> list:
    """Jump descriptors of the field, in source order."""
    return list(f.jump_descriptors)


def _eval(tree, cols, n, forced, comp):
    tag = tree[0]
    if tag == "num":
        return np.full(n, tree[1])
    if tag == "var":
        return cols[tree[1] - 1]
    if tag == "neg":
        return -_eval(tree[1], cols, n, forced, comp)
    if tag in ("add", "sub", "mul", "div"):
        a = _eval(tree[1], cols, n, forced, comp)
        b = _eval(tree[2], cols, n, forced, comp)
        if tag == "add":
            return a + b
        if tag == "sub":
            return a - b
        if tag == "mul":
            return a * b
        if np.any(b == 0.0):
            raise DomainError("division by zero", comp)
        return a / b
    if tag == "call":
        name, args = tree[1], tree[2]
        vals = [_eval(a, cols, n, forced, comp) for a in args]
        if name == "min":
            return np.minimum.reduce(vals)
        if name == "max":
            return np.maximum.reduce(vals)
        if name == "abs":
            return np.abs(vals[0])
        if name == "exp":
            with np.errstate(over="ignore"):
                out = np.exp(vals[0])
            if not np.all(np.isfinite(out)):
                raise DomainError("exp overflow", comp)
            return out
        if name == "sqrt":
            if np.any(vals[0] < 0.0):
                raise DomainError("sqrt of negative value", comp)
            return np.sqrt(vals[0])
        base, expo = vals
        if np.any((base < 0.0) & (expo != np.floor(expo))):
            raise DomainError("fractional power of negative base", comp)
        if np.any((base == 0.0) & (expo < 0.0)):
            raise DomainError("zero base with negative exponent", comp)
        return np.power(base, expo)
    # piecewise: value at the threshold comes from the right branch
    _, idx, k, thr, left, right = tree
    mode = forced.get(idx) if forced else None
    if mode == "left":
        return _eval(left, cols, n, forced, comp)
    if mode == "right":
        return _eval(right, cols, n, forced, comp)
    mask = cols[k - 1] >= thr
    if mask.all():
        return _eval(right, cols, n, forced, comp)
    if not mask.any():
        return _eval(left, cols, n, forced, comp)
    out = np.empty(n)
    sub = [c[mask] for c in cols]
    out[mask] = _eval(right, sub, int(mask.sum()), forced, comp)
    inv = ~mask
    sub = [c[inv] for c in cols]
    out[inv] = _eval(left, sub, int(inv.sum()), forced, comp)
    return out


def eval_field_batch(f: FieldExpr, pts, forced=None) -> np.ndarray:
    """Evaluate at an (n, arity) batch of points; returns (n, n_components).

    ``forced`` maps a jump descriptor index to 'left' or 'right' and pins that
    piecewise node to one branch, which is how one-sided limits are taken.
    """
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != f.arity:
        raise ValueError(f"expected points of shape (n, {f.arity})")
    cols = [np.ascontiguousarray(pts[:, j]) for j in range(f.arity)]
    out = np.empty((pts.shape[0], len(f.components)))
    for ci, tree in enumerate(f.components):
        vals = _eval(tree, cols, pts.shape[0], forced, ci + 1)
        if not np.all(np.isfinite(vals)):
            raise DomainError("non-finite value", ci + 1)
        out[:, ci] = vals
    return out


def eval_field(f: FieldExpr, u, forced=None) -> np.ndarray:
    """Evaluate at a single point of R^arity; returns a 1-D array."""
    u = np.asarray(u, dtype=float)
    if u.shape != (f.arity,):
        raise ValueError(f"expected a point of shape ({f.arity},)")
    return eval_field_batch(f, u.reshape(1, -1), forced)[0]


# pretty printer: minimal parentheses, round-trips through parse_field
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}
_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def _fmt(tree, need):
    tag = tree[0]
    if tag == "num":
        v = tree[1]
        text = repr(float(v))
        return f"({text})" if v < 0 and need > 3 else text
    if tag == "var":
        return f"u{tree[1]}"
    if tag == "neg":
        inner = _fmt(tree[1], 4)
        out = f"-{inner}"
        return f"({out})" if need > 3 else out
    if tag in _PREC:
        prec = _PREC[tag]
        out = f"{_fmt(tree[1], prec)}{_SYM[tag]}{_fmt(tree[2], prec + 1)}"
        return f"({out})" if prec < need else out
    if tag == "call":
        args = ", ".join(_fmt(a, 1) for a in tree[2])
        return f"{tree[1]}({args})"
    _, _, k, thr, left, right = tree
    return f"piecewise(u{k}, {repr(float(thr))}, {_fmt(left, 1)}, {_fmt(right, 1)})"


def format_field(f: FieldExpr) -> str:
    """Render back to grammar text; parse_field(format_field(f)) rebuilds f."""
    return "; ".join(_fmt(tree, 1) for tree in f.components)


def fields_equal(a: FieldExpr, b: FieldExpr) -> bool:
    """Structural equality of two parsed fields."""
    return a.arity == b.arity and a.components == b.components
