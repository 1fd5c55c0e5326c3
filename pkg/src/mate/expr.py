"""Small arithmetic expression language for user-supplied scalar data.

Grammar (whitespace insignificant)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := ('+' | '-') factor | atom ('^' factor)?
    atom   := number | ident | '(' expr ')' | func '(' expr (',' expr)* ')'

Identifiers are ``x1 x2 z p1 p2 r2`` (``r2 = x1^2 + x2^2``); functions are
``exp log sin cos sqrt min max abs``.  Expressions compile to closures that
evaluate elementwise on numpy arrays.
"""
from __future__ import annotations

import difflib
import re

import numpy as np

from .errors import ExpressionSyntaxError, UnknownIdentifier

IDENTIFIERS = ("x1", "x2", "z", "p1", "p2", "r2")

_UNARY = {
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_VARIADIC = {"min": np.minimum, "max": np.maximum}
FUNCTIONS = tuple(_UNARY) + tuple(_VARIADIC)

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = len(text) - len(text[pos:].lstrip())
            raise ExpressionSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ExpressionSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = ("+" if op == "+" else "-", node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = (op, node, self.factor())
        return node

    def factor(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            inner = self.factor()
            return inner if val == "+" else ("neg", inner)
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return ("^", base, self.factor())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return ("num", float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == "," and self.peek()[0] == "op":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if val in _UNARY and len(args) != 1:
                    raise ExpressionSyntaxError(f"{val} takes exactly one argument", pos)
                return ("call", val, args)
            if val not in IDENTIFIERS:
                near = difflib.get_close_matches(val, IDENTIFIERS + FUNCTIONS, n=1, cutoff=0.5)
                raise UnknownIdentifier(val, pos, f" (did you mean {near[0]!r}?)" if near else "")
            return ("var", val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExpressionSyntaxError(f"unexpected {found}", pos)


def parse(text: str):
    """Parse ``text`` into a nested-tuple syntax tree."""
    return _Parser(text).parse()


def _compile(node):
    tag = node[0]
    if tag == "num":
        value = node[1]
        return lambda env: value
    if tag == "var":
        name = node[1]
        return lambda env: env[name]
    if tag == "neg":
        f = _compile(node[1])
        return lambda env: -f(env)
    if tag == "call":
        args = [_compile(a) for a in node[2]]
        if node[1] in _UNARY:
            fn = _UNARY[node[1]]
            (a,) = args
            return lambda env: fn(a(env))
        fn = _VARIADIC[node[1]]

        def reduce(env):
            out = args[0](env)
            for a in args[1:]:
                out = fn(out, a(env))
            return out

        return reduce
    left, right = _compile(node[1]), _compile(node[2])
    if tag == "+":
        return lambda env: left(env) + right(env)
    if tag == "-":
        return lambda env: left(env) - right(env)
    if tag == "*":
        return lambda env: left(env) * right(env)
    if tag == "/":
        return lambda env: left(env) / right(env)
    if tag == "^":
        return lambda env: np.power(left(env), right(env))
    raise AssertionError(tag)


def _variables(node, acc):
    if node[0] == "var":
        acc.add(node[1])
    elif node[0] == "call":
        for a in node[2]:
            _variables(a, acc)
    elif node[0] in ("neg",):
        _variables(node[1], acc)
    elif node[0] not in ("num",):
        _variables(node[1], acc)
        _variables(node[2], acc)
    return acc


class Expression:
    """A compiled expression, callable as ``expr(x, z, p)`` on arrays.

    ``x`` and ``p`` have shape (m, 2), ``z`` shape (m,); the result has
    shape (m,).
    """

    def __init__(self, text: str):
        self.text = text
        self.tree = parse(text)
        self.variables = frozenset(_variables(self.tree, set()))
        self._fn = _compile(self.tree)

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __call__(self, x, z, p=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        if p is None:
            p = np.zeros_like(x)
        p = np.atleast_2d(np.asarray(p, dtype=float))
        env = {
            "x1": x[:, 0],
            "x2": x[:, 1],
            "z": z,
            "p1": p[:, 0],
            "p2": p[:, 1],
            "r2": x[:, 0] ** 2 + x[:, 1] ** 2,
        }
        with np.errstate(all="ignore"):
            out = self._fn(env)
        return np.broadcast_to(np.asarray(out, dtype=float), z.shape).copy()
