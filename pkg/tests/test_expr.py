import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mate.errors import ExpressionSyntaxError, UnknownIdentifier
from mate.expr import Expression
from mate.model import eval_jet, parse_expression

CORPUS = [
    "1",
    "-2.5",
    "1 - (x1^2+x2^2)^2/4",
    "z - 3/4",
    "z - 3/2",
    "2^3^2",
    "-2^2",
    "2^-1",
    "(1 + 2) * 3 - 4 / 5",
    "1 / 4 - r2^2 / 64",
    "exp(x1) * cos(x2)",
    "log(1 + r2)",
    "sqrt(1 + x1^2 + x2^2)",
    "sin(x1 * x2) + cos(z)",
    "abs(x1 - x2)",
    "min(x1, x2, z)",
    "max(x1, 0.5)",
    "1e-3 * z + 2E2",
    ".5 * p1 - p2 / 3",
    "x1 * x1 - x2 * x2",
    "((x1))",
    "+x1 - -x2",
    "exp(-r2 / 2) / (2 * 3.141592653589793)",
    "1 + 0.1 * exp(x1)",
    "z - 3/2 - 0.1*(1 + x1)*exp(x1)",
    "p1^2 + p2^2",
    "(z + 1)^0.5",
    "x1 / (1 + x2^2) ^ 2",
    "max(min(x1, x2), -1) * 4",
    "cos(x1)^2 + sin(x1)^2",
]

REF_ENV = {"exp": math.exp, "log": math.log, "sin": math.sin, "cos": math.cos, "sqrt": math.sqrt,
           "abs": abs, "min": min, "max": max}


def reference(text, x1, x2, z, p1, p2):
    env = dict(REF_ENV, x1=x1, x2=x2, z=z, p1=p1, p2=p2, r2=x1 * x1 + x2 * x2)
    return eval(text.replace("^", "**"), {"__builtins__": {}}, env)


def test_corpus_size():
    assert len(CORPUS) == 30


@pytest.mark.parametrize("text", CORPUS)
def test_corpus_matches_reference(text, rng):
    X = rng.uniform(-1, 1, (20, 2))
    Z = rng.uniform(0, 1, 20)
    P = rng.uniform(-2, 2, (20, 2))
    got = Expression(text)(X, Z, P)
    want = np.array([reference(text, *X[i], Z[i], *P[i]) for i in range(20)], dtype=float)
    np.testing.assert_allclose(got, want, rtol=1e-14, atol=1e-14)


def test_spec_values():
    x = np.array([[1.0, 0.0]])
    assert parse_expression("1")(np.zeros((3, 2)), np.zeros(3)).tolist() == [1.0] * 3
    assert parse_expression("1 - (x1^2+x2^2)^2/4")(x, np.zeros(1))[0] == pytest.approx(0.75)
    assert parse_expression("z - 3/4")(x, np.array([0.25]))[0] == pytest.approx(-0.5)


def test_fd_jet_detects_z_dependence():
    phi = parse_expression("z - 3/2")
    jet = eval_jet(phi, np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([0.5, 2.0]), None, order=1)
    np.testing.assert_allclose(jet.dz, 1.0, rtol=1e-8)
    np.testing.assert_allclose(jet.dx, 0.0, atol=1e-8)


@pytest.mark.parametrize("text", ["1 +", "(x1", "x1 x2", "2 $ 3", "exp()", ""])
def test_syntax_errors(text):
    with pytest.raises(ExpressionSyntaxError):
        Expression(text)


def test_unknown_identifier_suggests():
    with pytest.raises(UnknownIdentifier, match="did you mean .x[12].?"):
        Expression("x3 + 1")


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_polynomial_agrees(a, b, c):
    text = f"({a}) * x1^2 + ({b}) * x2 - ({c})"
    x = np.array([[0.3, -0.7]])
    assert Expression(text)(x, 0.0)[0] == pytest.approx(a * 0.09 + b * -0.7 - c, abs=1e-12)
