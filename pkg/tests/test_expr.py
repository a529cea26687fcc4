import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from predmatch.errors import ConfigError
from predmatch.expr import PriorExpression, prior_from_expression


@pytest.mark.parametrize("text,theta,value", [
    ("-log(theta2)", (0.0, 2.0), -math.log(2.0)),
    ("-2*log(theta2)", (0.0, 2.0), -2 * math.log(2.0)),
    ("theta1^2 + theta2**3", (2.0, 3.0), 31.0),
    ("pow(theta1, 0.5) - sqrt(theta1)", (4.0,), 0.0),
    ("exp(-theta1) / pi", (1.0,), math.exp(-1) / math.pi),
    ("-(theta1 - 1) * +2", (3.0,), -4.0),
    ("2^3^2", (1.0,), 512.0),
    ("3", (1.0, 2.0), 3.0),
])
def test_evaluation(text, theta, value):
    assert PriorExpression(text)(np.array(theta)) == pytest.approx(value, rel=1e-14)


def test_vectorised_evaluation():
    e = PriorExpression("-log(theta2) + theta1")
    th = np.array([[0.0, 1.0], [1.0, math.e], [2.0, 1.0]])
    assert np.allclose(e(th), [0.0, 0.0, 2.0])
    assert PriorExpression("1.5")(th).shape == (3,)


@pytest.mark.parametrize("text", [
    "__import__('os')", "theta1.real", "lambda: 1", "theta1 if theta1 else 0", "[theta1]", "sin(theta1)",
    "log(theta1, 2)", "theta0 + 1", "x + 1", "theta1 % 2", "'a'", "True", "log(x=theta1)", "theta1 < 2",
])
def test_rejects_outside_grammar(text):
    with pytest.raises(ConfigError):
        PriorExpression(text)


def test_error_columns():
    with pytest.raises(ConfigError) as info:
        PriorExpression("theta1 + foo", line=7, column=10)
    assert (info.value.line, info.value.column) == (7, 20)
    with pytest.raises(ConfigError, match="column"):
        PriorExpression("theta1 +")


def test_parameter_count_checked():
    with pytest.raises(ConfigError, match="theta3"):
        PriorExpression("theta3", p=2)
    assert PriorExpression("theta1 * theta2", p=2).max_index == 2


_leaf = st.one_of(st.sampled_from(["theta1", "theta2", "pi"]),
                  st.floats(0.1, 5).map(lambda v: format(v, ".6g")))


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        children.map(lambda c: f"exp(-({c})**2)"),
        children.map(lambda c: f"log(1 + ({c})**2)"),
        children.map(lambda c: f"sqrt(1 + ({c})**2)"),
    )


@given(st.recursive(_leaf, _combine, max_leaves=8), st.floats(-2, 2), st.floats(0.1, 3))
def test_matches_python_semantics(text, t1, t2):
    ref = eval(text.replace("^", "**"), {"__builtins__": {}},
               {"theta1": t1, "theta2": t2, "pi": math.pi, "exp": math.exp, "log": math.log, "sqrt": math.sqrt})
    got = PriorExpression(text)(np.array([t1, t2]))
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)


@given(st.floats(-2, 2), st.floats(0.2, 3))
def test_prior_gradient_by_finite_differences(t1, t2):
    pr = prior_from_expression("-log(theta2) + theta1^2 / 2", 2)
    assert np.allclose(pr.gradient(np.array([t1, t2])), [t1, -1 / t2], rtol=1e-7, atol=1e-8)
