import numpy as np
import pytest

from hetns.errors import ConfigError
from hetns.expr import Expression, coefficient_function, field_function


def test_field_function_broadcasts():
    f = field_function("1 + 0.5*cos(2*pi*x) + t", 1)
    x = np.linspace(0, 1, 5)[None]
    assert np.allclose(f(0.25, x), 1.25 + 0.5 * np.cos(2 * np.pi * x[0]))
    assert field_function("2", 2)(0.0, np.zeros((2, 3, 3))).shape == (3, 3)


def test_coefficient_function():
    b = coefficient_function("exp(-theta)")
    assert b(np.array([0.0, 1.0])) == pytest.approx([1.0, np.exp(-1)])


@pytest.mark.parametrize("src", [
    "__import__('os')", "x.real", "[x]", "lambda: 1", "open('f')", "z + 1", "'a'", "x if x else 1",
])
def test_rejects_unsafe_or_unknown(src):
    with pytest.raises(ConfigError):
        Expression(src, ("x",))


def test_syntax_error():
    with pytest.raises(ConfigError, match="cannot parse"):
        Expression("1 +", ("x",))
