"""Whitelisted arithmetic expressions over numpy, used for fields and coefficients in config files."""
import ast

import numpy as np

from .errors import ConfigError

FUNCTIONS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "abs": np.abs, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh, "arctan": np.arctan,
    "minimum": np.minimum, "maximum": np.maximum, "where": np.where, "heaviside": np.heaviside,
}
CONSTANTS = {"pi": np.pi, "e": np.e}

_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant, ast.Compare,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.USub, ast.UAdd,
    ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq,
)


class Expression:
    """A compiled expression in the given variables, e.g. ``Expression("1 + 0.5*cos(2*pi*x)", ("x",))``."""

    def __init__(self, source, variables):
        self.source = str(source)
        self.variables = tuple(variables)
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ConfigError([f"cannot parse expression {self.source!r}: {exc.msg}"]) from None
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED):
                raise ConfigError([f"expression {self.source!r} uses disallowed syntax {type(node).__name__}"])
            if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS):
                raise ConfigError([f"expression {self.source!r} calls an unknown function"])
            if isinstance(node, ast.Name) and node.id not in FUNCTIONS and node.id not in CONSTANTS \
                    and node.id not in self.variables:
                raise ConfigError([f"expression {self.source!r} uses unknown name {node.id!r}"])
            if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise ConfigError([f"expression {self.source!r} contains a non-numeric literal"])
        self._code = compile(tree, "<expr>", "eval")

    def __call__(self, **values):
        env = dict(FUNCTIONS)
        env.update(CONSTANTS)
        env.update(values)
        return eval(self._code, {"__builtins__": {}}, env)

    def __repr__(self):
        return f"Expression({self.source!r})"


def field_function(source, d, extra=()):
    """``f(t, x)`` from an expression in ``t``, ``x`` (and ``y`` when d = 2)."""
    names = ("t", "x", "y")[: d + 1] + tuple(extra)
    ex = Expression(source, names)

    def f(t, X, **kw):
        X = np.asarray(X, dtype=float)
        coords = {"x": X[0]}
        if d == 2:
            coords["y"] = X[1]
        out = ex(t=t, **coords, **kw)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(np.asarray(t), X[0]).shape) * 1.0

    f.expression = ex
    return f


def coefficient_function(source):
    """``B(theta)`` from an expression in ``theta``."""
    ex = Expression(source, ("theta",))

    def f(theta):
        theta = np.asarray(theta, dtype=float)
        return np.broadcast_to(np.asarray(ex(theta=theta), dtype=float), theta.shape) * 1.0

    f.expression = ex
    return f
