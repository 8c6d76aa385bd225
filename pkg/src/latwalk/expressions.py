"""Safe arithmetic expressions for config files.

Grammar: numbers, the constants pi and e, the coordinate names x, y, z and
time t, binary + - * /, unary minus, and calls to exp, log, cos, sin.
Everything evaluates vectorized over numpy arrays.
"""

from __future__ import annotations

import ast

import numpy as np

from .errors import ConfigError

_FUNCTIONS = {"exp": np.exp, "log": np.log, "cos": np.cos, "sin": np.sin}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_VARIABLES = ("x", "y", "z", "t")

_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract,
           ast.Mult: np.multiply, ast.Div: np.divide}


class Expression:
    """A parsed expression; call with keyword arrays for its free variables."""

    def __init__(self, source: str):
        self.source = source
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"bad expression {source!r}: {exc.msg}") from exc
        self.free_vars = set()
        self._validate(tree.body)
        self._tree = tree.body

    def _validate(self, node) -> None:
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ConfigError(f"non-numeric constant in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id in _VARIABLES:
                self.free_vars.add(node.id)
            elif node.id not in _CONSTANTS:
                raise ConfigError(f"unknown name {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._validate(node.left)
            self._validate(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            self._validate(node.operand)
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCTIONS):
                raise ConfigError(f"unknown function in {self.source!r}")
            if len(node.args) != 1 or node.keywords:
                raise ConfigError(f"functions take one argument in {self.source!r}")
            self._validate(node.args[0])
        else:
            raise ConfigError(
                f"unsupported syntax in {self.source!r}; allowed: numbers, "
                f"pi, e, {', '.join(_VARIABLES)}, + - * /, exp/log/cos/sin")

    def __call__(self, **values):
        return self._eval(self._tree, values)

    def _eval(self, node, values):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in values:
                return values[node.id]
            if node.id in _CONSTANTS:
                return _CONSTANTS[node.id]
            raise ConfigError(f"variable {node.id!r} not supplied")
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, values),
                                          self._eval(node.right, values))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, values)
            return -val if isinstance(node.op, ast.USub) else val
        return _FUNCTIONS[node.func.id](self._eval(node.args[0], values))

    def on_points(self, points, t=None):
        """Evaluate over an (n, d) coordinate array, broadcasting scalars."""
        pts = np.atleast_2d(np.asarray(points, float))
        values = {}
        for axis, name in enumerate(("x", "y", "z")):
            if name in self.free_vars:
                if axis >= pts.shape[1]:
                    raise ConfigError(
                        f"expression {self.source!r} uses {name!r} but points "
                        f"are {pts.shape[1]}-dimensional")
                values[name] = pts[:, axis]
        if "t" in self.free_vars:
            if t is None:
                raise ConfigError(f"expression {self.source!r} needs t")
            values["t"] = t
        out = self(**values)
        return np.broadcast_to(np.asarray(out, float), (pts.shape[0],)).copy()

    @property
    def time_dependent(self) -> bool:
        return "t" in self.free_vars


def spatial_function(source: str):
    """Expression as f(points) -> array."""
    expr = Expression(source)
    if expr.time_dependent:
        raise ConfigError(f"{source!r} must not depend on t here")
    return lambda pts: expr.on_points(pts)


def spacetime_function(source: str):
    """Expression as f(t, points) -> array, plus its time-dependence flag."""
    expr = Expression(source)
    if expr.time_dependent:
        return (lambda t, pts: expr.on_points(pts, t=t)), True
    return (lambda t, pts: expr.on_points(pts)), False
