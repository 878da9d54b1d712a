"""Math-expression fields for configuration files.

Expressions are parsed once at configuration time into vectorized numpy
closures; there is no runtime scripting.  Only arithmetic, comparisons,
``where`` and a small set of math functions are allowed.  Coordinates are
``x`` in 1D and ``x, y`` (aliases ``x1, x2``) in 2D.
"""

from __future__ import annotations

import ast

import numpy as np

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "where": np.where,
}

_CONSTANTS = {"pi": np.pi, "e": np.e}

_BIN_OPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}

_CMP_OPS = {
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
}


class ExpressionError(ValueError):
    """Expression uses syntax or names outside the allowed subset."""


def _check(node: ast.AST, variables: set[str], source: str) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, variables, source)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExpressionError(f"non-numeric constant in '{source}'")
    elif isinstance(node, ast.Name):
        if node.id not in variables and node.id not in _CONSTANTS:
            raise ExpressionError(f"unknown name '{node.id}' in '{source}'")
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BIN_OPS:
            raise ExpressionError(f"operator not allowed in '{source}'")
        _check(node.left, variables, source)
        _check(node.right, variables, source)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExpressionError(f"unary operator not allowed in '{source}'")
        _check(node.operand, variables, source)
    elif isinstance(node, ast.Compare):
        if len(node.ops) != 1 or type(node.ops[0]) not in _CMP_OPS:
            raise ExpressionError(f"comparison not allowed in '{source}'")
        _check(node.left, variables, source)
        _check(node.comparators[0], variables, source)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ExpressionError(f"function not allowed in '{source}'")
        if node.keywords:
            raise ExpressionError(f"keyword arguments not allowed in '{source}'")
        for arg in node.args:
            _check(arg, variables, source)
    else:
        raise ExpressionError(
            f"syntax element {type(node).__name__} not allowed in '{source}'"
        )


def _evaluate(node: ast.AST, env: dict):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, env)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _CONSTANTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BIN_OPS[type(node.op)](_evaluate(node.left, env), _evaluate(node.right, env))
    if isinstance(node, ast.UnaryOp):
        value = _evaluate(node.operand, env)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.Compare):
        return _CMP_OPS[type(node.ops[0])](
            _evaluate(node.left, env), _evaluate(node.comparators[0], env)
        )
    if isinstance(node, ast.Call):
        args = [_evaluate(arg, env) for arg in node.args]
        return _FUNCTIONS[node.func.id](*args)
    raise AssertionError("unreachable: expression was validated")


def compile_field(source: str, dimension: int):
    """Compile an expression string into a field callable (points -> values)."""
    variables = {"x"} if dimension == 1 else {"x", "y", "x1", "x2"}
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse '{source}': {exc}") from exc
    _check(tree, variables, source)

    def field(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        env = {"x": points[:, 0], "x1": points[:, 0]}
        if dimension == 2:
            env["y"] = points[:, 1]
            env["x2"] = points[:, 1]
        out = np.asarray(_evaluate(tree, env), dtype=float)
        if out.ndim == 0:
            out = np.full(points.shape[0], float(out))
        return out

    return field
