"""Small arithmetic expression grammar compiled to sympy and numpy.

Accepted: numbers, ``+ - * / ^ **``, parentheses, ``sin cos exp``, ``pi`` and
the surface variables (``x, y, r2`` on the disk, ``s, t`` on the annulus)
plus ``time``.
"""

from __future__ import annotations

import ast

import numpy as np
import sympy as sp

_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}

TIME = sp.Symbol("time", real=True)
X, Y = sp.symbols("x y", real=True)
S, T = sp.symbols("s t", real=True)


def surface_symbols(kind):
    """Native coordinate symbols and named substitutions for a surface kind."""
    if kind == "disk":
        return (X, Y), {"x": X, "y": Y, "r2": X**2 + Y**2}
    if kind == "annulus":
        return (S, T), {"s": S, "t": T}
    raise ValueError(f"no expression variables for surface kind {kind!r}")


def parse_expression(text, kind):
    """Parse ``text`` into a sympy expression in the native variables of ``kind``."""
    _, names = surface_symbols(kind)
    names = dict(names, time=TIME, pi=sp.pi)
    try:
        # "^" is power in the grammar; python would parse it as xor with low precedence
        tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ValueError(f"unknown name {node.id!r} in {text!r}")
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = walk(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](walk(node.args[0]))
        raise ValueError(f"unsupported syntax {ast.dump(node)} in {text!r}")

    return walk(tree)


def lambdify_field(expr, kind):
    """numpy callable ``f(time, xy) -> (N,)`` for a sympy expression."""
    (u, v), _ = surface_symbols(kind)
    fn = sp.lambdify((TIME, u, v), expr, "numpy")

    def call(time, xy):
        xy = np.asarray(xy, dtype=float)
        out = fn(time, xy[..., 0], xy[..., 1])
        return np.broadcast_to(np.asarray(out, dtype=float), xy.shape[:-1]).copy()

    return call


def derivatives(expr, kind):
    """Compiled value, gradient and Hessian of ``expr`` in native variables."""
    (u, v), _ = surface_symbols(kind)
    grad = [sp.diff(expr, w) for w in (u, v)]
    hess = [[sp.diff(g, w) for w in (u, v)] for g in grad]
    value = lambdify_field(expr, kind)
    gfuns = [lambdify_field(g, kind) for g in grad]
    hfuns = [[lambdify_field(h, kind) for h in row] for row in hess]

    def gradient(time, xy):
        return np.stack([g(time, xy) for g in gfuns], axis=-1)

    def hessian(time, xy):
        return np.stack([np.stack([h(time, xy) for h in row], axis=-1) for row in hfuns], axis=-2)

    return value, gradient, hessian


def depends_on_time(expr):
    return TIME in expr.free_symbols
