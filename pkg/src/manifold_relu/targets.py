"""Target functions on manifolds: built-ins and a small expression language."""

from __future__ import annotations

import ast
import math
import os
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import InputShapeError, PreconditionError

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh,
          "log": np.log}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}
_UNOPS = {ast.USub: np.negative, ast.UAdd: np.positive}


@dataclass(frozen=True)
class TargetFunction:
    """Real function on a manifold with declared Hölder smoothness ``(s, alpha)``.

    ``holder_scale`` overrides the per-chart derivative bound estimated
    from a pilot grid when it is not ``None``.
    """

    name: str
    evaluator: Callable
    s: int = 1
    alpha: float = 1.0
    sup_norm_R: float = 1.0
    holder_scale: Optional[float] = None

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 0:
            raise PreconditionError(f"s must be a nonnegative integer, got {self.s}")
        if not 0 < self.alpha <= 1:
            raise PreconditionError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.sup_norm_R > 0:
            raise PreconditionError("sup_norm_R must be positive")

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.asarray(self.evaluator(X), dtype=np.float64).reshape(X.shape[0])

    def with_holder_scale(self, value):
        return replace(self, holder_scale=value)


class _Compiler(ast.NodeVisitor):
    def __init__(self, dim):
        self.dim = dim

    def compile(self, text):
        tree = ast.parse(text.strip(), mode="eval")
        return self.visit(tree.body)

    def visit_Constant(self, node):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise PreconditionError(f"unsupported literal {node.value!r}")
        v = float(node.value)
        return lambda X: np.full(X.shape[0], v)

    def visit_Name(self, node):
        if node.id in _CONSTS:
            v = _CONSTS[node.id]
            return lambda X: np.full(X.shape[0], v)
        if node.id.startswith("x") and node.id[1:].isdigit():
            j = int(node.id[1:]) - 1
            if not 0 <= j < self.dim:
                raise PreconditionError(f"{node.id} is out of range for ambient dimension {self.dim}")
            return lambda X: X[:, j]
        raise PreconditionError(f"unknown name {node.id!r}")

    def visit_BinOp(self, node):
        op = _BINOPS.get(type(node.op))
        if op is None:
            raise PreconditionError(f"unsupported operator {type(node.op).__name__}")
        a, b = self.visit(node.left), self.visit(node.right)
        return lambda X: op(a(X), b(X))

    def visit_UnaryOp(self, node):
        op = _UNOPS.get(type(node.op))
        if op is None:
            raise PreconditionError(f"unsupported operator {type(node.op).__name__}")
        a = self.visit(node.operand)
        return lambda X: op(a(X))

    def visit_Call(self, node):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords or len(node.args) != 1:
            raise PreconditionError("only one-argument calls to " + ", ".join(sorted(_FUNCS)) + " are allowed")
        f, a = _FUNCS[node.func.id], self.visit(node.args[0])
        return lambda X: f(a(X))

    def generic_visit(self, node):
        raise PreconditionError(f"unsupported syntax {type(node).__name__}")


def parse_expression(text, dim):
    """Compile an arithmetic expression over ``x1..xD`` into a vectorised evaluator."""
    return _Compiler(dim).compile(text)


def _sampled_sup(f, m, n=200000, seed=12345):
    X = m.sample(n, seed)
    return float(np.abs(f(X)).max()) * 1.001 + 1e-12


def make_target(name, m, s=1, alpha=1.0, holder_scale=None):
    """Built-in target by id, an ``expr:<text>`` expression, or a path to an expression file.

    Built-ins: ``x1``, ``x1x2``, ``sin_angle`` (circle only) and ``zero``.
    """
    D = m.ambient_dim
    if name == "x1":
        if m.kind in ("circle", "sphere2"):
            R = abs(m.offset[0]) + m.radius * float(np.linalg.norm(m.embedding[0]))
        else:
            R = _sampled_sup(lambda X: X[:, 0], m)
        return TargetFunction("x1", lambda X: X[:, 0].copy(), s, alpha, R, holder_scale)
    if name == "x1x2":
        if D < 2:
            raise PreconditionError("x1x2 needs ambient dimension >= 2")
        f = lambda X: X[:, 0] * X[:, 1]
        return TargetFunction("x1x2", f, s, alpha, _sampled_sup(f, m), holder_scale)
    if name == "sin_angle":
        if m.kind != "circle":
            raise PreconditionError("sin_angle is only defined on the circle")
        return TargetFunction("sin_angle", lambda X: np.sin(m.intrinsic_angle(X)), s, alpha, 1.0, holder_scale)
    if name == "zero":
        return TargetFunction("zero", lambda X: np.zeros(X.shape[0]), s, alpha, 1.0, holder_scale)
    if name.startswith("expr:"):
        text, label = name[5:], name
    elif os.path.isfile(name):
        with open(name, "r", encoding="utf-8") as fh:
            text = " ".join(line.split("#", 1)[0] for line in fh).strip()
        label = os.path.basename(name)
    else:
        raise PreconditionError(f"unknown target {name!r}")
    f = parse_expression(text, D)
    R = _sampled_sup(f, m)
    if not math.isfinite(R):
        raise PreconditionError(f"target {label!r} is not finite on the manifold")
    return TargetFunction(label, f, s, alpha, max(R, 1e-12), holder_scale)


def check_points(X, dim):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != dim:
        raise InputShapeError(f"expected points of dimension {dim}, got {X.shape[1]}")
    return X
