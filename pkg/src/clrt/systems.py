"""ODE systems ``x' = f(t, x)``: registry, point/interval evaluation, Jacobians.

Right-hand sides are plain Python functions ``rhs(t, x, p)`` returning a list
of components; they are written with the dispatching math functions of
:mod:`clrt.expr`, so one definition serves float, array, interval and traced
evaluation.  Jacobians are derived symbolically from the traced graph.
Parameter values and initial sets of the built-in benchmarks live in JSON
files under ``clrt/data/systems`` so they can be corrected without code
changes.
"""

from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping

import numpy as np

from .errors import BadParameter, DimensionMismatch, UnknownSystem
from .expr import Traced, cos, exp, log, sin, sqr, sqrt, trace
from .interval import Interval, stack

__all__ = [
    "OdeSystem",
    "builtin",
    "builtin_names",
    "builtin_spec",
    "eval_f",
    "eval_jac",
    "eval_dt",
    "RHS",
    "system_from_equations",
]


@dataclass(frozen=True, eq=False)
class OdeSystem:
    """A vector field with its Jacobian, evaluable on points and interval boxes.

    State arrays put the state index last, so ``x`` may be a single state of
    shape ``(n,)`` or a batch of shape ``(..., n)``.
    """

    name: str
    dim: int
    rhs: Callable
    params: Mapping[str, float] = field(default_factory=dict)
    traced: Traced = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "traced", trace(self.rhs, self.dim, self.params))

    @property
    def time_variant(self) -> bool:
        return self.traced.time_variant

    def f(self, t, x):
        return eval_f(self, t, x)

    def jac(self, t, x):
        return eval_jac(self, t, x)


def _components(x, dim):
    if x.shape[-1] != dim:
        raise DimensionMismatch(f"state has dimension {x.shape[-1]}, system has {dim}")
    return [x[..., i] for i in range(dim)]


def _assemble(vals, batch_shape, interval: bool):
    if interval:
        out = stack([v if isinstance(v, Interval) else Interval._raw(np.asarray(v, float), np.asarray(v, float))
                     for v in vals], axis=-1)
        target = batch_shape + (len(vals),)
        if out.shape != target:
            out = Interval._raw(np.broadcast_to(out.lo, target).copy(), np.broadcast_to(out.hi, target).copy())
        return out
    arrs = np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in vals],
                               np.empty(batch_shape))[:-1]
    return np.stack(arrs, axis=-1)


def _prepare(sys: OdeSystem, t, x):
    interval = isinstance(x, Interval) or isinstance(t, Interval)
    if interval and not isinstance(x, Interval):
        x = np.asarray(x, dtype=float)
        x = Interval._raw(x, x)
    if not interval:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float) if not np.isscalar(t) else float(t)
    elif not isinstance(t, Interval):
        t = Interval._raw(np.asarray(t, dtype=float), np.asarray(t, dtype=float))
    return t, x, interval


def eval_f(sys: OdeSystem, t, x):
    """``f(t, x)`` on points (arrays) or a conservative enclosure on intervals."""
    t, x, interval = _prepare(sys, t, x)
    vals = sys.traced.eval_f(t, _components(x, sys.dim))
    return _assemble(vals, x.shape[:-1], interval)


def eval_dt(sys: OdeSystem, t, x):
    """Partial derivative ``df/dt`` (zero for time-invariant fields)."""
    t, x, interval = _prepare(sys, t, x)
    vals = sys.traced.eval_dt(t, _components(x, sys.dim))
    return _assemble(vals, x.shape[:-1], interval)


def eval_jac(sys: OdeSystem, t, x):
    """``df/dx`` with shape ``(..., n, n)``; enclosure when given intervals."""
    t, x, interval = _prepare(sys, t, x)
    rows = sys.traced.eval_jac(t, _components(x, sys.dim))
    batch = x.shape[:-1]
    cols = [_assemble(r, batch, interval) for r in rows]
    if interval:
        return stack(cols, axis=-2)
    return np.stack(cols, axis=-2)


# ---------------------------------------------------------------------------
# built-in vector fields; constants come from the JSON parameter files
# ---------------------------------------------------------------------------

def _dubins(t, x, p):
    return [cos(x[2]), sin(x[2]), x[0] * sin(t)]


def _brusselator(t, x, p):
    a, b = p["a"], p["b"]
    x2y = x[0] * x[0] * x[1]
    return [a + x2y - (b + 1.0) * x[0], b * x[0] - x2y]


def _inverse_vdp(t, x, p):
    mu = p["mu"]
    return [-x[1], x[0] - mu * (1.0 - x[0] * x[0]) * x[1]]


def _forced_vdp(t, x, p):
    mu, amp, omega = p["mu"], p["amplitude"], p["omega"]
    return [x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0] + amp * cos(omega * t)]


def _mitchell_schaeffer(t, x, p):
    v, g = x[0], x[1]
    gate = 1.0 / (1.0 + exp(-p["gate_slope"] * (v - p["v_gate"])))
    dv = g * v * v * (1.0 - v) / p["tau_in"] - v / p["tau_out"]
    dg = (1.0 - gate) * (1.0 - g) / p["tau_open"] - gate * g / p["tau_close"]
    return [dv, dg]


def _robot_arm(t, x, p):
    m, l = p["m"], p["l"]
    kp1, kp2, kd1, kd2 = p["kp1"], p["kp2"], p["kd1"], p["kd2"]
    r1, r2 = p["r1"], p["r2"]
    inertia = m * x[1] * x[1] + m * l / 3.0
    dx3 = (-2.0 * m * x[1] * x[2] * x[3] - kp1 * x[0] - kd1 * x[2] + kp1 * r1) / inertia
    dx4 = x[1] * x[2] * x[2] - kp2 * x[1] / m - kd2 * x[3] / m + kp2 * r2 / m
    return [x[2], x[3], dx3, dx4]


def _biology7(t, x, p):
    k1, k2 = p["k1"], p["k2"]
    x34 = k2 * x[2] * x[3]
    x56 = k2 * x[4] * x[5]
    return [
        -k1 * x[0] + x34,
        k1 * x[0] - x[1],
        x[1] - x34,
        x56 - x34,
        -x56 + x34,
        0.5 * x[6] - x56,
        -0.5 * x[6] + x56,
    ]


def _coupled_vdp12(t, x, p):
    mu, c = p["mu"], p["coupling"]
    out = []
    n_osc = 6
    for i in range(n_osc):
        q, v = x[2 * i], x[2 * i + 1]
        q_next = x[2 * ((i + 1) % n_osc)]
        out.append(v)
        out.append(mu * (1.0 - q * q) * v - q + c * (q_next - q))
    return out


RHS: dict[str, Callable] = {
    "dubins": _dubins,
    "brusselator": _brusselator,
    "inverse_vdp": _inverse_vdp,
    "forced_vdp": _forced_vdp,
    "mitchell_schaeffer": _mitchell_schaeffer,
    "robot_arm": _robot_arm,
    "biology7": _biology7,
    "polynomial12": _coupled_vdp12,
}


def builtin_names() -> list[str]:
    return sorted(RHS)


def builtin_spec(name: str) -> dict:
    """Raw JSON record (parameters, initial set, provenance) of a built-in system."""
    if name not in RHS:
        raise UnknownSystem(name)
    text = resources.files("clrt").joinpath("data", "systems", f"{name}.json").read_text()
    return json.loads(text)


def builtin(name: str, overrides: Mapping[str, float] | None = None) -> OdeSystem:
    """Look up a registered system, optionally overriding named parameters."""
    spec = builtin_spec(name)
    params = dict(spec["params"])
    for key, value in (overrides or {}).items():
        if key not in params:
            raise BadParameter(f"{name} has no parameter {key!r}")
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise BadParameter(f"parameter {key!r} must be a real number") from None
        if not math.isfinite(value):
            raise BadParameter(f"parameter {key!r} must be finite")
        params[key] = value
    return OdeSystem(name=name, dim=int(spec["dim"]), rhs=RHS[name], params=params)


# ---------------------------------------------------------------------------
# systems defined by equation strings (configuration files)
# ---------------------------------------------------------------------------

_FUNCS = {"sin": sin, "cos": cos, "exp": exp, "log": log, "sqrt": sqrt, "sqr": sqr}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def _ipow(base, k: int):
    out = base
    for _ in range(k - 1):
        out = out * base
    return out


class _PowRewriter(ast.NodeTransformer):
    def visit_BinOp(self, node):
        self.generic_visit(node)
        if isinstance(node.op, ast.Pow):
            return ast.Call(func=ast.Name("_ipow", ast.Load()), args=[node.left, node.right], keywords=[])
        return node


def _check_equation(tree: ast.AST, dim: int, names: set[str], text: str):
    def bad(why):
        return BadParameter(f"equation {text!r}: {why}")

    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load, ast.operator, ast.unaryop)):
            continue
        if isinstance(node, ast.BinOp):
            if not isinstance(node.op, _BINOPS):
                raise bad(f"operator {type(node.op).__name__} not allowed")
            if isinstance(node.op, ast.Pow):
                e = node.right
                if not (isinstance(e, ast.Constant) and isinstance(e.value, int) and e.value >= 1):
                    raise bad("exponents must be positive integer literals")
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise bad("only unary + and - are allowed")
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                    and len(node.args) == 1 and not node.keywords):
                raise bad("only one-argument calls of " + ", ".join(sorted(_FUNCS)) + " are allowed")
        elif isinstance(node, ast.Subscript):
            idx = node.slice
            if not (isinstance(node.value, ast.Name) and node.value.id == "x"
                    and isinstance(idx, ast.Constant) and isinstance(idx.value, int)
                    and 0 <= idx.value < dim):
                raise bad(f"state access must be x[i] with 0 <= i < {dim}")
        elif isinstance(node, ast.Name):
            if node.id not in names and node.id not in _FUNCS:
                raise bad(f"unknown name {node.id!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise bad("only numeric literals are allowed")
        else:
            raise bad(f"{type(node).__name__} not allowed")


def system_from_equations(name: str, equations: list[str], params: Mapping[str, float] | None = None) -> OdeSystem:
    """System whose components are arithmetic expressions in ``t``, ``x[i]`` and parameters.

    Allowed: numbers, ``+ - * /``, ``**`` with positive integer literal
    exponents, and ``sin cos exp log sqrt sqr``.  Anything else is rejected
    with :class:`BadParameter`.
    """
    params = {k: float(v) for k, v in (params or {}).items()}
    dim = len(equations)
    if dim == 0:
        raise BadParameter("a system needs at least one equation")
    names = {"t", "x"} | set(params)
    clash = set(params) & ({"t", "x", "_ipow"} | set(_FUNCS))
    if clash:
        raise BadParameter(f"parameter names clash with reserved names: {sorted(clash)}")
    codes = []
    for text in equations:
        try:
            tree = ast.parse(str(text), mode="eval")
        except SyntaxError as exc:
            raise BadParameter(f"equation {text!r}: {exc.msg}") from None
        _check_equation(tree, dim, names, text)
        tree = ast.fix_missing_locations(_PowRewriter().visit(tree))
        codes.append(compile(tree, f"<{name}>", "eval"))

    def rhs(t, x, p):
        env = dict(_FUNCS)
        env.update(p)
        env.update(t=t, x=x, _ipow=_ipow)
        return [eval(code, {"__builtins__": {}}, env) for code in codes]

    return OdeSystem(name=name, dim=dim, rhs=rhs, params=params)
