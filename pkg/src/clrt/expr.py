"""Expression graphs traced from plain Python right-hand sides.

A vector field is written once as ``rhs(t, x, p)`` using ordinary arithmetic
and the math functions of this module (:func:`sin`, :func:`cos`, :func:`exp`,
:func:`log`, :func:`sqrt`, :func:`sqr`).  Those functions dispatch on their
argument, so the same code runs on floats, numpy arrays, :class:`Interval`
objects, and :class:`Expr` tracers.  Tracing records a hash-consed DAG (common
subexpressions are shared) from which the Jacobian is derived symbolically and
Taylor coefficients are generated by recurrence.
"""

from __future__ import annotations

import numbers

import numpy as np

from .interval import Interval

__all__ = [
    "Graph",
    "Expr",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "sqr",
    "trace",
    "UNARY_OPS",
    "BINARY_OPS",
]

UNARY_OPS = ("neg", "sqr", "sqrt", "exp", "log", "sin", "cos")
BINARY_OPS = ("add", "sub", "mul", "div")


class Graph:
    """Append-only list of nodes ``(op, args, value)`` in topological order."""

    def __init__(self):
        self.nodes: list[tuple] = []
        self._index: dict = {}

    def node(self, op: str, args: tuple = (), value=None) -> int:
        key = (op, args, value)
        idx = self._index.get(key)
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(key)
            self._index[key] = idx
        return idx

    def const(self, value: float) -> int:
        return self.node("const", (), float(value))

    def const_value(self, idx: int):
        op, _, value = self.nodes[idx]
        return value if op == "const" else None

    # simplifying constructors, used by the tracer and the differentiator
    def add(self, a: int, b: int) -> int:
        ca, cb = self.const_value(a), self.const_value(b)
        if ca is not None and cb is not None:
            return self.const(ca + cb)
        if ca == 0.0:
            return b
        if cb == 0.0:
            return a
        return self.node("add", (a, b) if a <= b else (b, a))

    def sub(self, a: int, b: int) -> int:
        ca, cb = self.const_value(a), self.const_value(b)
        if ca is not None and cb is not None:
            return self.const(ca - cb)
        if cb == 0.0:
            return a
        if ca == 0.0:
            return self.neg(b)
        if a == b:
            return self.const(0.0)
        return self.node("sub", (a, b))

    def neg(self, a: int) -> int:
        ca = self.const_value(a)
        if ca is not None:
            return self.const(-ca)
        op, args, _ = self.nodes[a]
        if op == "neg":
            return args[0]
        return self.node("neg", (a,))

    def mul(self, a: int, b: int) -> int:
        ca, cb = self.const_value(a), self.const_value(b)
        if ca is not None and cb is not None:
            return self.const(ca * cb)
        if ca == 0.0 or cb == 0.0:
            return self.const(0.0)
        if ca == 1.0:
            return b
        if cb == 1.0:
            return a
        if ca == -1.0:
            return self.neg(b)
        if cb == -1.0:
            return self.neg(a)
        if a == b:
            return self.node("sqr", (a,))
        return self.node("mul", (a, b) if a <= b else (b, a))

    def div(self, a: int, b: int) -> int:
        ca, cb = self.const_value(a), self.const_value(b)
        if ca is not None and cb is not None and cb != 0.0:
            return self.const(ca / cb)
        if ca == 0.0:
            return self.const(0.0)
        if cb == 1.0:
            return a
        return self.node("div", (a, b))

    def unary(self, op: str, a: int) -> int:
        if op == "neg":
            return self.neg(a)
        ca = self.const_value(a)
        if ca is not None and op in ("sqr",):
            return self.const(ca * ca)
        return self.node(op, (a,))

    # -- symbolic differentiation --------------------------------------------
    def derivative(self, out: int, var: int) -> int:
        """Node for d(out)/d(var) where ``var`` is a variable node."""
        memo: dict[int, int] = {}
        zero = self.const(0.0)
        for idx in range(out + 1):
            op, args, _ = self.nodes[idx]
            if op == "const":
                d = zero
            elif op == "var":
                d = self.const(1.0) if idx == var else zero
            elif op == "add":
                d = self.add(memo[args[0]], memo[args[1]])
            elif op == "sub":
                d = self.sub(memo[args[0]], memo[args[1]])
            elif op == "neg":
                d = self.neg(memo[args[0]])
            elif op == "mul":
                a, b = args
                d = self.add(self.mul(memo[a], b), self.mul(a, memo[b]))
            elif op == "div":
                a, b = args
                d = self.div(self.sub(memo[a], self.mul(idx, memo[b])), b)
            elif op == "sqr":
                a = args[0]
                d = self.mul(self.mul(self.const(2.0), a), memo[a])
            elif op == "sqrt":
                a = args[0]
                d = self.div(memo[a], self.mul(self.const(2.0), idx))
            elif op == "exp":
                d = self.mul(idx, memo[args[0]])
            elif op == "log":
                d = self.div(memo[args[0]], args[0])
            elif op == "sin":
                a = args[0]
                d = self.mul(self.unary("cos", a), memo[a])
            elif op == "cos":
                a = args[0]
                d = self.neg(self.mul(self.unary("sin", a), memo[a]))
            else:  # pragma: no cover
                raise ValueError(f"unknown node {op}")
            memo[idx] = d
        return memo[out]

    def depends_on(self, variables) -> np.ndarray:
        """Boolean mask of nodes that depend on any of ``variables``."""
        dep = np.zeros(len(self.nodes), dtype=bool)
        for v in variables:
            dep[v] = True
        for idx, (op, args, _) in enumerate(self.nodes):
            if args and any(dep[a] for a in args):
                dep[idx] = True
        return dep

    def evaluate(self, outputs, env: dict):
        """Evaluate ``outputs`` with variables bound through ``env`` (node -> value).

        Values may be floats, numpy arrays or :class:`Interval` objects; the
        operations dispatch through Python operators and this module's math
        functions.
        """
        last = max(outputs) if len(outputs) else -1
        vals: list = [None] * (last + 1)
        for idx in range(last + 1):
            op, args, value = self.nodes[idx]
            if op == "var":
                vals[idx] = env[idx]
            elif op == "const":
                vals[idx] = value
            elif op == "add":
                vals[idx] = vals[args[0]] + vals[args[1]]
            elif op == "sub":
                vals[idx] = vals[args[0]] - vals[args[1]]
            elif op == "mul":
                vals[idx] = vals[args[0]] * vals[args[1]]
            elif op == "div":
                vals[idx] = vals[args[0]] / vals[args[1]]
            else:
                vals[idx] = _DISPATCH[op](vals[args[0]])
        return [vals[o] for o in outputs]


class Expr:
    """Tracer standing for one node of a :class:`Graph`."""

    __slots__ = ("graph", "idx")
    __array_ufunc__ = None

    def __init__(self, graph: Graph, idx: int):
        self.graph = graph
        self.idx = idx

    def _wrap(self, other) -> int:
        if isinstance(other, Expr):
            if other.graph is not self.graph:
                raise ValueError("mixing expressions from different graphs")
            return other.idx
        if isinstance(other, numbers.Real):
            return self.graph.const(float(other))
        raise TypeError(f"cannot trace operand of type {type(other).__name__}")

    def _new(self, idx: int) -> "Expr":
        return Expr(self.graph, idx)

    def __add__(self, o):
        return self._new(self.graph.add(self.idx, self._wrap(o)))

    def __radd__(self, o):
        return self._new(self.graph.add(self._wrap(o), self.idx))

    def __sub__(self, o):
        return self._new(self.graph.sub(self.idx, self._wrap(o)))

    def __rsub__(self, o):
        return self._new(self.graph.sub(self._wrap(o), self.idx))

    def __mul__(self, o):
        return self._new(self.graph.mul(self.idx, self._wrap(o)))

    def __rmul__(self, o):
        return self._new(self.graph.mul(self._wrap(o), self.idx))

    def __truediv__(self, o):
        return self._new(self.graph.div(self.idx, self._wrap(o)))

    def __rtruediv__(self, o):
        return self._new(self.graph.div(self._wrap(o), self.idx))

    def __neg__(self):
        return self._new(self.graph.neg(self.idx))

    def __pos__(self):
        return self

    def __pow__(self, n):
        if not isinstance(n, numbers.Integral) or n < 0:
            raise TypeError("only nonnegative integer powers can be traced")
        n = int(n)
        if n == 0:
            return self._new(self.graph.const(1.0))
        result = None
        base = self
        while n:
            if n & 1:
                result = base if result is None else result * base
            n >>= 1
            if n:
                base = base._unary("sqr")
        return result

    def _unary(self, op: str) -> "Expr":
        return self._new(self.graph.unary(op, self.idx))

    def __repr__(self):
        return f"Expr(#{self.idx}: {self.graph.nodes[self.idx][0]})"


def _make(op: str, np_fn, iv_method: str):
    def fn(x):
        if isinstance(x, Expr):
            return x._unary(op)
        if isinstance(x, Interval):
            return getattr(x, iv_method)()
        return np_fn(x)

    fn.__name__ = op
    fn.__doc__ = f"``{op}`` for floats, arrays, intervals and traced expressions."
    return fn


sin = _make("sin", np.sin, "sin")
cos = _make("cos", np.cos, "cos")
exp = _make("exp", np.exp, "exp")
log = _make("log", np.log, "log")
sqrt = _make("sqrt", np.sqrt, "sqrt")
sqr = _make("sqr", np.square, "sqr")

_DISPATCH = {
    "neg": lambda v: -v,
    "sqr": sqr,
    "sqrt": sqrt,
    "exp": exp,
    "log": log,
    "sin": sin,
    "cos": cos,
}


class Traced:
    """Result of :func:`trace`: the graph plus variable and output node indices."""

    def __init__(self, graph: Graph, t_var: int, x_vars: list[int], f_out: list[int]):
        self.graph = graph
        self.t_var = t_var
        self.x_vars = x_vars
        self.f_out = f_out
        self.dim = len(x_vars)
        self.jac_out = [[graph.derivative(fo, xv) for xv in x_vars] for fo in f_out]
        self.dt_out = [graph.derivative(fo, t_var) for fo in f_out]
        dep = graph.depends_on([t_var])
        self.time_variant = any(dep[o] for o in f_out)

    def env(self, t, xs) -> dict:
        env = {self.t_var: t}
        for v, xi in zip(self.x_vars, xs):
            env[v] = xi
        return env

    def eval_f(self, t, xs):
        return self.graph.evaluate(self.f_out, self.env(t, xs))

    def eval_dt(self, t, xs):
        return self.graph.evaluate(self.dt_out, self.env(t, xs))

    def eval_jac(self, t, xs):
        flat = [o for row in self.jac_out for o in row]
        vals = self.graph.evaluate(flat, self.env(t, xs))
        n = self.dim
        return [vals[i * n:(i + 1) * n] for i in range(n)]


def trace(rhs, dim: int, params: dict) -> Traced:
    """Record ``rhs(t, x, params)`` as an expression graph."""
    g = Graph()
    t = Expr(g, g.node("var", (), "t"))
    xs = [Expr(g, g.node("var", (), i)) for i in range(dim)]
    out = rhs(t, xs, params)
    if len(out) != dim:
        raise ValueError(f"rhs returned {len(out)} components for dimension {dim}")
    f_out = []
    for comp in out:
        if isinstance(comp, Expr):
            f_out.append(comp.idx)
        else:
            f_out.append(g.const(float(comp)))
    return Traced(g, t.idx, [x.idx for x in xs], f_out)
