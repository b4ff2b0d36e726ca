"""Interval Taylor coefficients of ODE solutions by automatic recurrence.

Given a traced vector field, :func:`solution_coefficients` returns the Taylor
coefficients ``x_k`` of the solution through ``(t0, x0)`` and, optionally, the
coefficients ``V_k`` of the variational solution with ``V(t0) = V0``.  Every
node of the expression graph carries its own coefficient sequence, built order
by order with the classical recurrences (convolution for products, the
``w' = w u'`` identity for ``exp``, paired recurrences for ``sin``/``cos``).
All arithmetic is interval arithmetic on ``(lo, hi)`` arrays, and a leading
batch axis lets several expansion points share one pass.
"""

from __future__ import annotations

import numpy as np

from .expr import Traced
from .interval import (
    Interval,
    r_add,
    r_cos,
    r_div,
    r_exp,
    r_log,
    r_mul,
    r_neg,
    r_sin,
    r_sqr,
    r_sqrt,
    r_sub,
    r_sum,
)

__all__ = ["solution_coefficients"]


def _scale(c, k):
    lo, hi = c
    return r_mul(lo, hi, float(k), float(k))


def _divk(c, k):
    lo, hi = c
    return r_div(lo, hi, float(k), float(k))


def _dot(pairs):
    """Sum of interval products over a list of (u, v) coefficient pairs."""
    pairs = [(u, v) for u, v in pairs if u is not None and v is not None]
    if not pairs:
        return None
    if len(pairs) == 1:
        (ulo, uhi), (vlo, vhi) = pairs[0]
        return r_mul(ulo, uhi, vlo, vhi)
    ulo = np.stack([u[0] for u, _ in pairs])
    uhi = np.stack([u[1] for u, _ in pairs])
    vlo = np.stack([v[0] for _, v in pairs])
    vhi = np.stack([v[1] for _, v in pairs])
    lo, hi = r_mul(ulo, uhi, vlo, vhi)
    return r_sum(lo, hi, 0)


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return r_add(a[0], a[1], b[0], b[1])


def _sub(a, b):
    if b is None:
        return a
    if a is None:
        return r_neg(*b)
    return r_sub(a[0], a[1], b[0], b[1])


class _Tape:
    def __init__(self, traced: Traced, batch: int):
        self.tr = traced
        self.g = traced.graph
        self.B = batch
        n_nodes = len(self.g.nodes)
        self.c: list[list] = [[] for _ in range(n_nodes)]
        self.t_dep = self.g.depends_on([traced.t_var])
        self.x_dep = self.g.depends_on(traced.x_vars)
        self.var_pos = {v: i for i, v in enumerate(traced.x_vars)}
        self.last = max(list(traced.f_out) + [o for row in traced.jac_out for o in row])
        self._partners: dict[int, list] = {}  # cos sequence of a sin node and vice versa

    def _const(self, value):
        v = np.full(self.B, value)
        return v, v

    def order(self, k, t0, xk):
        """Compute coefficient ``k`` of every node (``xk``: list of state coefficients)."""
        g = self.g
        B = self.B
        for idx in range(self.last + 1):
            op, args, value = g.nodes[idx]
            c = self.c[idx]
            if op == "const":
                c.append(self._const(value) if k == 0 else None)
                continue
            if op == "var":
                if idx == self.tr.t_var:
                    if k == 0:
                        c.append((np.broadcast_to(t0[0], (B,)), np.broadcast_to(t0[1], (B,))))
                    elif k == 1:
                        c.append(self._const(1.0))
                    else:
                        c.append(None)
                else:
                    c.append(xk[self.var_pos[idx]])
                continue
            if k > 0 and not (self.t_dep[idx] or self.x_dep[idx]):
                c.append(None)
                continue
            a = self.c[args[0]]
            if op == "add":
                c.append(_add(a[k], self.c[args[1]][k]))
            elif op == "sub":
                c.append(_sub(a[k], self.c[args[1]][k]))
            elif op == "neg":
                c.append(None if a[k] is None else r_neg(*a[k]))
            elif op == "mul":
                b = self.c[args[1]]
                c.append(_dot([(a[j], b[k - j]) for j in range(k + 1)]))
            elif op == "sqr":
                if k == 0:
                    c.append(r_sqr(*a[0]))
                else:
                    half = _dot([(a[j], a[k - j]) for j in range((k + 1) // 2)])
                    s = None if half is None else _scale(half, 2)
                    if k % 2 == 0 and a[k // 2] is not None:
                        s = _add(s, r_sqr(*a[k // 2]))
                    c.append(s)
            elif op == "div":
                b = self.c[args[1]]
                if k == 0:
                    c.append(r_div(a[0][0], a[0][1], b[0][0], b[0][1]))
                else:
                    acc = _sub(a[k], _dot([(b[j], c[k - j]) for j in range(1, k + 1)]))
                    c.append(None if acc is None else r_div(acc[0], acc[1], b[0][0], b[0][1]))
            elif op == "exp":
                if k == 0:
                    c.append(r_exp(*a[0]))
                else:
                    s = _dot([(_scale(a[j], j) if a[j] is not None else None, c[k - j])
                              for j in range(1, k + 1)])
                    c.append(None if s is None else _divk(s, k))
            elif op == "sqrt":
                if k == 0:
                    c.append(r_sqrt(*a[0]))
                else:
                    acc = _sub(a[k], _dot([(c[j], c[k - j]) for j in range(1, k)]))
                    if acc is None:
                        c.append(None)
                    else:
                        den = _scale(c[0], 2)
                        c.append(r_div(acc[0], acc[1], den[0], den[1]))
            elif op == "log":
                if k == 0:
                    c.append(r_log(*a[0]))
                else:
                    s = _dot([(_scale(c[j], j) if c[j] is not None else None, a[k - j])
                              for j in range(1, k)])
                    s = None if s is None else _divk(s, k)
                    acc = _sub(a[k], s)
                    c.append(None if acc is None else r_div(acc[0], acc[1], a[0][0], a[0][1]))
            elif op in ("sin", "cos"):
                self._trig(idx, op, args[0], k)
            else:  # pragma: no cover
                raise ValueError(op)

    def _trig(self, idx, op, arg, k):
        """sin/cos share the recurrence; the partner sequence is kept on the side."""
        a = self.c[arg]
        partner = self._partners.setdefault(idx, [])
        c = self.c[idx]
        if k == 0:
            lo, hi = a[0]
            if op == "sin":
                c.append(r_sin(lo, hi))
                partner.append(r_cos(lo, hi))
            else:
                c.append(r_cos(lo, hi))
                partner.append(r_sin(lo, hi))
            return
        terms_self = [(_scale(a[j], j) if a[j] is not None else None, partner[k - j]) for j in range(1, k + 1)]
        terms_partner = [(_scale(a[j], j) if a[j] is not None else None, c[k - j]) for j in range(1, k + 1)]
        s_self = _dot(terms_self)
        s_partner = _dot(terms_partner)
        # d sin = cos du, d cos = -sin du
        if op == "sin":
            new_self = None if s_self is None else _divk(s_self, k)
            new_partner = None if s_partner is None else r_neg(*_divk(s_partner, k))
        else:
            new_self = None if s_self is None else r_neg(*_divk(s_self, k))
            new_partner = None if s_partner is None else _divk(s_partner, k)
        c.append(new_self)
        partner.append(new_partner)


def _zero(B):
    z = np.zeros(B)
    return z, z


def solution_coefficients(traced: Traced, t0: Interval, x0: Interval, order: int,
                          V0: Interval | None = None):
    """Taylor coefficients of the solution (and variational solution).

    ``t0`` has shape ``(B,)`` and ``x0`` shape ``(B, n)``; ``V0`` (shape
    ``(B, n, n)``) switches on the variational equations.  Returns
    ``(xs, Vs)`` where ``xs[k]`` is an :class:`Interval` of shape ``(B, n)``
    for ``k = 0 .. order`` and ``Vs[k]`` has shape ``(B, n, n)`` (``None``
    without ``V0``).
    """
    B, n = x0.shape
    tape = _Tape(traced, B)
    t_pair = (np.asarray(t0.lo, dtype=float), np.asarray(t0.hi, dtype=float))
    xk = [[(x0.lo[:, i], x0.hi[:, i]) for i in range(n)]]
    want_v = V0 is not None
    Js = []
    for k in range(order):
        tape.order(k, t_pair, xk[k])
        nxt = []
        for i in range(n):
            fk = tape.c[traced.f_out[i]][k]
            nxt.append(_zero(B) if fk is None else _divk(fk, k + 1))
        xk.append(nxt)
        if want_v:
            Js.append(_jac_coeff(tape, traced, k, B, n))
    xs = [Interval._raw(np.stack([c[0] for c in row], axis=1), np.stack([c[1] for c in row], axis=1))
          for row in xk]
    if not want_v:
        return xs, None
    Vs = [V0]
    for k in range(order):
        acc = None
        for j in range(k + 1):
            J = Js[j]
            if J is None:
                continue
            term = J @ Vs[k - j]
            acc = term if acc is None else acc + term
        if acc is None:
            acc = Interval._raw(np.zeros((B, n, n)), np.zeros((B, n, n)))
        Vs.append(Interval._raw(*r_div(acc.lo, acc.hi, float(k + 1), float(k + 1))))
    return xs, Vs


def _jac_coeff(tape, traced, k, B, n):
    lo = np.zeros((B, n, n))
    hi = np.zeros((B, n, n))
    nonzero = False
    for i in range(n):
        for j in range(n):
            c = tape.c[traced.jac_out[i][j]][k]
            if c is not None:
                lo[:, i, j] = c[0]
                hi[:, i, j] = c[1]
                nonzero = True
    return Interval._raw(lo, hi) if nonzero else None
