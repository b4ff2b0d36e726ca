"""Certified radius of the ball covering a whole time step (continuous segment).

For a ball ``B = B_M(x0, delta0)`` of initial states and a step of length
``h``, a radius ``Delta`` covers every trajectory over ``[t0, t0 + h]`` when

    delta0 + max_{x in B_M(x0, Delta), s in [0, h]} ||h f(t0 + s, x)||_M <= Delta.

:func:`estimate_max_speed` gives a cheap (unsound) estimate of the maximum,
:func:`verify_bound` proves an upper bound with interval branch-and-prune
(or exhibits a box where the bound is violated up to ``eps``), and
:func:`bloat_radius` runs the grow-and-retry loop that combines them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .ball import Ball
from .errors import BloatDiverged, BudgetExhausted
from .interval import Interval, r_mul, r_sum, up
from .systems import OdeSystem, eval_dt, eval_f, eval_jac

__all__ = [
    "BloatResult",
    "Proved",
    "CounterexampleBox",
    "estimate_max_speed",
    "verify_bound",
    "bloat_radius",
    "FORWARD",
    "BACKWARD",
]

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class Proved:
    """Every box of the domain has ``||h f||_M`` at most ``bound``."""

    bound: float
    stats: dict


@dataclass(frozen=True)
class CounterexampleBox:
    """A box (state box ``x`` and time offsets ``s``) whose enclosure exceeds ``bound - eps``."""

    x: Interval
    s: Interval
    value: Interval
    bound: float
    stats: dict


@dataclass(frozen=True)
class BloatResult:
    delta_big: float
    tilde_delta: float
    delta_small: float
    domain_radius: float
    direction: str
    prune_stats: dict = field(default_factory=dict)


def _sign(direction: str) -> float:
    if direction == FORWARD:
        return 1.0
    if direction == BACKWARD:
        return -1.0
    raise ValueError(f"direction must be {FORWARD!r} or {BACKWARD!r}")


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

def _speed(sys, ball, t0, sign, h, x, s):
    f = eval_f(sys, t0 + sign * s, x)
    return h * np.linalg.norm(f @ ball.metric.A.T, axis=-1)


def _estimate(sys: OdeSystem, t0: float, h: float, ball: Ball, direction: str = FORWARD,
              seed: int = 0, n_samples: int = 256, n_starts: int = 6, n_iter: int = 25):
    """Estimate of the maximal ``||h f||_M`` over the ball, with its maximiser."""
    sign = _sign(direction)
    rng = np.random.default_rng(seed)
    n = sys.dim
    c = ball.center
    A, Ainv = ball.metric.A, ball.metric.A_inv
    R = ball.radius * (1.0 - 1e-12)
    dirs = rng.standard_normal((n_samples, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    inner = dirs[: n_samples // 4] * rng.random((n_samples // 4, 1)) ** (1.0 / n)
    u = np.concatenate([np.zeros((1, n)), axes, dirs, inner]) * R
    if sys.time_variant:
        s_grid = np.array([0.0, 0.5 * h, h])
        s = np.concatenate([np.repeat(s_grid, len(u)), rng.random(len(u)) * h])
        u = np.concatenate([np.tile(u, (3, 1)), u])
    else:
        s = np.zeros(len(u))
    x = c + u @ Ainv.T
    vals = _speed(sys, ball, t0, sign, h, x, s)
    order = np.argsort(vals)[::-1][:n_starts]
    uu, ss, best = u[order].copy(), s[order].copy(), vals[order].copy()
    step = np.full(len(uu), 0.25 * R)
    for _ in range(n_iter):
        xx = c + uu @ Ainv.T
        tt = t0 + sign * ss
        f = eval_f(sys, tt, xx)
        J = eval_jac(sys, tt, xx)
        g = f @ A.T
        # gradient of ||A f||^2 with respect to u
        grad = 2.0 * np.einsum("bi,ij,bjk,kl->bl", g, A, J, Ainv)
        gn = np.linalg.norm(grad, axis=1, keepdims=True)
        gn[gn == 0] = 1.0
        cand = uu + step[:, None] * grad / gn
        cn = np.linalg.norm(cand, axis=1, keepdims=True)
        cand = cand * np.minimum(1.0, R / np.maximum(cn, 1e-300))
        v = _speed(sys, ball, t0, sign, h, c + cand @ Ainv.T, ss)
        better = v > best
        uu[better], best[better] = cand[better], v[better]
        step = np.where(better, step * 1.5, step * 0.5)
    k = int(np.argmax(best))
    top = int(np.argmax(vals))
    if vals[top] > best[k]:
        return float(vals[top]), x[top], float(s[top])
    return float(best[k]), c + uu[k] @ Ainv.T, float(ss[k])


def estimate_max_speed(sys: OdeSystem, t0: float, h: float, ball: Ball,
                       direction: str = FORWARD, seed: int = 0) -> float:
    """Non-certified estimate of ``max ||h f(t0 +- s, x)||_M`` over the ball and ``s in [0, h]``.

    Samples the centre, axis and random boundary points and interior points
    (several time offsets for time-variant fields), then runs projected
    gradient ascent from the best samples.
    """
    return _estimate(sys, t0, h, ball, direction, seed)[0]


# ---------------------------------------------------------------------------
# verification by branch and prune
# ---------------------------------------------------------------------------

def _bmatvec(M: Interval, v: Interval) -> Interval:
    lo, hi = r_mul(M.lo, M.hi, v.lo[..., None, :], v.hi[..., None, :])
    return Interval._raw(*r_sum(lo, hi, -1))


def _speed_enclosure(sys, ball, t0, sign, hI, X: Interval, S: Interval) -> Interval:
    """Enclosure of ``||A h f(t0 +- s, x)||`` over each box.

    Intersects the natural extension with a mean-value form of the squared
    speed ``q = ||A h f||^2`` around the box midpoint, whose overestimation is
    quadratic in the box width.
    """
    A = ball.metric.A
    AI = Interval._raw(A, A)
    T = t0 + S * sign
    g = eval_f(sys, T, X) @ AI.T
    natural = (g * hI).sqr().sum(axis=-1).sqrt()

    m = X.mid()
    sm = S.mid()
    Xm = Interval._raw(m, m)
    Tm = t0 + Interval._raw(sm, sm) * sign
    gm = eval_f(sys, Tm, Xm) @ AI.T
    h2 = hI.sqr()
    q_mid = gm.sqr().sum(axis=-1) * h2
    AJ = AI @ eval_jac(sys, T, X)
    grad_x = _bmatvec(AJ.swapaxes(-1, -2), g) * 2.0
    q = q_mid + (grad_x * (X - Xm)).sum(axis=-1) * h2
    if sys.time_variant:
        gt = eval_dt(sys, T, X) @ AI.T
        grad_s = (gt * g).sum(axis=-1) * (2.0 * sign)
        q = q + grad_s * (S - Interval._raw(sm, sm)) * h2
    q_lo = np.maximum(q.lo, 0.0)
    if np.any(q_lo > q.hi):  # cannot happen for exact enclosures
        return natural
    mv = Interval._raw(q_lo, np.maximum(q.hi, 0.0)).sqrt()
    lo = np.maximum(natural.lo, mv.lo)
    hi = np.minimum(natural.hi, mv.hi)
    return Interval._raw(np.minimum(lo, hi), hi)


def verify_bound(sys: OdeSystem, t0: float, h: float, ball: Ball, bound: float,
                 eps: float | None = None, direction: str = FORWARD, *,
                 budget: int = 1_000_000, max_depth: int = 60, time_weight: float = 1.0,
                 seeds=None, batch: int = 4096, dump: IO[str] | None = None):
    """Decide ``max ||h f(t0 +- s, x)||_M <= bound`` over the ball and ``s in [0, h]``.

    Returns :class:`Proved` when every leaf box is certified, or
    :class:`CounterexampleBox` for a box (not certainly outside the ball) whose
    enclosure has lower bound above ``bound - eps``.  ``seeds`` is an optional
    list of ``(x, s)`` candidate maximisers that are checked first.  Raises
    :class:`BudgetExhausted` when the box budget or depth cap is hit.
    """
    if not bound > 0:
        raise ValueError("bound must be positive")
    if eps is None:
        eps = 1e-9 * bound
    if not eps > 0:
        raise ValueError("eps must be positive")
    sign = _sign(direction)
    n = sys.dim
    h_up = float(h)
    hI = Interval._raw(np.asarray(h_up), np.asarray(h_up))
    stats = {"boxes_explored": 0, "max_depth": 0}

    if seeds:
        xs = np.array([np.asarray(x, dtype=float) for x, _ in seeds])
        ss = np.array([float(s) for _, s in seeds])
        X = Interval._raw(xs, xs)
        S = Interval._raw(ss, ss)
        inside = ball.certainly_contains(X.lo)
        val = _speed_enclosure(sys, ball, t0, sign, hI, X, S)
        stats["boxes_explored"] += len(xs)
        hit = inside & (val.lo > bound - eps)
        if np.any(hit):
            i = int(np.argmax(np.where(hit, val.lo, -np.inf)))
            return CounterexampleBox(X[i], S[i], val[i], bound, stats)

    hull = ball.hull_box()
    base_w = np.maximum(hull.width(), 1e-300)
    split_time = sys.time_variant and h_up > 0
    xlo = hull.lo[None].copy()
    xhi = hull.hi[None].copy()
    slo = np.zeros(1)
    shi = np.full(1, h_up)
    depth = np.zeros(1, dtype=int)
    while len(xlo):
        if stats["boxes_explored"] >= budget:
            raise BudgetExhausted(f"branch-and-prune budget of {budget} boxes exhausted")
        take = min(batch, len(xlo))
        X = Interval._raw(xlo[:take], xhi[:take])
        S = Interval._raw(slo[:take], shi[:take])
        d = depth[:take]
        xlo, xhi, slo, shi, depth = xlo[take:], xhi[take:], slo[take:], shi[take:], depth[take:]
        stats["boxes_explored"] += take
        stats["max_depth"] = max(stats["max_depth"], int(d.max()))

        outside = ball.certainly_excludes(X)
        val = _speed_enclosure(sys, ball, t0, sign, hI, X, S)
        proved = outside | (val.hi <= bound)
        violated = ~outside & (val.lo > bound - eps)
        if dump is not None:
            verdict = np.where(outside, "outside", np.where(proved, "proved",
                               np.where(violated, "violated", "split")))
            for i in range(take):
                dump.write(json.dumps({
                    "x_lo": X.lo[i].tolist(), "x_hi": X.hi[i].tolist(),
                    "s_lo": float(S.lo[i]), "s_hi": float(S.hi[i]),
                    "value_lo": float(val.lo[i]), "value_hi": float(val.hi[i]),
                    "depth": int(d[i]), "verdict": str(verdict[i]),
                }) + "\n")
        if np.any(violated):
            i = int(np.argmax(np.where(violated, val.lo, -np.inf)))
            return CounterexampleBox(X[i], S[i], val[i], bound, stats)
        open_ = ~proved
        if not np.any(open_):
            continue
        if np.any(d[open_] >= max_depth):
            raise BudgetExhausted(f"branch-and-prune depth cap {max_depth} reached")
        bx_lo, bx_hi = X.lo[open_], X.hi[open_]
        bs_lo, bs_hi = S.lo[open_], S.hi[open_]
        bd = d[open_] + 1
        wx = (bx_hi - bx_lo) / base_w
        if split_time:
            ws = time_weight * (bs_hi - bs_lo) / h_up
            widths = np.concatenate([wx, ws[:, None]], axis=1)
        else:
            widths = wx
        k = np.argmax(widths, axis=1)
        rows = np.arange(len(k))
        is_t = k == n
        kx = np.where(is_t, 0, k)
        xm = 0.5 * (bx_lo[rows, kx] + bx_hi[rows, kx])
        sm = 0.5 * (bs_lo + bs_hi)
        left_hi = bx_hi.copy()
        right_lo = bx_lo.copy()
        left_hi[rows, kx] = np.where(is_t, bx_hi[rows, kx], xm)
        right_lo[rows, kx] = np.where(is_t, bx_lo[rows, kx], xm)
        ls_hi = np.where(is_t, sm, bs_hi)
        rs_lo = np.where(is_t, sm, bs_lo)
        xlo = np.concatenate([xlo, bx_lo, right_lo])
        xhi = np.concatenate([xhi, left_hi, bx_hi])
        slo = np.concatenate([slo, bs_lo, rs_lo])
        shi = np.concatenate([shi, ls_hi, bs_hi])
        depth = np.concatenate([depth, bd, bd])
    return Proved(bound, stats)


# ---------------------------------------------------------------------------
# the grow-and-retry loop
# ---------------------------------------------------------------------------

def bloat_radius(sys: OdeSystem, t0: float, h: float, ball0: Ball, c_delta: float = 1.1, *,
                 mode: str = "compare", direction: str = FORWARD, cap_factor: float = 1e3,
                 eps_rel: float = 1e-9, estimate_pad: float = 1e-3, seed: int = 0,
                 budget: int = 1_000_000, max_depth: int = 60, time_weight: float = 1.0,
                 dump: IO[str] | None = None) -> BloatResult:
    """Certified radius ``Delta`` of a ball containing all trajectories over the step.

    Outer loop over a trial radius ``Delta0`` starting at ``delta0 * c_delta``:
    estimate the maximal speed ``d`` over ``B(Delta0)``, then certify a bound
    ``d`` over ``B(Delta0)`` (growing it by ``c_delta`` whenever the check is
    violated or inconclusive).  With ``mode="compare"`` the trial is accepted
    once ``delta0 + d <= Delta0``; the certified bound then also holds on the
    smaller ball ``B(delta0 + d)``, which is returned as the tight radius.
    ``mode="replace"`` instead re-certifies directly over ``B(delta0 + d)``
    and accepts when that succeeds.  ``Delta0`` grows by ``c_delta`` per failed
    outer iteration; exceeding ``cap_factor * delta0`` raises
    :class:`BloatDiverged`.
    """
    if not c_delta > 1:
        raise ValueError("c_delta must exceed 1")
    if mode not in ("compare", "replace"):
        raise ValueError("mode must be 'compare' or 'replace'")
    delta0 = ball0.radius
    cap = cap_factor * delta0
    stats = {"boxes_explored": 0, "max_depth": 0, "verify_calls": 0, "outer_iterations": 0}
    tiny = delta0 * 1e-14

    def certify(domain: Ball, start: float, witness):
        d = max(start, tiny)
        while True:
            stats["verify_calls"] += 1
            try:
                res = verify_bound(sys, t0, h, domain, d, eps_rel * d, direction, budget=budget,
                                   max_depth=max_depth, time_weight=time_weight,
                                   seeds=[witness], dump=dump)
            except BudgetExhausted:
                res = None
            if res is not None:
                stats["boxes_explored"] += res.stats["boxes_explored"]
                stats["max_depth"] = max(stats["max_depth"], res.stats["max_depth"])
                if isinstance(res, Proved):
                    return d
            d *= c_delta
            if d > cap:
                raise BloatDiverged(f"speed bound exceeded cap {cap:.3g}")

    big = delta0 * c_delta
    while True:
        if big > cap:
            raise BloatDiverged(f"continuous radius exceeded cap {cap:.3g}")
        stats["outer_iterations"] += 1
        domain = ball0.with_radius(big)
        est, wx, ws = _estimate(sys, t0, h, domain, direction, seed)
        start = est * (1.0 + estimate_pad)
        need = float(up(delta0 + start))
        if need > big:
            # The certified bound is never below the estimate, and the estimate
            # only grows with the domain, so every trial radius below ``need``
            # would fail: jump to the first multiple of c_delta above it.
            while big < need:
                big *= c_delta
            continue
        if mode == "compare":
            d = certify(domain, start, (wx, ws))
            tight = float(up(delta0 + d))
            if tight <= big:
                final = tight if tight > delta0 else big
                return BloatResult(final, d, delta0, big, direction, stats)
        else:
            d = max(start, tiny)
            while True:
                trial = float(up(delta0 + d))
                if trial <= delta0:
                    trial = big
                stats["verify_calls"] += 1
                try:
                    res = verify_bound(sys, t0, h, ball0.with_radius(trial), d, eps_rel * d,
                                       direction, budget=budget, max_depth=max_depth,
                                       time_weight=time_weight, seeds=[(wx, ws)], dump=dump)
                except BudgetExhausted:
                    res = None
                if res is not None:
                    stats["boxes_explored"] += res.stats["boxes_explored"]
                    stats["max_depth"] = max(stats["max_depth"], res.stats["max_depth"])
                    if isinstance(res, Proved):
                        return BloatResult(trial, d, delta0, trial, direction, stats)
                d *= c_delta
                if delta0 + d > cap:
                    raise BloatDiverged(f"continuous radius exceeded cap {cap:.3g}")
        big *= c_delta
