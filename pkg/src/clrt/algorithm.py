"""The reachtube loop: stretching factors, metric choice, step adaptation, bloating.

Each step maps the ball ``B_{M0}(x0, delta0)`` of states at ``t0`` to

* a discrete ball ``B_{M1}([x1], Lambda delta0)`` at ``t1`` through the
  stretching factor ``Lambda >= ||A1 F A0^{-1}||_2`` over the gradient
  enclosure ``F``, where ``M1`` is either kept or replaced by the metric that
  makes the midpoint gradient's stretching factor optimal;
* a continuous ball ``B_{M0}(x0, Delta)`` holding every trajectory over
  ``[t0, t1]``, from :func:`clrt.bloat.bloat_radius`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ball import Ball
from .bloat import BACKWARD, FORWARD, BloatResult, bloat_radius
from .errors import (
    BloatDiverged,
    ConfigError,
    DimensionMismatch,
    IntervalBlowup,
    NearDefective,
    NoAprioriEnclosure,
    NotPositiveDefinite,
    RankDeficient,
    StepUnderflow,
    ClrtError,
)
from .integrator import DEFAULT_ORDER, FlowStep, enclose_step
from .interval import Interval, down, up
from .linalg import Metric, real_eigenbasis, spectral_norm_bound, spectral_norm_bounds
from .systems import OdeSystem

__all__ = [
    "ClrtConfig",
    "TubeSegment",
    "Tube",
    "strain_tensors",
    "stretching_factor",
    "optimal_metric",
    "transported_metric",
    "metric_switch",
    "ftle_bound",
    "ist_adapt",
    "advance",
    "run",
    "initial_radius_from_box",
    "ball_pieces",
]

log = logging.getLogger(__name__)


def _point(x) -> Interval:
    a = np.asarray(x, dtype=float)
    return Interval._raw(a, a)


# ---------------------------------------------------------------------------
# configuration and records
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClrtConfig:
    """Inputs of a reachtube computation.

    ``x0_box`` encloses the centre of the initial ball, ``delta0`` is its
    radius in the norm of ``M0`` (identity when omitted).  ``k`` fixes the
    initial step ``h = (T - t0) / k``, which is also the largest step ever
    tried.
    """

    T: float
    x0_box: Interval
    delta0: float
    t0: float = 0.0
    k: int = 1000
    eps_ist: float = 0.1
    c_delta: float = 1.1
    c_m: float = 1.5
    M0: Metric | None = None
    order: int = DEFAULT_ORDER
    bloat_mode: str = "compare"
    bloat_cap_factor: float = 1e3
    eps_rel: float = 1e-9
    estimate_pad: float = 1e-3
    prune_budget: int = 1_000_000
    prune_max_depth: int = 60
    time_weight: float = 1.0
    h_floor_rel: float = 1e-12
    cover_discrete_end: bool = True
    backward_bloat: bool = False
    seed: int = 0
    max_bloat_retries: int = 20
    switch_volume_cap: float = float("inf")
    grad_splits: int | None = None
    transport_metric: bool = False
    transport_cond_max: float = 20.0

    def __post_init__(self):
        if not isinstance(self.x0_box, Interval):
            object.__setattr__(self, "x0_box", _point(self.x0_box))
        if self.M0 is None:
            object.__setattr__(self, "M0", Metric.identity(self.x0_box.shape[0]))
        self.validate()

    @property
    def dim(self) -> int:
        return self.x0_box.shape[0]

    @property
    def splits(self) -> int:
        """Sub-boxes per dimension for gradient enclosures (at most 64 pieces by default)."""
        if self.grad_splits is not None:
            return int(self.grad_splits)
        return max(1, int(math.floor(64 ** (1.0 / self.dim) + 1e-9)))

    @property
    def h0(self) -> float:
        return (self.T - self.t0) / self.k

    def validate(self):
        checks = [
            (math.isfinite(self.T) and math.isfinite(self.t0), "T and t0 must be finite"),
            (self.T >= self.t0, "T must not precede t0"),
            (isinstance(self.k, (int, np.integer)) and self.k >= 1, "k must be a positive integer"),
            (self.eps_ist > 0, "eps_ist must be positive"),
            (self.c_delta > 1, "c_delta must exceed 1"),
            (self.c_m > 0, "c_m must be positive"),
            (self.delta0 > 0 and math.isfinite(self.delta0), "delta0 must be positive"),
            (self.order >= 2, "integrator order must be at least 2"),
            (self.bloat_mode in ("compare", "replace"), "bloat_mode must be 'compare' or 'replace'"),
            (self.bloat_cap_factor > 1, "bloat_cap_factor must exceed 1"),
            (self.eps_rel > 0, "eps_rel must be positive"),
            (self.prune_budget > 0 and self.prune_max_depth > 0, "prune caps must be positive"),
            (self.time_weight > 0, "time_weight must be positive"),
            (self.grad_splits is None or self.grad_splits >= 1, "grad_splits must be at least 1"),
            (self.transport_cond_max >= 1, "transport_cond_max must be at least 1"),
            (self.M0.dim == self.dim, "M0 and initial centre dimensions differ"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


@dataclass(frozen=True, eq=False)
class TubeSegment:
    """One certified piece of the tube over ``[t_lo, t_hi]``.

    ``continuous`` holds every trajectory from ``discrete_start`` over the
    whole interval; ``discrete_end`` holds them at ``t_hi``.
    """

    t_lo: float
    t_hi: float
    continuous: Ball
    discrete_start: Ball
    discrete_end: Ball
    lam: float
    tilde_delta: float
    switched: bool
    F_mid: np.ndarray = field(repr=False)
    bloat: BloatResult | None = field(default=None, repr=False)
    backward: BloatResult | None = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return self.t_hi - self.t_lo

    @property
    def delta_small(self) -> float:
        return self.discrete_start.radius

    @property
    def delta_big(self) -> float:
        return self.continuous.radius

    @property
    def metric(self) -> Metric:
        return self.continuous.metric


class Tube(list):
    """List of :class:`TubeSegment` with a completion flag.

    ``complete`` is false when the run stopped early; ``reason`` then names
    the error, and the segments computed so far are kept.
    """

    def __init__(self, segments=(), complete: bool = True, reason: str = ""):
        super().__init__(segments)
        self.complete = complete
        self.reason = reason
        self.final_ball: Ball | None = None


# ---------------------------------------------------------------------------
# tensors, stretching factors, metrics
# ---------------------------------------------------------------------------

def strain_tensors(F) -> dict:
    """Deformation tensors of a gradient enclosure, in interval arithmetic.

    ``C = F^T F``, ``E = (C - I)/2``, ``disp_grad = F - I`` and its symmetric
    (``eps_inf``) and antisymmetric (``omega``) parts.
    """
    F = F if isinstance(F, Interval) else _point(F)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise DimensionMismatch("F must be square")
    n = F.shape[0]
    eye = _point(np.eye(n))
    C = F.T @ F
    E = (C - eye) * 0.5
    D = F - eye
    return {
        "C": C,
        "E": E,
        "disp_grad": D,
        "eps_inf": (D + D.T) * 0.5,
        "omega": (D - D.T) * 0.5,
    }


def stretching_factor(F_box, m0: Metric, m1: Metric) -> float:
    """Upper bound of ``||A1 F A0^{-1}||_2`` over every ``F`` in ``F_box``.

    ``F_box`` may be a stack ``(P, n, n)`` of enclosures; the bound then holds
    over their union (it is the largest of the individual bounds).
    """
    F_box = F_box if isinstance(F_box, Interval) else _point(F_box)
    if not (m0.certified_pd and m1.certified_pd):
        raise NotPositiveDefinite("stretching factor needs certified metrics")
    G = (_point(m1.A) @ F_box) @ m0.A_inv_box
    return float(np.max(spectral_norm_bounds(G)))


def _split_factor(F_box: Interval, F_pieces: Interval | None, m0: Metric, m1: Metric) -> float:
    """Smaller of the whole-box factor and the largest per-piece factor (both are valid bounds)."""
    if F_pieces is None:
        return stretching_factor(F_box, m0, m1)
    stack = Interval._raw(np.concatenate([F_box.lo[None], F_pieces.lo]),
                          np.concatenate([F_box.hi[None], F_pieces.hi]))
    G = (_point(m1.A) @ stack) @ m0.A_inv_box
    bounds = spectral_norm_bounds(G)
    return float(min(bounds[0], np.max(bounds[1:])))


def ball_pieces(ball: Ball, splits: int) -> Interval | None:
    """Sub-boxes of the ball's bounding box that may meet the ball.

    Every point of the ball lies in one of the returned boxes, so the union of
    per-piece gradient enclosures covers the gradient over the ball.
    """
    if splits <= 1:
        return None
    hb = ball.hull_box()
    n = ball.dim
    edges = [np.linspace(hb.lo[i], hb.hi[i], splits + 1) for i in range(n)]
    edges = [np.concatenate([[hb.lo[i]], e[1:-1], [hb.hi[i]]]) for i, e in enumerate(edges)]
    idx = np.array(np.meshgrid(*[np.arange(splits)] * n, indexing="ij")).reshape(n, -1).T
    cols = np.arange(n)
    lo = np.stack([edges[i][idx[:, i]] for i in cols], axis=-1)
    hi = np.stack([edges[i][idx[:, i] + 1] for i in cols], axis=-1)
    boxes = Interval._raw(lo, hi)
    keep = ~ball.certainly_excludes(boxes)
    return Interval._raw(lo[keep], hi[keep])


def optimal_metric(F_mid) -> Metric:
    """Metric minimising the stretching factor of the single gradient ``F_mid``.

    Its factor is the real normalised left-eigenvector basis of ``F_mid``, for
    which the stretching factor equals the largest eigenvalue modulus.
    """
    basis = real_eigenbasis(np.asarray(F_mid, dtype=float))
    return Metric.from_factor(basis.A_hat)


def transported_metric(m0: Metric, F_mid, cond_max: float = math.inf) -> Metric:
    """Metric ``A0 F^{-1}`` (rescaled to unit determinant) whose unit ball is the image of the old one.

    Under the linearised flow ``F`` the ball of ``m0`` maps exactly onto the
    ball of this metric, so the stretching factor between the two stays close
    to one; only the spread of the gradient enclosure contributes.  That
    spread is amplified by the condition number of the factor, so singular
    values above ``cond_max * s_min`` are lowered to that cap; the capped
    ball contains the transported one, so capping costs volume but never
    increases the stretching factor.
    """
    F_mid = np.asarray(F_mid, dtype=float)
    try:
        A = m0.A @ np.linalg.inv(F_mid)
    except np.linalg.LinAlgError:
        raise RankDeficient("gradient midpoint is singular") from None
    if not np.all(np.isfinite(A)):
        raise RankDeficient("transported factor is not finite")
    U, sv, Vt = np.linalg.svd(A)
    if not sv[-1] > 0:
        raise RankDeficient("transported factor is singular")
    sv = np.minimum(sv, sv[-1] * cond_max)
    sv = sv * math.exp(-float(np.mean(np.log(sv))))
    return Metric.from_factor((U * sv) @ Vt)


def _log_eq_radius(lam: float, m: Metric) -> float:
    """Log of the equivalent-volume radius growth factor of a step ending in metric ``m``."""
    return math.log(lam) - m.log_abs_det_A() / m.dim


def metric_switch(lam_keep: float, lam_new: float, c_m: float) -> bool:
    """Switch to the new metric iff ``lam_keep > c_m * lam_new``."""
    return lam_keep > c_m * lam_new


def ftle_bound(lam: float, T: float) -> float:
    """Upper bound ``ln(lam) / T`` of the finite-time Lyapunov exponent."""
    if not (lam > 0 and T > 0):
        raise ValueError("ftle_bound needs lam > 0 and T > 0")
    value = math.log(lam) / T
    return float(up(up(value + 4e-16 * abs(value))))


def initial_radius_from_box(half_widths, m0: Metric) -> float:
    """Smallest ``delta`` with the box ``[-r, r]`` inside ``B_{M0}(0, delta)``.

    The norm is convex, so its maximum over the box is attained at a corner;
    corners are enumerated (rigorously, in interval arithmetic).
    """
    r = np.asarray(half_widths, dtype=float)
    n = r.shape[0]
    if n > 16:
        raise ValueError("corner enumeration limited to 16 dimensions")
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T
    corners = signs * r
    norms = (_point(corners) @ _point(m0.A.T)).sqr().sum(axis=-1).sqrt()
    return float(np.max(norms.hi))


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------

def _step_enclosure(sys, t0, h, ball: Ball, order, pieces=None) -> FlowStep:
    return enclose_step(sys, t0, h, ball.hull_box(), order=order, center=ball.center_box,
                        pieces=pieces)


def _ist(sys: OdeSystem, t0: float, h0: float, ball: Ball, cfg: ClrtConfig):
    floor = cfg.h_floor_rel * max(abs(cfg.T - cfg.t0), 1e-300)
    n = sys.dim
    eye = _point(np.eye(n))
    h = h0
    while True:
        if h < floor:
            raise StepUnderflow(f"step {h:.3g} fell below the floor {floor:.3g} at t={t0}")
        try:
            step = _step_enclosure(sys, t0, h, ball, cfg.order)
        except (NoAprioriEnclosure, IntervalBlowup) as exc:
            log.debug("t=%g h=%g rejected: %s", t0, h, exc)
            h *= 0.5
            continue
        if spectral_norm_bound(step.grad_whole - eye) < cfg.eps_ist:
            return h, step
        h *= 0.5


def ist_adapt(sys: OdeSystem, t0: float, h0: float, ball: Ball, cfg: ClrtConfig):
    """Halve ``h0`` until the displacement gradient over the step is below ``eps_ist``.

    Returns ``(h, G)`` with ``G`` the gradient enclosure valid for every time of
    ``[t0, t0 + h]`` and every start in the ball.
    """
    if not h0 > 0:
        raise ValueError("h0 must be positive")
    h, step = _ist(sys, t0, h0, ball, cfg)
    return h, step.grad_whole


def _recenter(box: Interval, metric: Metric, radius: float):
    """Point centre and radius of a ball containing ``B_M(box, radius)``."""
    c = box.mid()
    spread = float((_point(metric.A) @ (box - _point(c))).sqr().sum().sqrt().hi)
    return c, float(up(radius + spread))


def _cover_radius(outer_c: np.ndarray, outer: Metric, inner: Ball) -> float:
    """Radius of a ball in ``outer`` metric at ``outer_c`` containing the ball ``inner``."""
    shift = (_point(outer.A) @ (inner.center_box - _point(outer_c))).sqr().sum().sqrt().hi
    G = _point(outer.A) @ inner.metric.A_inv_box
    return float(up(float(shift) + up(spectral_norm_bound(G) * inner.radius)))


def advance(sys: OdeSystem, t: float, ball: Ball, cfg: ClrtConfig, h_trial: float | None = None,
            dump=None):
    """Compute one tube segment from ``ball`` at time ``t``.

    Returns ``(segment, next_ball)``.  Steps: IST halving, validated step over
    the ball's bounding box, optimal metric of the midpoint gradient, metric
    switch test, stretching factor and discrete end ball, then the certified
    continuous radius (the step is halved and redone if bloating diverges).
    """
    if not t < cfg.T:
        raise ValueError("advance called at or beyond the horizon")
    h = min(cfg.h0 if h_trial is None else h_trial, cfg.T - t)
    if cfg.T - (t + h) <= 1e-9 * h:
        h = cfg.T - t
    m0 = ball.metric
    n = ball.dim
    pieces = ball_pieces(ball, cfg.splits)
    for _ in range(cfg.max_bloat_retries):
        h, step = _ist(sys, t, h, ball, cfg)
        t1 = step.t1
        if cfg.T - t1 <= 1e-9 * h:
            t1 = cfg.T
        if pieces is not None or t1 != step.t1:
            step = _step_enclosure(sys, t, t1 - t, ball, cfg.order, pieces)
        F_box = step.F_box
        F_mid = F_box.mid()
        Fp = step.F_pieces

        lam_keep = _split_factor(F_box, Fp, m0, m0)
        m1, lam, switched = m0, lam_keep, False
        try:
            cand = optimal_metric(F_mid)
            lam_cand = _split_factor(F_box, Fp, cand, cand)
            if metric_switch(lam_keep, lam_cand, cfg.c_m):
                lam_01 = _split_factor(F_box, Fp, m0, cand)
                log_ratio = n * math.log(lam_01 / lam_keep) + m0.log_abs_det_A() - cand.log_abs_det_A()
                if log_ratio <= math.log(cfg.switch_volume_cap):
                    m1, lam, switched = cand, lam_01, True
        except (NearDefective, RankDeficient, NotPositiveDefinite) as exc:
            log.debug("t=%g keeping metric: %s", t, exc)
        if cfg.transport_metric:
            try:
                tr = transported_metric(m0, F_mid, cfg.transport_cond_max)
                lam_tr = _split_factor(F_box, Fp, m0, tr)
                if _log_eq_radius(lam_tr, tr) < _log_eq_radius(lam, m1):
                    m1, lam, switched = tr, lam_tr, True
            except (RankDeficient, NotPositiveDefinite) as exc:
                log.debug("t=%g no transported metric: %s", t, exc)

        end_radius = float(up(lam * ball.radius))
        discrete_end = Ball(step.center1_box, m1, end_radius)

        h_up = float(up(t1 - t))
        try:
            res = bloat_radius(sys, t, h_up, ball, cfg.c_delta, mode=cfg.bloat_mode,
                               direction=FORWARD, cap_factor=cfg.bloat_cap_factor,
                               eps_rel=cfg.eps_rel, estimate_pad=cfg.estimate_pad,
                               seed=cfg.seed, budget=cfg.prune_budget,
                               max_depth=cfg.prune_max_depth, time_weight=cfg.time_weight,
                               dump=dump)
        except BloatDiverged as exc:
            log.debug("t=%g h=%g bloat diverged (%s); halving", t, h, exc)
            h *= 0.5
            continue
        back = None
        if cfg.backward_bloat:
            back = bloat_radius(sys, t1, h_up, ball, cfg.c_delta, mode=cfg.bloat_mode,
                                direction=BACKWARD, cap_factor=cfg.bloat_cap_factor,
                                eps_rel=cfg.eps_rel, estimate_pad=cfg.estimate_pad,
                                seed=cfg.seed, budget=cfg.prune_budget,
                                max_depth=cfg.prune_max_depth, time_weight=cfg.time_weight,
                                dump=dump)
        delta_big = res.delta_big
        if cfg.cover_discrete_end:
            delta_big = max(delta_big, _cover_radius(ball.center_box.mid(), m0, discrete_end))
        continuous = Ball(ball.center_box, m0, delta_big)
        seg = TubeSegment(t_lo=t, t_hi=t1, continuous=continuous, discrete_start=ball,
                          discrete_end=discrete_end, lam=lam, tilde_delta=res.tilde_delta,
                          switched=switched, F_mid=F_mid, bloat=res, backward=back)
        c1, r1 = _recenter(step.center1_box, m1, end_radius)
        return seg, Ball(_point(c1), m1, r1)
    raise BloatDiverged(f"continuous radius diverged after {cfg.max_bloat_retries} halvings at t={t}")


def run(sys: OdeSystem, cfg: ClrtConfig, progress=None, dump=None) -> Tube:
    """Reachtube over ``[t0, T]`` as a contiguous list of segments.

    ``progress`` is called with each new segment; ``dump`` (a text stream)
    receives the branch-and-prune log.  Errors of a step stop the run; the segments computed so far are returned
    with ``complete = False`` and the error message in ``reason``.
    """
    if sys.dim != cfg.dim:
        raise DimensionMismatch("system and configuration dimensions differ")
    tube = Tube()
    c, r = _recenter(cfg.x0_box, cfg.M0, cfg.delta0)
    ball = Ball(_point(c), cfg.M0, r)
    t = cfg.t0
    h = cfg.h0
    while t < cfg.T:
        try:
            seg, ball = advance(sys, t, ball, cfg, h, dump=dump)
        except ClrtError as exc:
            tube.complete = False
            tube.reason = f"{type(exc).__name__}: {exc}"
            log.warning("run stopped at t=%g: %s", t, tube.reason)
            break
        tube.append(seg)
        t = seg.t_hi
        h = min(2.0 * seg.h, cfg.h0)
        if progress is not None:
            progress(seg)
    tube.final_ball = ball
    return tube
