"""End-to-end acceptance checks, one test group per criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion.  The two benchmark runs are shared between the
soundness, volume, bloating and timing checks.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from clrt.algorithm import ClrtConfig, ist_adapt, optimal_metric, run, stretching_factor
from clrt.ball import Ball
from clrt.bloat import CounterexampleBox, Proved, verify_bound
from clrt.cli import benchmark_config_path, load_config, segment_volume
from clrt.errors import NearDefective
from clrt.integrator import enclose_step, integrate
from clrt.interval import Interval
from clrt.linalg import Metric, real_eigenbasis, spectral_norm_bounds, verified_inverse
from clrt.systems import builtin, system_from_equations

criterion = pytest.mark.criterion
WORKED_F = np.array([[1.0, 1.0], [-4.0, 1.0]])
PUBLISHED_A = np.array([[0.0, 0.4472], [0.8944, 0.0]])
MEMBERSHIP_TOL = 1e-9


# ---------------------------------------------------------------------------
# shared benchmark runs
# ---------------------------------------------------------------------------

class BenchmarkRun:
    def __init__(self, name):
        raw = json.loads(benchmark_config_path(name).read_text())
        self.sys, self.cfg, _ = load_config(raw)
        start = time.perf_counter()
        self.tube = run(self.sys, self.cfg)
        self.wall = time.perf_counter() - start
        self.total_volume = math.fsum(segment_volume(s) for s in self.tube)


_RUNS = {}


def benchmark(name):
    if name not in _RUNS:
        _RUNS[name] = BenchmarkRun(name)
    return _RUNS[name]


def _initial_samples(cfg, count, rng):
    ball = Ball(cfg.x0_box, cfg.M0, cfg.delta0)
    half = count // 2
    return np.concatenate([ball.sample(rng, half, surface=True), ball.sample(rng, count - half)])


def _trajectories(sys, x0, t0, T):
    """Dense-output reference solutions of every sample at once."""
    m, n = x0.shape

    def rhs(t, y):
        return sys.f(t, y.reshape(m, n)).ravel()

    return solve_ivp(rhs, (t0, T), x0.ravel(), method="DOP853", rtol=1e-11, atol=1e-13,
                     dense_output=True)


def _membership_violations(run_, count=1000, seed=0, times_per_segment=5):
    rng = np.random.default_rng(seed)
    x0 = _initial_samples(run_.cfg, count, rng)
    sol = _trajectories(run_.sys, x0, run_.cfg.t0, run_.cfg.T)
    assert sol.success
    n = run_.sys.dim
    bad = 0
    for seg in run_.tube:
        for t in np.linspace(seg.t_lo, seg.t_hi, times_per_segment):
            xt = sol.sol(t).reshape(count, n)
            bad += int(np.sum(~seg.continuous.possibly_contains(xt, tol=MEMBERSHIP_TOL)))
    return bad


# ---------------------------------------------------------------------------
# 1: worked example
# ---------------------------------------------------------------------------

@criterion(1, "worked example: stretching factors, optimal basis, block form")
def test_worked_example():
    eye = Metric.identity(2)
    assert stretching_factor(WORKED_F, eye, eye) == pytest.approx(4.1926, abs=1e-3)
    m = optimal_metric(WORKED_F)
    assert stretching_factor(WORKED_F, m, m) == pytest.approx(2.2361, abs=1e-3)
    A = real_eigenbasis(WORKED_F).A_hat
    # rows are fixed only up to order and sign; match against every signed permutation
    matches = []
    for perm in itertools.permutations(range(2)):
        for signs in itertools.product((1.0, -1.0), repeat=2):
            P = np.diag(signs) @ np.eye(2)[list(perm)]
            matches.append(np.max(np.abs(P @ A - PUBLISHED_A)))
    assert min(matches) <= 1e-3
    assert np.allclose(A @ WORKED_F @ np.linalg.inv(A), [[1.0, -2.0], [2.0, 1.0]], atol=1e-6)


# ---------------------------------------------------------------------------
# 2: optimality of the eigenvector metric
# ---------------------------------------------------------------------------

def _alternative_factors(rng, n, count):
    out = []
    while len(out) < count:
        A = rng.normal(size=(n, n))
        if np.linalg.cond(A) < 1e6:
            out.append(A)
    return np.array(out)


@criterion(2, "optimal metric attains |lambda_max| and is never beaten")
def test_optimal_metric_is_optimal():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    checked = 0
    worst_gap = -np.inf
    while checked < 200:
        n = int(rng.integers(2, 5))
        F = rng.normal(size=(n, n))
        if abs(np.linalg.det(F)) < 1e-3:
            continue
        try:
            m = optimal_metric(F)
        except NearDefective:
            continue
        rho = float(np.max(np.abs(np.linalg.eigvals(F))))
        lam = stretching_factor(F, m, m)
        assert abs(lam - rho) <= 1e-6
        # self stretching factors of 50 alternative metrics, batched: the same
        # rigorous bound as stretching_factor(F, alt, alt) for each factor
        A = _alternative_factors(rng, n, 50)
        _, A_inv_box = verified_inverse(A)
        others = spectral_norm_bounds((Interval(A) @ Interval(F)) @ A_inv_box)
        worst_gap = max(worst_gap, float(np.max(lam - others)))
        assert np.all(lam <= others + 1e-8)
        checked += 1
    elapsed = time.perf_counter() - start
    print(f"200 matrices checked in {elapsed:.1f} s, worst gap {worst_gap:.3g}")
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# 3: conservativity
# ---------------------------------------------------------------------------

@pytest.mark.slow
@criterion(3, "Monte-Carlo trajectories stay in the continuous tube")
@pytest.mark.parametrize("name", ["dubins", "brusselator"])
def test_conservativity(name):
    run_ = benchmark(name)
    assert run_.tube.complete, run_.tube.reason
    assert _membership_violations(run_) == 0


# ---------------------------------------------------------------------------
# 4: volume sanity
# ---------------------------------------------------------------------------

@pytest.mark.slow
@criterion(4, "total continuous volume within 5x of the published values")
@pytest.mark.parametrize("name,published", [("dubins", 0.24), ("brusselator", 0.21)])
def test_volume_sanity(name, published):
    run_ = benchmark(name)
    assert run_.tube.complete, run_.tube.reason
    tv = run_.total_volume
    print(f"{name}: total volume {tv:.4g} (published {published}), {len(run_.tube)} segments")
    assert published / 5 <= tv <= published * 5


# ---------------------------------------------------------------------------
# 5: bloating soundness
# ---------------------------------------------------------------------------

def _speed_samples(sys, seg, rng, count):
    ball = seg.discrete_start.with_radius(seg.bloat.domain_radius)
    xs = ball.sample(rng, count)
    s = rng.uniform(0.0, seg.h, size=count)
    h = float(seg.t_hi - seg.t_lo)
    f = sys.f(seg.t_lo + s, xs)
    return np.linalg.norm(h * f @ ball.metric.A.T, axis=1)


@pytest.mark.slow
@criterion(5, "certified speed bounds re-verify and dominate samples; grid agreement")
@pytest.mark.parametrize("name", ["dubins", "brusselator"])
def test_bloating_soundness(name):
    run_ = benchmark(name)
    sys, cfg = run_.sys, run_.cfg
    for seg in run_.tube:
        domain = seg.discrete_start.with_radius(seg.bloat.domain_radius)
        res = verify_bound(sys, seg.t_lo, float(seg.t_hi - seg.t_lo), domain, seg.tilde_delta,
                           cfg.eps_rel * seg.tilde_delta, budget=cfg.prune_budget,
                           max_depth=cfg.prune_max_depth)
        assert isinstance(res, Proved)
    rng = np.random.default_rng(5)
    for i in rng.choice(len(run_.tube), size=10, replace=False):
        seg = run_.tube[int(i)]
        assert np.all(_speed_samples(sys, seg, rng, 10_000) <= seg.tilde_delta)


def _grid_max(sys, t0, h, ball, points=301):
    u = np.linspace(-1, 1, points)
    U, V = np.meshgrid(u, u)
    pts = np.stack([U.ravel(), V.ravel()], axis=-1)
    pts = pts[np.linalg.norm(pts, axis=1) <= 1.0]
    xs = ball.center + (ball.radius * pts) @ ball.metric.A_inv.T
    return float(np.max(np.linalg.norm(h * sys.f(t0, xs) @ ball.metric.A.T, axis=1)))


@pytest.mark.slow
@criterion(5, "certified speed bounds re-verify and dominate samples; grid agreement")
def test_branch_and_prune_matches_grid_maximum():
    run_ = benchmark("brusselator")
    rng = np.random.default_rng(55)
    for i in rng.choice(len(run_.tube), size=10, replace=False):
        seg = run_.tube[int(i)]
        ball = seg.discrete_start.with_radius(seg.bloat.domain_radius)
        h = float(seg.t_hi - seg.t_lo)
        grid = _grid_max(run_.sys, seg.t_lo, h, ball)
        assert isinstance(verify_bound(run_.sys, seg.t_lo, h, ball, 1.05 * grid), Proved)
        assert isinstance(verify_bound(run_.sys, seg.t_lo, h, ball, 0.95 * grid), CounterexampleBox)


# ---------------------------------------------------------------------------
# 6: forward/backward symmetry
# ---------------------------------------------------------------------------

@pytest.mark.slow
@criterion(6, "forward and backward speed bounds agree on an autonomous field")
def test_forward_backward_symmetry():
    raw = json.loads(benchmark_config_path("brusselator").read_text())
    raw.update(T=2.0, k=100)
    sys, cfg, _ = load_config(raw, backward_bloat=True)
    tube = run(sys, cfg)
    assert tube.complete and len(tube) > 0
    for seg in tube:
        fwd, bwd = seg.bloat.tilde_delta, seg.backward.tilde_delta
        assert abs(fwd - bwd) <= 1e-9 * max(fwd, bwd)


# ---------------------------------------------------------------------------
# 7: IST step selection
# ---------------------------------------------------------------------------

@criterion(7, "IST halving matches the closed-form chain and terminates")
def test_ist_halving_chain():
    sys = system_from_equations("growth", ["10 * x[0]"])
    cfg = ClrtConfig(T=1.0, x0_box=[1.0], delta0=1e-3, k=10, eps_ist=0.01)
    ball = Ball(Interval([1.0]), Metric.identity(1), 1e-3)
    h0 = 0.1
    # closed form: halve until e^{10 h} - 1 < 0.01
    expected = h0
    while math.expm1(10 * expected) >= 0.01:
        expected /= 2
    assert expected == h0 / 2**7
    h, _ = ist_adapt(sys, 0.0, h0, ball, cfg)
    assert h == expected


# ---------------------------------------------------------------------------
# 8: integrator validation
# ---------------------------------------------------------------------------

@criterion(8, "integrator: tight exponential enclosure and bounded wrapping")
def test_integrator_validation():
    sys = system_from_equations("growth", ["x[0]"])
    step = enclose_step(sys, 0.0, 0.1, Interval([1.0]), order=10)
    e = math.exp(0.1)
    for box in (step.x1_box, step.F_box):
        lo, hi = float(box.lo.ravel()[0]), float(box.hi.ravel()[0])
        assert lo <= e <= hi
        assert hi - lo < 1e-6
    rot = system_from_equations("rotation", ["-x[1]", "x[0]"])
    box = Interval([0.99, -0.01], [1.01, 0.01])
    out = integrate(rot, 0.0, 2 * math.pi, box, h=2 * math.pi / 64, order=8)
    assert np.max(out[-1].width()) < 10 * np.max(box.width())


# ---------------------------------------------------------------------------
# 9: performance
# ---------------------------------------------------------------------------

@pytest.mark.slow
@criterion(9, "Brusselator T = 10 run completes in under 60 s")
def test_brusselator_runtime():
    run_ = benchmark("brusselator")
    print(f"brusselator wall time {run_.wall:.1f} s")
    assert run_.tube.complete
    assert run_.wall < 60.0
