import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from clrt.algorithm import (
    ClrtConfig,
    advance,
    ball_pieces,
    ftle_bound,
    initial_radius_from_box,
    ist_adapt,
    metric_switch,
    optimal_metric,
    run,
    strain_tensors,
    stretching_factor,
    transported_metric,
)
from clrt.ball import Ball
from clrt.errors import ConfigError, NearDefective, StepUnderflow
from clrt.interval import Interval
from clrt.linalg import Metric, decompose
from clrt.systems import builtin, system_from_equations

seeds = st.integers(0, 2**32 - 1)

WORKED_F = np.array([[1.0, 1.0], [-4.0, 1.0]])


def _linear_system(A):
    n = len(A)
    eqs = [" + ".join(f"({A[i][j]!r}) * x[{j}]" for j in range(n)) for i in range(n)]
    return system_from_equations("linear", eqs)


def test_worked_example_stretching_factors():
    eye = Metric.identity(2)
    assert stretching_factor(WORKED_F, eye, eye) == pytest.approx(4.1926, abs=1e-3)
    m = optimal_metric(WORKED_F)
    assert stretching_factor(WORKED_F, m, m) == pytest.approx(math.sqrt(5), abs=1e-9)


def test_strain_tensors_of_point_gradient():
    tens = strain_tensors(WORKED_F)
    C = WORKED_F.T @ WORKED_F
    assert np.allclose(tens["C"].mid(), C)
    assert np.allclose(tens["E"].mid(), 0.5 * (C - np.eye(2)))
    assert np.allclose(tens["eps_inf"].mid() + tens["omega"].mid(), WORKED_F - np.eye(2))
    assert np.allclose(tens["omega"].mid(), -tens["omega"].mid().T)


@given(st.integers(2, 4), seeds)
def test_optimal_metric_attains_spectral_radius(n, seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(n, n))
    try:
        m = optimal_metric(F)
    except NearDefective:
        return
    rho = np.max(np.abs(np.linalg.eigvals(F)))
    lam = stretching_factor(F, m, m)
    assert lam >= rho * (1 - 1e-12)
    assert lam == pytest.approx(rho, rel=1e-6, abs=1e-6)
    # no other metric beats the spectral radius
    B = rng.normal(size=(n, n)) + 0.1 * np.eye(n)
    alt = Metric.from_factor(B)
    assert stretching_factor(F, alt, alt) >= rho * (1 - 1e-8)


@given(seeds, st.floats(0.0, 0.05))
def test_stretching_factor_bounds_sampled_norm_ratios(seed, r):
    rng = np.random.default_rng(seed)
    F = Interval.from_mid_rad(rng.normal(size=(3, 3)), r)
    m0 = decompose(np.diag(rng.uniform(0.5, 2.0, 3)))
    m1 = Metric.from_factor(rng.normal(size=(3, 3)) + 2 * np.eye(3))
    lam = stretching_factor(F, m0, m1)
    for _ in range(20):
        f = rng.uniform(F.lo, F.hi)
        v = rng.normal(size=3)
        ratio = np.linalg.norm(m1.A @ f @ v) / np.linalg.norm(m0.A @ v)
        assert ratio <= lam


def _random_metric_and_gradient(n, seed):
    rng = np.random.default_rng(seed)
    A0 = rng.normal(size=(n, n)) + 2 * np.eye(n)
    F = rng.normal(size=(n, n)) + 2 * np.eye(n)
    return Metric.from_factor(A0), F


@given(st.integers(2, 4), seeds)
def test_transported_metric_tracks_volume_exactly(n, seed):
    m0, F = _random_metric_and_gradient(n, seed)
    tr = transported_metric(m0, F)
    lam = stretching_factor(F, m0, tr)
    assert abs(tr.log_abs_det_A()) < 1e-9
    # equivalent radius of the image ball matches the flow's volume change
    expected = (np.linalg.slogdet(F)[1] - m0.log_abs_det_A()) / n
    assert math.log(lam) - tr.log_abs_det_A() / n - expected == pytest.approx(0.0, abs=1e-8)


@given(st.integers(2, 4), seeds, st.floats(1.0, 50.0))
def test_capped_transported_metric_contains_image_ball(n, seed, cond_max):
    m0, F = _random_metric_and_gradient(n, seed)
    capped = transported_metric(m0, F, cond_max)
    assert np.linalg.cond(capped.A) <= cond_max * (1 + 1e-9)
    lam = stretching_factor(F, m0, capped)
    rng = np.random.default_rng(seed)
    for x in rng.normal(size=(50, n)):
        r0 = np.linalg.norm(m0.A @ x)
        assert np.linalg.norm(capped.A @ (F @ x)) <= lam * r0 * (1 + 1e-12)


def test_transported_metric_of_rotation_has_unit_factor():
    c, s = math.cos(0.3), math.sin(0.3)
    F = np.array([[c, -s], [s, c]])
    tr = transported_metric(Metric.identity(2), F, 20.0)
    assert stretching_factor(F, Metric.identity(2), tr) == pytest.approx(1.0, abs=1e-9)


def test_metric_switch_rule_and_ftle():
    assert metric_switch(3.0, 1.0, 1.5)
    assert not metric_switch(1.5, 1.0, 1.5)
    assert ftle_bound(math.e, 2.0) >= 0.5
    assert ftle_bound(math.e, 2.0) - 0.5 < 1e-14
    with pytest.raises(ValueError):
        ftle_bound(1.0, 0.0)


def test_initial_radius_from_box_closed_form():
    eye = Metric.identity(3)
    r = np.array([0.01, 0.02, 0.03])
    delta = initial_radius_from_box(r, eye)
    assert delta >= np.linalg.norm(r)
    assert delta - np.linalg.norm(r) < 1e-15
    m = decompose(np.array([[4.0, 0.0], [0.0, 1.0]]))
    assert initial_radius_from_box([0.01, 0.01], m) == pytest.approx(math.sqrt(0.0005), rel=1e-12)


def test_ist_halving_chain_closed_form():
    sys = system_from_equations("growth", ["10 * x[0]"])
    cfg = ClrtConfig(T=1.0, x0_box=[1.0], delta0=0.01, k=10, eps_ist=0.01)
    ball = Ball(Interval([1.0]), Metric.identity(1), 0.01)
    h, G = ist_adapt(sys, 0.0, 0.1, ball, cfg)
    # e^{10 h} - 1 < 0.01 first holds after seven halvings of 0.1
    assert h == 0.1 / 2**7
    assert math.expm1(10 * 2 * h) >= 0.01
    assert G.hi[0, 0] - 1 < 0.01


def test_ist_raises_underflow():
    sys = system_from_equations("growth", ["10 * x[0]"])
    cfg = ClrtConfig(T=1.0, x0_box=[1.0], delta0=0.01, k=10, eps_ist=1e-12, h_floor_rel=1e-6)
    ball = Ball(Interval([1.0]), Metric.identity(1), 0.01)
    with pytest.raises(StepUnderflow):
        ist_adapt(sys, 0.0, 0.1, ball, cfg)


def test_ball_pieces_cover_ball():
    ball = Ball(Interval([0.0, 0.0]), decompose(np.array([[2.0, 0.5], [0.5, 1.0]])), 0.1)
    pieces = ball_pieces(ball, 8)
    assert 0 < pieces.shape[0] < 64
    rng = np.random.default_rng(3)
    for p in ball.sample(rng, 500):
        assert np.any(np.all((pieces.lo <= p) & (p <= pieces.hi), axis=1))
    assert ball_pieces(ball, 1) is None


def test_config_validation():
    with pytest.raises(ConfigError, match="c_delta"):
        ClrtConfig(T=1.0, x0_box=[0.0], delta0=0.1, c_delta=1.0)
    with pytest.raises(ConfigError, match="T must not precede"):
        ClrtConfig(T=-1.0, x0_box=[0.0], delta0=0.1)
    with pytest.raises(ConfigError, match="delta0"):
        ClrtConfig(T=1.0, x0_box=[0.0], delta0=0.0)
    cfg = ClrtConfig(T=2.0, x0_box=[0.0, 0.0], delta0=0.1, k=4)
    assert cfg.h0 == 0.5 and cfg.splits == 8 and cfg.M0.dim == 2


@pytest.mark.parametrize("A", [
    [[-1.0, 2.0], [-2.0, -1.0]],
    [[0.5, 0.0], [1.0, -2.0]],
    [[0.0, 1.0], [-1.0, 0.0]],
])
def test_linear_tube_contains_exact_flow(A):
    """The flow of a linear field is ``expm(A t) x0``: every sampled state must be covered."""
    A = np.array(A)
    sys = _linear_system(A.tolist())
    cfg = ClrtConfig(T=2.0, x0_box=[1.0, 0.5], delta0=0.05, k=20, c_m=1.0)
    tube = run(sys, cfg)
    assert tube.complete
    assert tube[0].t_lo == 0.0 and tube[-1].t_hi == 2.0
    for a, b in zip(tube, tube[1:]):
        assert a.t_hi == b.t_lo
    rng = np.random.default_rng(4)
    x0 = Ball(Interval([1.0, 0.5]), Metric.identity(2), 0.05).sample(rng, 200)
    for seg in tube:
        assert seg.delta_big >= seg.delta_small
        for t in np.linspace(seg.t_lo, seg.t_hi, 4):
            xt = x0 @ expm(A * t).T
            assert np.all(seg.continuous.possibly_contains(xt, tol=1e-9))
        xe = x0 @ expm(A * seg.t_hi).T
        assert np.all(seg.discrete_end.possibly_contains(xe, tol=1e-9))


def test_advance_switches_to_contracting_metric():
    # strongly non-normal stable field: the Euclidean factor exceeds one while
    # the eigenvector metric contracts, so the switch must fire
    sys = _linear_system([[-1.0, 20.0], [0.0, -2.0]])
    cfg = ClrtConfig(T=1.0, x0_box=[0.0, 0.0], delta0=0.01, k=10, c_m=1.0)
    ball = Ball(Interval([0.0, 0.0]), Metric.identity(2), 0.01)
    seg, nxt = advance(sys, 0.0, ball, cfg)
    assert seg.switched
    assert seg.lam > 0 and nxt.metric is seg.discrete_end.metric


def test_run_reports_partial_tube():
    blow = system_from_equations("blowup", ["x[0] * x[0]"])
    cfg = ClrtConfig(T=2.0, x0_box=[1.0], delta0=0.01, k=4, h_floor_rel=1e-3)
    tube = run(blow, cfg)
    assert not tube.complete
    assert tube.reason
    assert all(seg.t_hi < 1.0 for seg in tube)


def test_zero_horizon_gives_empty_tube():
    cfg = ClrtConfig(T=0.0, x0_box=[0.9, 0.1], delta0=0.01)
    tube = run(builtin("brusselator"), cfg)
    assert tube.complete and len(tube) == 0
