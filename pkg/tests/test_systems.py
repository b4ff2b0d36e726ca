import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clrt.errors import BadParameter, UnknownSystem
from clrt.interval import Interval
from clrt.systems import builtin, builtin_names, builtin_spec, eval_dt, system_from_equations

seeds = st.integers(0, 2**32 - 1)


def _sample_state(name, rng):
    spec = builtin_spec(name)
    c = np.asarray(spec["initial_center"], dtype=float)
    return c + 0.3 * rng.normal(size=c.shape)


@pytest.mark.parametrize("name", builtin_names())
def test_jacobian_matches_central_differences(name):
    sys = builtin(name)
    rng = np.random.default_rng(1)
    for _ in range(3):
        x = _sample_state(name, rng)
        t = rng.uniform(0, 5)
        J = sys.jac(t, x)
        step = 1e-6
        fd = np.empty_like(J)
        for j in range(sys.dim):
            e = np.zeros(sys.dim)
            e[j] = step
            fd[:, j] = (sys.f(t, x + e) - sys.f(t, x - e)) / (2 * step)
        assert np.allclose(J, fd, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("name", builtin_names())
def test_interval_evaluation_encloses_points(name):
    sys = builtin(name)
    rng = np.random.default_rng(2)
    c = _sample_state(name, rng)
    box = Interval(c - 0.01, c + 0.01)
    t = Interval(0.5, 0.6)
    F = sys.f(t, box)
    J = sys.jac(t, box)
    for _ in range(50):
        x = rng.uniform(box.lo, box.hi)
        s = rng.uniform(0.5, 0.6)
        fx, jx = sys.f(s, x), sys.jac(s, x)
        assert np.all(F.lo <= fx) and np.all(fx <= F.hi)
        assert np.all(J.lo <= jx) and np.all(jx <= J.hi)


def test_batched_evaluation_matches_single():
    sys = builtin("brusselator")
    xs = np.array([[0.9, 0.1], [1.0, 2.0], [0.5, 0.5]])
    batch = sys.f(0.0, xs)
    assert batch.shape == (3, 2)
    for i, x in enumerate(xs):
        assert np.array_equal(batch[i], sys.f(0.0, x))
    assert sys.jac(0.0, xs).shape == (3, 2, 2)


def test_time_dependence_detection():
    assert builtin("dubins").time_variant
    assert not builtin("brusselator").time_variant
    dt = eval_dt(builtin("dubins"), 1.0, np.array([2.0, 0.0, 0.0]))
    assert np.allclose(dt, [0.0, 0.0, 2.0 * np.cos(1.0)])


def test_parameter_overrides_and_unknown_names():
    sys = builtin("brusselator", {"b": 2.0})
    assert sys.params["b"] == 2.0
    with pytest.raises(BadParameter):
        builtin("brusselator", {"nope": 1.0})
    with pytest.raises(UnknownSystem):
        builtin("lorenz")


@given(seeds)
def test_equation_parser_matches_builtin(seed):
    rng = np.random.default_rng(seed)
    eqs = ["a + x[0]**2 * x[1] - (b + 1) * x[0]", "b * x[0] - x[0]**2 * x[1]"]
    parsed = system_from_equations("bruss", eqs, {"a": 1.0, "b": 1.5})
    ref = builtin("brusselator")
    x = rng.uniform(-2, 2, size=2)
    assert np.allclose(parsed.f(0.0, x), ref.f(0.0, x), rtol=1e-14, atol=1e-14)
    assert np.allclose(parsed.jac(0.0, x), ref.jac(0.0, x), rtol=1e-14, atol=1e-14)


def test_equation_parser_functions_and_time():
    sys = system_from_equations("d", ["cos(x[2])", "sin(x[2])", "x[0] * sin(t)"])
    ref = builtin("dubins")
    x = np.array([0.3, -0.2, 0.7])
    assert np.allclose(sys.f(1.3, x), ref.f(1.3, x))
    assert sys.time_variant


@pytest.mark.parametrize("bad", [
    "__import__('os')",
    "x[0] ** 0.5",
    "x[0] ** y",
    "x[5]",
    "x.real",
    "unknown * x[0]",
    "abs(x[0])",
    "x[0] if t else 1",
    "[x[0]]",
    "lambda: 1",
    "x[0] +",
])
def test_equation_parser_rejects_unsafe_input(bad):
    with pytest.raises(BadParameter):
        system_from_equations("bad", [bad, "x[0]"])


def test_equation_parser_rejects_reserved_parameter_names():
    with pytest.raises(BadParameter):
        system_from_equations("bad", ["x[0]"], {"sin": 1.0})
    with pytest.raises(BadParameter):
        system_from_equations("bad", [])
