import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clrt.errors import NearDefective, NotPositiveDefinite, RankDeficient
from clrt.interval import Interval, imatrix
from clrt.linalg import (
    Metric,
    decompose,
    real_eigenbasis,
    spectral_norm_bound,
    spectral_norm_bounds,
    sym_eigmax_upper,
    verified_inverse,
    weighted_norm,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 5)


@given(dims, seeds)
def test_verified_inverse_contains_exact_inverse(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 3 * np.eye(n)
    _, box = verified_inverse(A)
    with mpmath.workdps(50):
        inv = mpmath.matrix(A.tolist()) ** -1
        for i in range(n):
            for j in range(n):
                assert box.lo[i, j] <= inv[i, j] <= box.hi[i, j]
    assert np.max(box.width()) < 1e-10


def test_verified_inverse_rejects_singular():
    with pytest.raises(RankDeficient):
        verified_inverse(np.array([[1.0, 2.0], [2.0, 4.0]]))


@given(dims, seeds, st.floats(0.0, 0.2))
def test_spectral_norm_bound_dominates_members(n, seed, r):
    rng = np.random.default_rng(seed)
    G = imatrix(rng.normal(size=(n, n)), radius=r * rng.random((n, n)))
    bound = spectral_norm_bound(G)
    for _ in range(30):
        g = rng.uniform(G.lo, G.hi)
        assert np.linalg.norm(g, 2) <= bound
    # vertices attain the extreme norms for small boxes; the bound must beat them
    assert bound >= np.linalg.norm(G.mid(), 2)


def test_spectral_norm_bound_is_tight_on_points():
    F = np.array([[1.0, 1.0], [-4.0, 1.0]])
    bound = spectral_norm_bound(Interval(F))
    assert bound >= np.linalg.norm(F, 2)
    assert bound - np.linalg.norm(F, 2) < 1e-12


@given(seeds)
def test_batched_norm_bounds_match_single(seed):
    rng = np.random.default_rng(seed)
    stack = Interval.from_mid_rad(rng.normal(size=(6, 3, 3)), 0.05)
    batch = spectral_norm_bounds(stack)
    single = [spectral_norm_bound(stack[i]) for i in range(6)]
    assert np.allclose(batch, single, rtol=0, atol=0)


@given(st.integers(1, 6), seeds, st.floats(0.0, 0.3))
def test_sym_eigmax_upper_dominates_members(n, seed, r):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    S = 0.5 * (B + B.T)
    R = r * rng.random((n, n))
    R = 0.5 * (R + R.T)
    box = imatrix(S, radius=R)
    bound = sym_eigmax_upper(box, assume_symmetric=True)
    for _ in range(20):
        E = rng.uniform(-R, R)
        E = np.triu(E) + np.triu(E, 1).T
        assert np.linalg.eigvalsh(S + E)[-1] <= bound


def test_sym_eigmax_upper_vertex_enumeration_is_sharp():
    # interval [[0, [-1, 1]], [[-1, 1], 0]]: max eigenvalue over the box is 1
    box = Interval(np.array([[0.0, -1.0], [-1.0, 0.0]]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    bound = sym_eigmax_upper(box, assume_symmetric=True)
    assert 1.0 <= bound < 1.0 + 1e-12


@given(dims, seeds)
def test_decompose_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    M = B.T @ B + 0.5 * np.eye(n)
    m = decompose(M)
    assert np.allclose(m.A.T @ m.A, M, atol=1e-10 * np.max(np.abs(M)))
    assert np.all(m.A_inv_box.lo <= m.A_inv) and np.all(m.A_inv <= m.A_inv_box.hi)
    x = rng.normal(size=n)
    nrm = weighted_norm(Interval(x), m)
    assert nrm.lo <= np.sqrt(x @ M @ x) * (1 + 1e-12) and np.sqrt(x @ M @ x) <= nrm.hi * (1 + 1e-12)


def test_decompose_rejects_indefinite_and_asymmetric():
    with pytest.raises(NotPositiveDefinite):
        decompose(np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(NotPositiveDefinite):
        decompose(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        Metric.from_factor(np.zeros((2, 2)))


def test_box_halfwidths_cover_ellipse():
    m = decompose(np.array([[4.0, 1.0], [1.0, 1.0]]))
    hw = m.box_halfwidths(1.0)
    # exact half-widths of {x : x^T M x <= 1} are sqrt(diag(M^-1))
    exact = np.sqrt(np.diag(np.linalg.inv(m.M)))
    assert np.all(hw >= exact) and np.all(hw <= exact * (1 + 1e-10))


def test_real_eigenbasis_worked_example():
    F = np.array([[1.0, 1.0], [-4.0, 1.0]])
    basis = real_eigenbasis(F)
    A = basis.A_hat
    assert np.allclose(A @ F @ np.linalg.inv(A), [[1.0, -2.0], [2.0, 1.0]], atol=1e-12)
    assert np.allclose(np.sort(np.abs(A).ravel()), [0, 0, 1 / np.sqrt(5), 2 / np.sqrt(5)], atol=1e-12)
    assert np.allclose(basis.eig_moduli, np.sqrt(5))


@given(st.integers(2, 4), seeds)
def test_real_eigenbasis_block_diagonalises(n, seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(n, n))
    try:
        basis = real_eigenbasis(F)
    except NearDefective:
        return
    A = basis.A_hat
    assert np.allclose(A @ F @ np.linalg.inv(A), basis.blocks, atol=1e-8 * np.linalg.cond(A))


def test_real_eigenbasis_rejects_jordan_block():
    with pytest.raises(NearDefective):
        real_eigenbasis(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(RankDeficient):
        real_eigenbasis(np.zeros((2, 2)))
