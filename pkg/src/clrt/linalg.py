"""Point and interval linear algebra for weighted norms and stretching factors.

The metric of a ball is defined by its factor ``A`` (``M = A^T A``), which is
stored exactly as a float matrix; every weighted norm is evaluated as the
Euclidean norm of ``A x`` in interval arithmetic, so the stored ``A`` is the
authoritative description of the metric.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    NearDefective,
    NonFiniteEntry,
    NotPositiveDefinite,
    RankDeficient,
)
from .interval import Interval, down, r_sum, up

__all__ = [
    "Metric",
    "EigenBasis",
    "verified_inverse",
    "weighted_norm",
    "sym_eigmax_upper",
    "decompose",
    "real_eigenbasis",
    "spectral_norm_bound",
    "spectral_norm_bounds",
    "NEAR_DEFECTIVE_COND",
    "VERTEX_MAX_DIM",
]

NEAR_DEFECTIVE_COND = 1e8
VERTEX_MAX_DIM = 4


def _as_interval(x) -> Interval:
    if isinstance(x, Interval):
        return x
    a = np.asarray(x, dtype=float)
    return Interval._raw(a, a)


def _upper_abs_sum(mag: np.ndarray, axis) -> np.ndarray:
    return r_sum(mag, mag, axis)[1]


def verified_inverse(A: np.ndarray, approx: np.ndarray | None = None):
    """Return ``(R, box)`` with ``R`` an approximate inverse of ``A`` and ``box``
    an interval matrix guaranteed to contain the exact inverse.

    Works on stacks of matrices (leading batch dimensions).
    Raises :class:`RankDeficient` when invertibility cannot be certified.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NonFiniteEntry("matrix has non-finite entries")
    n = A.shape[-1]
    if approx is None:
        try:
            R = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            raise RankDeficient("matrix is singular") from None
    else:
        R = np.asarray(approx, dtype=float)
    if not np.all(np.isfinite(R)):
        raise RankDeficient("matrix is numerically singular")
    # E = I - R A, enclosed
    RA = _as_interval(R) @ _as_interval(A)
    E = Interval._raw(np.broadcast_to(np.eye(n), RA.shape), np.broadcast_to(np.eye(n), RA.shape)) - RA
    beta = np.max(_upper_abs_sum(E.mag(), -1), axis=-1)  # ||E||_inf
    if np.any(beta >= 0.5):
        raise RankDeficient("could not certify invertibility")
    r_norm = np.max(_upper_abs_sum(np.abs(R), -1), axis=-1)
    eps = up(up(beta * r_norm) / down(1.0 - beta))
    eps = np.asarray(eps)[..., None, None]
    return R, Interval._raw(down(R - eps), up(R + eps))


@dataclass(frozen=True, eq=False)
class Metric:
    """Positive-definite metric ``M = A^T A`` with its factor and inverse.

    ``A_inv_box`` is a rigorous enclosure of ``A^{-1}``; ``certified_pd`` is set
    once invertibility of ``A`` (equivalently ``M > 0``) has been verified.
    """

    M: np.ndarray
    A: np.ndarray
    A_inv: np.ndarray
    A_inv_box: Interval
    certified_pd: bool
    recon_tol: float = 1e-10

    @classmethod
    def from_factor(cls, A, M=None) -> "Metric":
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch("metric factor must be square")
        if not np.all(np.isfinite(A)):
            raise NonFiniteEntry("metric factor has non-finite entries")
        try:
            R, box = verified_inverse(A)
        except RankDeficient as exc:
            raise NotPositiveDefinite(str(exc)) from None
        if M is None:
            M = A.T @ A
        M = 0.5 * (M + M.T)
        for arr in (A, R, M):
            arr.setflags(write=False)
        return cls(M=M, A=A, A_inv=R, A_inv_box=box, certified_pd=True)

    @classmethod
    def identity(cls, n: int) -> "Metric":
        return cls.from_factor(np.eye(n))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def norm(self, x) -> Interval:
        return weighted_norm(x, self)

    def log_abs_det_A(self) -> float:
        return float(np.linalg.slogdet(self.A)[1])

    def box_halfwidths(self, radius: float) -> np.ndarray:
        """Upper bounds on the axis half-widths of ``{x : ||A x||_2 <= radius}``."""
        mag = self.A_inv_box.mag()
        row = np.sqrt(up(_upper_abs_sum(mag * mag, -1)))
        return up(up(row) * radius)


def weighted_norm(x, m: Metric) -> Interval:
    """Enclosure of ``sqrt(x^T M x)`` for every point of the interval vector(s) ``x``.

    ``x`` may carry leading batch dimensions; the last axis is the state.
    """
    x = _as_interval(x)
    if x.shape[-1] != m.dim:
        raise DimensionMismatch(f"vector of dim {x.shape[-1]} vs metric of dim {m.dim}")
    if not m.certified_pd:
        raise NotPositiveDefinite("metric not certified")
    y = x @ Interval._raw(m.A.T, m.A.T)
    return y.sqr().sum(axis=-1).sqrt()


# ---------------------------------------------------------------------------
# eigenvalue bounds
# ---------------------------------------------------------------------------

def _certified_eigmax_points(S: np.ndarray) -> np.ndarray:
    """Rigorous upper bounds of lambda_max for a stack of symmetric point matrices.

    Approximate diagonalisation with ``eigh`` followed by Gershgorin discs of the
    exactly similar matrix ``Q^{-1} S Q`` (with ``Q^{-1}`` enclosed).
    """
    n = S.shape[-1]
    _, Q = np.linalg.eigh(S)
    _, Qinv = verified_inverse(Q, approx=np.swapaxes(Q, -1, -2))
    B = (Qinv @ _as_interval(S)) @ _as_interval(Q)
    off = B.mag()
    idx = np.arange(n)
    off[..., idx, idx] = 0.0
    radii = _upper_abs_sum(off, -1)
    return np.max(up(B.hi[..., idx, idx] + radii), axis=-1)


def _perron_upper(R: np.ndarray) -> np.ndarray:
    """Upper bounds of the spectral radius of a stack of nonnegative matrices (Collatz-Wielandt)."""
    _, V = np.linalg.eigh(0.5 * (R + np.swapaxes(R, -1, -2)))
    x = np.abs(V[..., :, -1])
    x = x + 1e-3 * np.maximum(np.max(x, axis=-1, keepdims=True), 1e-300)
    y = (_as_interval(R) @ _as_interval(x[..., None])).hi[..., 0]
    return np.max(up(y / x), axis=-1)


def _sym_eigmax_batch(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Upper bounds of lambda_max over stacks of symmetric interval matrices."""
    Sym = Interval._raw(lo, hi)
    c = Sym.mid()
    r = Sym.rad()
    n = lo.shape[-1]
    best = up(_certified_eigmax_points(c) + _perron_upper(r))
    if n <= VERTEX_MAX_DIM:
        signs = np.array([(1.0,) + z for z in itertools.product((1.0, -1.0), repeat=n - 1)])
        outer = signs[:, :, None] * signs[:, None, :]
        verts = np.where(outer > 0, hi[..., None, :, :], lo[..., None, :, :])
        vb = _certified_eigmax_points(verts.reshape((-1, n, n))).reshape(verts.shape[:-2])
        best = np.minimum(best, np.max(vb, axis=-1))
    return best


def _check_square_stack(S: Interval):
    if S.ndim < 2 or S.shape[-1] != S.shape[-2]:
        raise DimensionMismatch("expected square interval matrices")
    if not (np.all(np.isfinite(S.lo)) and np.all(np.isfinite(S.hi))):
        raise NonFiniteEntry("interval matrix has non-finite entries")


def sym_eigmax_upper(S, assume_symmetric: bool = False) -> float:
    """Upper bound of lambda_max over all symmetric matrices in the interval matrix ``S``.

    Two rigorous bounds are computed and the smaller returned:
    ``lambda_max(mid) + rho(rad)``, and for ``n <= VERTEX_MAX_DIM`` the maximum
    over the ``2^(n-1)`` sign vertices ``mid + D_z rad D_z`` (where the maximum
    over the whole set is attained, since lambda_max is convex).
    """
    S = _as_interval(S)
    if S.ndim != 2:
        raise DimensionMismatch("expected a square interval matrix")
    _check_square_stack(S)
    n = S.shape[0]
    if assume_symmetric:
        iu = np.triu_indices(n, 1)
        lo = S.lo.copy()
        hi = S.hi.copy()
        lo[iu[1], iu[0]] = lo[iu]
        hi[iu[1], iu[0]] = hi[iu]
    else:
        lo = np.maximum(S.lo, S.lo.T)
        hi = np.minimum(S.hi, S.hi.T)
        if np.any(lo > hi):  # no symmetric member: fall back to the hull
            lo = np.minimum(S.lo, S.lo.T)
            hi = np.maximum(S.hi, S.hi.T)
    return float(_sym_eigmax_batch(lo[None], hi[None])[0])


def _gram(G: Interval) -> Interval:
    Gt = Interval._raw(np.swapaxes(G.lo, -1, -2), np.swapaxes(G.hi, -1, -2))
    C = Gt @ G
    diag = G.sqr().sum(axis=-2)
    idx = np.arange(G.shape[-1])
    lo = C.lo.copy()
    hi = C.hi.copy()
    lo[..., idx, idx] = np.maximum(lo[..., idx, idx], diag.lo)
    hi[..., idx, idx] = np.minimum(hi[..., idx, idx], diag.hi)
    return Interval._raw(lo, hi)


def spectral_norm_bounds(G) -> np.ndarray:
    """Upper bounds of ``||G_hat||_2`` for a stack ``(..., m, n)`` of interval matrices.

    ``sqrt(lambda_max(G^T G))`` is bounded through the symmetric eigenvalue
    bounds; the triangle bound ``||mid||_2 + ||rad||_2`` is also tried and the
    smaller value kept.
    """
    G = _as_interval(G)
    if G.ndim < 2:
        raise DimensionMismatch("expected a matrix")
    if not (np.all(np.isfinite(G.lo)) and np.all(np.isfinite(G.hi))):
        raise NonFiniteEntry("interval matrix has non-finite entries")
    batch = G.shape[:-2]
    n = G.shape[-1]
    G = Interval._raw(G.lo.reshape((-1,) + G.shape[-2:]), G.hi.reshape((-1,) + G.shape[-2:]))
    C = _gram(G)
    lam = np.maximum(_sym_eigmax_batch(C.lo, C.hi), 0.0)
    best = up(np.sqrt(lam))
    r = G.rad()
    c = G.mid()
    Cc = _gram(_as_interval(c))
    cn = np.maximum(_sym_eigmax_batch(Cc.lo, Cc.hi), 0.0)
    rn = _perron_upper(np.swapaxes(r, -1, -2) @ r) * (1.0 + 4 * G.shape[-2] * 2.0 ** -52)
    alt = up(up(np.sqrt(cn)) + up(np.sqrt(rn)))
    best = np.where(np.any(r > 0, axis=(-1, -2)), np.minimum(best, alt), best)
    return best.reshape(batch)


def spectral_norm_bound(G) -> float:
    """Upper bound of ``||G_hat||_2`` valid for every ``G_hat`` in ``G``."""
    G = _as_interval(G)
    if G.ndim != 2:
        raise DimensionMismatch("expected a matrix")
    return float(spectral_norm_bounds(G))


# ---------------------------------------------------------------------------
# metric construction
# ---------------------------------------------------------------------------

def decompose(M) -> Metric:
    """Factor a symmetric positive-definite ``M`` as ``A^T A`` (symmetric square root)."""
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch("metric must be square")
    if not np.all(np.isfinite(M)):
        raise NonFiniteEntry("metric has non-finite entries")
    scale = max(float(np.max(np.abs(M))), 1e-300)
    if np.max(np.abs(M - M.T)) > 1e-12 * scale:
        raise NotPositiveDefinite("metric is not symmetric")
    M = 0.5 * (M + M.T)
    lam, Q = np.linalg.eigh(M)
    if lam[0] <= 0:
        raise NotPositiveDefinite("metric has a nonpositive eigenvalue")
    if -sym_eigmax_upper(_as_interval(-M), assume_symmetric=True) <= 0.0:
        raise NotPositiveDefinite("positive definiteness could not be certified")
    A = (Q * np.sqrt(lam)) @ Q.T
    A = 0.5 * (A + A.T)
    return Metric.from_factor(A, M=M)


class EigenBasis(NamedTuple):
    A_hat: np.ndarray
    eig_moduli: np.ndarray
    blocks: np.ndarray
    eigenvalues: np.ndarray


def _normalise_row(w: np.ndarray) -> np.ndarray:
    w = w / np.linalg.norm(w)
    k = int(np.argmax(np.abs(w)))
    return w * (np.abs(w[k]) / w[k])


def real_eigenbasis(F) -> EigenBasis:
    """Real matrix ``A_hat`` with ``A_hat F A_hat^{-1}`` block diagonal.

    Rows of ``A_hat`` are unit-norm left eigenvectors of ``F``; a complex pair
    ``a +- bi`` contributes the real and imaginary parts of the eigenvector of
    ``a + bi`` (scaled so the pair of rows has unit Frobenius norm), giving the
    block ``[[a, -b], [b, a]]``.  The entry of largest modulus of each
    eigenvector is made real and positive, and eigenvalues are ordered by
    ``(Re, Im)`` descending.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise DimensionMismatch("F must be square")
    if not np.all(np.isfinite(F)):
        raise NonFiniteEntry("F has non-finite entries")
    n = F.shape[0]
    sv = np.linalg.svd(F, compute_uv=False)
    if sv[-1] <= n * np.finfo(float).eps * sv[0]:
        raise RankDeficient("F is numerically rank deficient")
    lam, U = np.linalg.eig(F.T)  # columns u: u^T F = lam u^T
    order = sorted(range(n), key=lambda i: (-lam[i].real, -lam[i].imag))
    rows = []
    blocks = np.zeros((n, n))
    pos = 0
    for i in order:
        li = lam[i]
        if np.iscomplexobj(lam) and li.imag < 0:
            continue
        w = _normalise_row(U[:, i])
        if not np.iscomplexobj(lam) or li.imag == 0:
            rows.append(np.real(w))
            blocks[pos, pos] = li.real
            pos += 1
        else:
            rows.append(np.real(w))
            rows.append(np.imag(w))
            a, b = li.real, li.imag
            blocks[pos:pos + 2, pos:pos + 2] = [[a, -b], [b, a]]
            pos += 2
    A_hat = np.array(rows)
    if A_hat.shape != (n, n):
        raise NearDefective("could not assemble a full eigenbasis")
    cond = np.linalg.cond(A_hat)
    if not np.isfinite(cond) or cond > NEAR_DEFECTIVE_COND:
        raise NearDefective(f"eigenvector matrix condition number {cond:.3g}")
    order_vals = np.array([lam[i] for i in order])
    return EigenBasis(A_hat=A_hat, eig_moduli=np.abs(order_vals), blocks=blocks,
                      eigenvalues=order_vals)
