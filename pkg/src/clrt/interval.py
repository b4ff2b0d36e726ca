"""Outward-rounded interval arithmetic on numpy arrays.

An :class:`Interval` holds two float64 arrays ``lo`` and ``hi`` of the same
shape, so one object can stand for a scalar interval, an interval vector
(``IVector``) or an interval matrix (``IMatrix``).  Every operation returns an
enclosure of the exact real result.

Rounding policy (the only place it is decided):

* ``+ - * /`` and ``sqrt`` are correctly rounded in IEEE-754 round-to-nearest,
  so moving each computed endpoint one ulp outward with ``np.nextafter`` gives a
  rigorous bound.  The process-wide rounding mode is never touched, which keeps
  the kernel thread-safe.
* ``sin``, ``cos``, ``exp`` and ``log`` come from the platform libm, which is
  not guaranteed to be correctly rounded; their endpoints are padded by
  ``TRANSCENDENTAL_PAD_ULPS`` ulps outward.
* Sums of many terms (dot products, Taylor convolutions) use the a-priori
  floating-point summation bound ``|err| <= 2 m u sum|x_i|`` instead of one
  rounding step per addition.
"""

from __future__ import annotations

import numbers

import numpy as np

from .errors import (
    DimensionMismatch,
    DivisionByZeroInterval,
    DomainError,
    InvalidInterval,
)

__all__ = [
    "Interval",
    "IVector",
    "IMatrix",
    "arith",
    "hull",
    "mid",
    "rad",
    "contains",
    "matvec",
    "matmul",
    "ivector",
    "imatrix",
    "stack",
    "eye",
    "isum",
    "TRANSCENDENTAL_PAD_ULPS",
]

TRANSCENDENTAL_PAD_ULPS = 2
_U = 2.0 ** -53
_INF = np.inf
_TWO_PI = 2.0 * np.pi


def down(x):
    return np.nextafter(x, -_INF)


def up(x):
    return np.nextafter(x, _INF)


def _pad_down(x):
    for _ in range(TRANSCENDENTAL_PAD_ULPS):
        x = np.nextafter(x, -_INF)
    return x


def _pad_up(x):
    for _ in range(TRANSCENDENTAL_PAD_ULPS):
        x = np.nextafter(x, _INF)
    return x


# ---------------------------------------------------------------------------
# raw kernels on (lo, hi) array pairs; shared with the Taylor tape
# ---------------------------------------------------------------------------

def r_add(alo, ahi, blo, bhi):
    return down(alo + blo), up(ahi + bhi)


def r_sub(alo, ahi, blo, bhi):
    return down(alo - bhi), up(ahi - blo)


def r_neg(lo, hi):
    return -hi, -lo


def r_mul(alo, ahi, blo, bhi):
    p1 = alo * blo
    p2 = alo * bhi
    p3 = ahi * blo
    p4 = ahi * bhi
    lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
    hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    return down(lo), up(hi)


def r_div(alo, ahi, blo, bhi):
    if np.any((blo <= 0.0) & (bhi >= 0.0)):
        raise DivisionByZeroInterval("divisor interval contains zero")
    q1 = alo / blo
    q2 = alo / bhi
    q3 = ahi / blo
    q4 = ahi / bhi
    lo = np.minimum(np.minimum(q1, q2), np.minimum(q3, q4))
    hi = np.maximum(np.maximum(q1, q2), np.maximum(q3, q4))
    return down(lo), up(hi)


def r_sqr(lo, hi):
    a = lo * lo
    b = hi * hi
    rlo = np.where(lo >= 0.0, a, np.where(hi <= 0.0, b, 0.0))
    rhi = np.where(lo >= 0.0, b, np.where(hi <= 0.0, a, np.maximum(a, b)))
    return np.maximum(down(rlo), 0.0), up(rhi)


def r_abs(lo, hi):
    mig = np.where(lo >= 0.0, lo, np.where(hi <= 0.0, -hi, 0.0))
    mag = np.maximum(np.abs(lo), np.abs(hi))
    return mig, mag


def r_exp(lo, hi):
    return np.maximum(_pad_down(np.exp(lo)), 0.0), _pad_up(np.exp(hi))


def r_log(lo, hi):
    if np.any(lo <= 0.0):
        raise DomainError("log of an interval reaching zero or below")
    return _pad_down(np.log(lo)), _pad_up(np.log(hi))


def r_sqrt(lo, hi):
    if np.any(lo < 0.0):
        raise DomainError("sqrt of an interval with negative lower bound")
    return np.maximum(down(np.sqrt(lo)), 0.0), up(np.sqrt(hi))


def _hits(lo, hi, phase):
    """True where some phase + 2*pi*k lies in [lo, hi] (conservatively widened)."""
    tol = 1e-12 * (1.0 + np.maximum(np.abs(lo), np.abs(hi)))
    k = np.ceil((lo - tol - phase) / _TWO_PI)
    hit = np.zeros(np.shape(lo), dtype=bool)
    for shift in (-1.0, 0.0, 1.0):
        cand = phase + _TWO_PI * (k + shift)
        hit |= (cand >= lo - tol) & (cand <= hi + tol)
    return hit


def _periodic(lo, hi, fn, max_phase, min_phase):
    flo = fn(lo)
    fhi = fn(hi)
    rlo = _pad_down(np.minimum(flo, fhi))
    rhi = _pad_up(np.maximum(flo, fhi))
    wide = (hi - lo) >= 6.2
    rhi = np.where(wide | _hits(lo, hi, max_phase), 1.0, rhi)
    rlo = np.where(wide | _hits(lo, hi, min_phase), -1.0, rlo)
    return np.maximum(rlo, -1.0), np.minimum(rhi, 1.0)


def r_sin(lo, hi):
    return _periodic(lo, hi, np.sin, 0.5 * np.pi, -0.5 * np.pi)


def r_cos(lo, hi):
    return _periodic(lo, hi, np.cos, 0.0, np.pi)


def r_sum(lo, hi, axis):
    """Directed sum of interval terms along ``axis``."""
    m = lo.shape[axis]
    slo = np.sum(lo, axis=axis)
    shi = np.sum(hi, axis=axis)
    if m <= 1:
        return slo, shi
    c = 2.0 * m * _U
    elo = c * np.sum(np.abs(lo), axis=axis)
    ehi = c * np.sum(np.abs(hi), axis=axis)
    rlo = down(slo - elo)
    # a sum of nonnegative terms is nonnegative (keeps sqrt of norms in domain)
    rlo = np.where(np.all(lo >= 0.0, axis=axis), np.maximum(rlo, 0.0), rlo)
    return rlo, up(shi + ehi)


def r_pow(lo, hi, n):
    if n == 0:
        one = np.ones_like(lo)
        return one, one.copy()
    if n == 1:
        return lo, hi
    if n == 2:
        return r_sqr(lo, hi)
    if n % 2 == 0:
        mig, mag = r_abs(lo, hi)
        plo, phi = mig, mig
        qlo, qhi = mag, mag
        for _ in range(n - 1):
            plo, phi = r_mul(plo, phi, mig, mig)
            qlo, qhi = r_mul(qlo, qhi, mag, mag)
        return np.maximum(plo, 0.0), qhi
    # odd powers are monotone
    plo, phi = lo, lo
    qlo, qhi = hi, hi
    for _ in range(n - 1):
        plo, phi = r_mul(plo, phi, lo, lo)
        qlo, qhi = r_mul(qlo, qhi, hi, hi)
    return plo, qhi


# ---------------------------------------------------------------------------
# Interval type
# ---------------------------------------------------------------------------

def _coerce(x) -> "Interval":
    if isinstance(x, Interval):
        return x
    a = np.asarray(x, dtype=float)
    return Interval._raw(a, a)


class Interval:
    """Array of closed intervals ``[lo, hi]`` with outward rounding.

    Values are treated as immutable: operations always return new objects and
    the public constructor marks its arrays read-only.
    """

    __slots__ = ("lo", "hi")
    __array_ufunc__ = None  # make ndarray <op> Interval defer to us

    def __init__(self, lo, hi=None):
        lo = np.array(lo, dtype=float)
        hi = lo.copy() if hi is None else np.array(hi, dtype=float)
        if lo.shape != hi.shape:
            lo, hi = (np.array(a) for a in np.broadcast_arrays(lo, hi))
        if not np.all(lo <= hi):
            raise InvalidInterval(f"invalid interval bounds lo={lo!r} hi={hi!r}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        self.lo = lo
        self.hi = hi

    @classmethod
    def _raw(cls, lo, hi) -> "Interval":
        obj = object.__new__(cls)
        obj.lo = lo
        obj.hi = hi
        return obj

    @classmethod
    def point(cls, x) -> "Interval":
        return cls(x, x)

    @classmethod
    def from_mid_rad(cls, m, r) -> "Interval":
        m = np.asarray(m, dtype=float)
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise InvalidInterval("negative radius")
        return cls(down(m - r), up(m + r))

    # -- shape handling ----------------------------------------------------
    @property
    def shape(self):
        return self.lo.shape

    @property
    def ndim(self):
        return self.lo.ndim

    @property
    def size(self):
        return self.lo.size

    @property
    def T(self) -> "Interval":
        return Interval._raw(self.lo.T, self.hi.T)

    def __len__(self):
        return len(self.lo)

    def __getitem__(self, idx) -> "Interval":
        return Interval._raw(self.lo[idx], self.hi[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def reshape(self, *shape) -> "Interval":
        return Interval._raw(self.lo.reshape(*shape), self.hi.reshape(*shape))

    def swapaxes(self, a, b) -> "Interval":
        return Interval._raw(np.swapaxes(self.lo, a, b), np.swapaxes(self.hi, a, b))

    def copy(self) -> "Interval":
        return Interval(self.lo, self.hi)

    # -- measures ------------------------------------------------------------
    def mid(self) -> np.ndarray:
        m = 0.5 * (self.lo + self.hi)
        return np.where(np.isfinite(m), m, 0.5 * self.lo + 0.5 * self.hi)

    def rad(self) -> np.ndarray:
        m = self.mid()
        return np.maximum(up(m - self.lo), up(self.hi - m))

    def width(self) -> np.ndarray:
        return up(self.hi - self.lo)

    def mag(self) -> np.ndarray:
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def mig(self) -> np.ndarray:
        return r_abs(self.lo, self.hi)[0]

    def is_degenerate(self) -> bool:
        return bool(np.all(self.lo == self.hi))

    # -- set relations -------------------------------------------------------
    def contains(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return (self.lo <= p) & (p <= self.hi)

    def subset(self, other) -> bool:
        other = _coerce(other)
        return bool(np.all((other.lo <= self.lo) & (self.hi <= other.hi)))

    def hull(self, other) -> "Interval":
        other = _coerce(other)
        return Interval._raw(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def intersect(self, other):
        """Intersection, or ``None`` when some component is empty."""
        other = _coerce(other)
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Interval._raw(lo, hi)

    def inflate(self, abs_tol=0.0, rel_tol=0.0) -> "Interval":
        r = rel_tol * self.rad() + abs_tol
        return Interval._raw(down(self.lo - r), up(self.hi + r))

    # -- arithmetic ------------------------------------------------------------
    def __add__(self, other):
        o = _coerce(other)
        return Interval._raw(*r_add(self.lo, self.hi, o.lo, o.hi))

    __radd__ = __add__

    def __sub__(self, other):
        o = _coerce(other)
        return Interval._raw(*r_sub(self.lo, self.hi, o.lo, o.hi))

    def __rsub__(self, other):
        o = _coerce(other)
        return Interval._raw(*r_sub(o.lo, o.hi, self.lo, self.hi))

    def __mul__(self, other):
        o = _coerce(other)
        return Interval._raw(*r_mul(self.lo, self.hi, o.lo, o.hi))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _coerce(other)
        return Interval._raw(*r_div(self.lo, self.hi, o.lo, o.hi))

    def __rtruediv__(self, other):
        o = _coerce(other)
        return Interval._raw(*r_div(o.lo, o.hi, self.lo, self.hi))

    def __neg__(self):
        return Interval._raw(-self.hi, -self.lo)

    def __pos__(self):
        return self

    def __pow__(self, n):
        if not isinstance(n, numbers.Integral):
            raise TypeError("only integer powers are supported; use exp/log")
        n = int(n)
        if n < 0:
            return 1.0 / self.__pow__(-n)
        return Interval._raw(*r_pow(self.lo, self.hi, n))

    def __abs__(self):
        return Interval._raw(*r_abs(self.lo, self.hi))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sqr(self):
        return Interval._raw(*r_sqr(self.lo, self.hi))

    def sqrt(self):
        return Interval._raw(*r_sqrt(self.lo, self.hi))

    def exp(self):
        return Interval._raw(*r_exp(self.lo, self.hi))

    def log(self):
        return Interval._raw(*r_log(self.lo, self.hi))

    def sin(self):
        return Interval._raw(*r_sin(self.lo, self.hi))

    def cos(self):
        return Interval._raw(*r_cos(self.lo, self.hi))

    def sum(self, axis=None):
        if axis is None:
            return Interval._raw(*r_sum(self.lo.ravel(), self.hi.ravel(), 0))
        return Interval._raw(*r_sum(self.lo, self.hi, axis))

    def __repr__(self):
        if self.ndim == 0:
            return f"Interval([{self.lo!r}, {self.hi!r}])"
        return f"Interval(lo={self.lo!r}, hi={self.hi!r})"


IVector = Interval
IMatrix = Interval


# ---------------------------------------------------------------------------
# free functions
# ---------------------------------------------------------------------------

_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
    "pow": lambda a, b: a ** int(b),
    "sin": lambda a, b: a.sin(),
    "cos": lambda a, b: a.cos(),
    "exp": lambda a, b: a.exp(),
    "log": lambda a, b: a.log(),
    "sqrt": lambda a, b: a.sqrt(),
    "abs": lambda a, b: abs(a),
}


def arith(a, b, op: str) -> Interval:
    """Apply ``op`` by name; unary operations ignore ``b``."""
    try:
        fn = _ARITH[op]
    except KeyError:
        raise ValueError(f"unknown interval operation {op!r}") from None
    return fn(_coerce(a), b)


def hull(a, b) -> Interval:
    return _coerce(a).hull(b)


def mid(a) -> np.ndarray:
    return _coerce(a).mid()


def rad(a) -> np.ndarray:
    return _coerce(a).rad()


def contains(a, p) -> np.ndarray:
    return _coerce(a).contains(p)


def isum(x, axis=None) -> Interval:
    return _coerce(x).sum(axis)


def matmul(a, b) -> Interval:
    """Interval matrix product with rigorous dot-product bounds.

    Accepts the same 1-d/2-d combinations as ``np.matmul`` (with leading
    batch dimensions on matrices).
    """
    a = _coerce(a)
    b = _coerce(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionMismatch("matmul needs at least 1-d operands")
    if a.shape[-1] != (b.shape[0] if b.ndim == 1 else b.shape[-2]):
        raise DimensionMismatch(f"matmul shape mismatch {a.shape} @ {b.shape}")
    if np.array_equal(a.lo, a.hi):
        return _point_matmul(a.lo, b, left=True)
    if np.array_equal(b.lo, b.hi):
        return _point_matmul(b.lo, a, left=False)
    if b.ndim == 1:
        lo, hi = r_mul(a.lo, a.hi, b.lo, b.hi)
        return Interval._raw(*r_sum(lo, hi, -1))
    if a.ndim == 1:
        lo, hi = r_mul(a.lo[..., :, None], a.hi[..., :, None], b.lo, b.hi)
        return Interval._raw(*r_sum(lo, hi, -2))
    lo, hi = r_mul(a.lo[..., :, :, None], a.hi[..., :, :, None],
                   b.lo[..., None, :, :], b.hi[..., None, :, :])
    return Interval._raw(*r_sum(lo, hi, -2))


def _point_matmul(p: np.ndarray, x: Interval, left: bool) -> Interval:
    """``p @ x`` (or ``x @ p``) for a point matrix ``p`` in midpoint-radius form.

    The exact set is inside ``p m +- |p| r``; the floating-point error of both
    products is bounded by ``gamma_k |p| (|m| + r)`` with ``k`` the inner
    dimension, which is added to the radius.
    """
    m = x.mid()
    r = x.rad()
    ap = np.abs(p)
    if left:
        c = p @ m
        rad_part = ap @ r
        mag_part = ap @ (np.abs(m) + r)
        k = p.shape[-1]
    else:
        c = m @ p
        rad_part = r @ ap
        mag_part = (np.abs(m) + r) @ ap
        k = p.shape[0] if p.ndim == 1 else p.shape[-2]
    gamma = 2.0 * (k + 2) * _U
    rad_total = up(up(rad_part * (1.0 + gamma)) + up(gamma * mag_part) + 1e-300)
    return Interval._raw(down(c - rad_total), up(c + rad_total))


def matvec(m, v) -> Interval:
    m = _coerce(m)
    v = _coerce(v)
    if m.ndim != 2 or v.ndim != 1:
        raise DimensionMismatch("matvec expects a matrix and a vector")
    return matmul(m, v)


def ivector(values, radius=0.0) -> Interval:
    """Interval vector ``values +- radius`` (outward rounded)."""
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if v.ndim != 1:
        raise DimensionMismatch("ivector expects 1-d data")
    if np.all(np.asarray(radius) == 0.0):
        return Interval(v, v)
    return Interval.from_mid_rad(v, np.broadcast_to(radius, v.shape))


def imatrix(values, radius=0.0) -> Interval:
    m = np.asarray(values, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatch("imatrix expects 2-d data")
    if np.all(np.asarray(radius) == 0.0):
        return Interval(m, m)
    return Interval.from_mid_rad(m, np.broadcast_to(radius, m.shape))


def stack(items, axis=0) -> Interval:
    items = [_coerce(x) for x in items]
    shape = np.broadcast_shapes(*(x.shape for x in items))
    lo = np.stack([np.broadcast_to(x.lo, shape) for x in items], axis=axis)
    hi = np.stack([np.broadcast_to(x.hi, shape) for x in items], axis=axis)
    return Interval._raw(lo, hi)


def eye(n: int) -> Interval:
    e = np.eye(n)
    return Interval._raw(e, e.copy())
