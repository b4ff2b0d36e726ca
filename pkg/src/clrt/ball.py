"""Ellipsoidal enclosures ``B_M([x], r) = {p : ||A (p - c)||_2 <= r for some c in [x]}``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite
from .interval import Interval, down, up
from .linalg import Metric, weighted_norm

__all__ = ["Ball"]


@dataclass(frozen=True, eq=False)
class Ball:
    """Metric ball with an interval centre.

    Two membership predicates are provided because the centre is only known up
    to the box ``center_box``:

    * :meth:`possibly_contains` is true when ``||p - c||_M <= radius`` for SOME
      centre ``c`` in the box; it is the right test for checking that a point
      known to be reachable is covered by a claimed enclosure.
    * :meth:`certainly_contains` is true when the inequality holds for ALL
      centres; its negation :meth:`certainly_excludes` (false for all centres)
      is what may be used to discard points.
    """

    center_box: Interval
    metric: Metric
    radius: float

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"ball radius must be positive and finite, got {self.radius!r}")
        if not self.metric.certified_pd:
            raise NotPositiveDefinite("ball metric is not certified")
        if self.center_box.shape != (self.metric.dim,):
            raise DimensionMismatch("centre and metric dimensions differ")

    @property
    def dim(self) -> int:
        return self.metric.dim

    @property
    def center(self) -> np.ndarray:
        return self.center_box.mid()

    def with_radius(self, radius: float) -> "Ball":
        return Ball(self.center_box, self.metric, float(radius))

    def distance(self, p) -> Interval:
        """Enclosure of ``||p - c||_M`` over centres ``c``; ``p`` may be a batch ``(..., n)``."""
        if isinstance(p, Interval):
            diff = p - self.center_box
        else:
            p = np.asarray(p, dtype=float)
            diff = Interval._raw(p, p) - self.center_box
        return weighted_norm(diff, self.metric)

    def possibly_contains(self, p, tol: float = 0.0) -> np.ndarray:
        return self.distance(p).lo <= self.radius + tol

    def certainly_contains(self, p, tol: float = 0.0) -> np.ndarray:
        return self.distance(p).hi <= self.radius + tol

    def certainly_excludes(self, p) -> np.ndarray:
        return self.distance(p).lo > self.radius

    def hull_box(self) -> Interval:
        """Axis-aligned box enclosing the ball: centre box plus the ellipsoid half-widths."""
        hw = self.metric.box_halfwidths(self.radius)
        return Interval._raw(down(self.center_box.lo - hw), up(self.center_box.hi + hw))

    def sample(self, rng: np.random.Generator, count: int, surface: bool = False) -> np.ndarray:
        """Points of the ball around its midpoint centre (uniform in volume, or on the surface)."""
        n = self.dim
        u = rng.standard_normal((count, n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        if not surface:
            u *= rng.random((count, 1)) ** (1.0 / n)
        return self.center + (self.radius * u) @ self.metric.A_inv.T
