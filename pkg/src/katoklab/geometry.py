"""Torus geometry: wrapping, metric, charts, and the hyperbolic eigenframe.

Points live on T^2 = R^2 / Z^2, always stored as coordinates in [0, 1).
Batch APIs take (N, 2) float64 arrays and are the ones used in hot loops;
the scalar helpers exist for tests and small probes.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

__all__ = [
    "CHART_RADIUS",
    "ChartOverflowError",
    "TorusPoint",
    "EigenVec2",
    "wrap01",
    "wrap_half",
    "torus_dist",
    "torus_dist_batch",
    "to_chart",
    "from_chart",
    "eigenframe",
    "to_eigen",
    "from_eigen",
    "bowen_dist",
    "bowen_dist_batch",
]

# Largest displacement magnitude a local chart is allowed to represent.
# Stay well below 0.5 so wrap_half is single-valued on everything we touch.
CHART_RADIUS = 0.25


class ChartOverflowError(ValueError):
    """A displacement left the valid domain of a local chart."""


def wrap01(x):
    """Reduce coordinates mod 1 into [0, 1)."""
    return np.asarray(x, dtype=np.float64) % 1.0


def wrap_half(d):
    """Reduce displacements mod 1 into [-0.5, 0.5)."""
    d = np.asarray(d, dtype=np.float64)
    return d - np.floor(d + 0.5)


@dataclasses.dataclass(frozen=True)
class TorusPoint:
    """A single point of T^2 with coordinates reduced mod 1."""

    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x) % 1.0)
        object.__setattr__(self, "y", float(self.y) % 1.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "TorusPoint":
        a = np.asarray(a, dtype=np.float64)
        return TorusPoint(float(a[0]), float(a[1]))


@dataclasses.dataclass(frozen=True)
class EigenVec2:
    """Chart coordinates along the expanding (s1) and contracting (s2) axes."""

    s1: float
    s2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "EigenVec2":
        a = np.asarray(a, dtype=np.float64)
        return EigenVec2(float(a[0]), float(a[1]))


def _coords(p) -> np.ndarray:
    if isinstance(p, (TorusPoint, EigenVec2)):
        return p.as_array()
    return np.asarray(p, dtype=np.float64)


def torus_dist(p, q) -> float:
    """Flat-metric distance between two points (scalar convenience)."""
    d = wrap_half(_coords(q) - _coords(p))
    return float(np.hypot(d[0], d[1]))


def torus_dist_batch(p, q) -> np.ndarray:
    """Row-wise flat-metric distance between (N, 2) arrays."""
    d = wrap_half(np.asarray(q, dtype=np.float64) - np.asarray(p, dtype=np.float64))
    return np.hypot(d[..., 0], d[..., 1])


def to_chart(center, points) -> np.ndarray:
    """Displacements of `points` from `center`, unwrapped into the local chart.

    Raises ChartOverflowError if any displacement magnitude exceeds
    CHART_RADIUS: at that range the mod-1 unwrap is no longer trustworthy
    for the calculus we do in charts.
    """
    d = wrap_half(_coords(points) - _coords(center))
    r = np.hypot(d[..., 0], d[..., 1])
    if np.any(r > CHART_RADIUS):
        raise ChartOverflowError(
            f"displacement {float(np.max(r)):.6g} exceeds chart radius {CHART_RADIUS}"
        )
    return d


def from_chart(center, disp) -> np.ndarray:
    """Inverse of to_chart: wrap center + displacement back to [0, 1)^2."""
    return wrap01(_coords(center) + np.asarray(disp, dtype=np.float64))


def eigenframe():
    """Orthonormal eigenframe (E, lam) of the automorphism matrix [[2, 1], [1, 1]].

    Columns of E are the unstable and stable unit directions; E has
    determinant +1 and E^T A E = diag(lam, 1/lam) with
    lam = (3 + sqrt 5)/2.
    """
    t = (math.sqrt(5.0) - 1.0) / 2.0
    n = math.sqrt(1.0 + t * t)
    e_u = np.array([1.0, t]) / n
    e_s = np.array([-t, 1.0]) / n
    E = np.column_stack([e_u, e_s])
    lam = (3.0 + math.sqrt(5.0)) / 2.0
    return E, lam


_E, _LAM = eigenframe()


def to_eigen(x, center=None):
    """Eigenframe coordinates (s1 unstable, s2 stable).

    Without a center, `x` is a raw chart displacement (any shape ending in 2)
    and the result is an array: the fast path the dynamics uses.  With a
    center, `x` is a point, the displacement passes through to_chart (with
    its overflow check), and a TorusPoint input yields an EigenVec2.
    """
    if center is None:
        return np.asarray(x, dtype=np.float64) @ _E
    s = to_chart(center, x) @ _E
    if isinstance(x, TorusPoint):
        return EigenVec2.from_array(s)
    return s


def from_eigen(s, center=None):
    """Inverse of to_eigen; with a center, wraps back onto the torus."""
    d = _coords(s) @ _E.T
    if center is None:
        return d
    p = from_chart(center, d)
    if isinstance(s, EigenVec2):
        return TorusPoint.from_array(p)
    return p


def bowen_dist(map_handle, p, q, n: int) -> float:
    """d_n(p, q) = max_{0 <= i < n} d(F^i p, F^i q) for a forward-iterable map."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = _coords(p).reshape(1, 2).copy()
    q = _coords(q).reshape(1, 2).copy()
    best = float(torus_dist_batch(p, q)[0])
    for _ in range(n - 1):
        p = map_handle.apply(p)
        q = map_handle.apply(q)
        best = max(best, float(torus_dist_batch(p, q)[0]))
    return best


def bowen_dist_batch(map_handle, p, q, n: int) -> np.ndarray:
    """Row-wise Bowen distance for (N, 2) arrays; iterates both batches together."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = np.asarray(p, dtype=np.float64).copy()
    q = np.asarray(q, dtype=np.float64).copy()
    best = torus_dist_batch(p, q)
    for _ in range(n - 1):
        p = map_handle.apply(p)
        q = map_handle.apply(q)
        np.maximum(best, torus_dist_batch(p, q), out=best)
    return best
