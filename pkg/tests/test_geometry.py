import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from katoklab.geometry import (
    CHART_RADIUS,
    ChartOverflowError,
    EigenVec2,
    TorusPoint,
    bowen_dist,
    bowen_dist_batch,
    eigenframe,
    from_chart,
    from_eigen,
    to_chart,
    to_eigen,
    torus_dist,
    torus_dist_batch,
    wrap01,
    wrap_half,
)

A = np.array([[2.0, 1.0], [1.0, 1.0]])


class LinearCat:
    """Pure automorphism, the oracle dynamics for metric tests."""

    def apply(self, p):
        return (np.asarray(p, dtype=np.float64) @ A.T) % 1.0


point = st.tuples(
    st.floats(0.0, 1.0, exclude_max=True),
    st.floats(0.0, 1.0, exclude_max=True),
)


def test_wrap_ranges():
    x = np.linspace(-3.0, 3.0, 1001)
    w = wrap01(x)
    assert np.all((w >= 0.0) & (w < 1.0))
    h = wrap_half(x)
    assert np.all((h >= -0.5) & (h < 0.5))
    assert wrap_half(0.75) == -0.25


def test_torus_dist_known_values():
    assert torus_dist((0.0, 0.0), (0.0, 0.0)) == 0.0
    assert abs(torus_dist((0.9, 0.0), (0.1, 0.0)) - 0.2) < 1e-15
    assert abs(torus_dist((0.0, 0.0), (0.5, 0.5)) - math.sqrt(2.0) / 2.0) < 1e-15


def test_torus_dist_bounded_by_corner():
    rng = np.random.default_rng(3)
    p = rng.random((4000, 2))
    q = rng.random((4000, 2))
    d = torus_dist_batch(p, q)
    assert np.all(d <= math.sqrt(2.0) / 2.0 + 1e-15)


@settings(deadline=None)
@given(point, point)
def test_torus_dist_symmetry(p, q):
    assert abs(torus_dist(p, q) - torus_dist(q, p)) < 1e-12


@settings(deadline=None)
@given(point, point, point)
def test_torus_dist_triangle(p, q, r):
    assert torus_dist(p, r) <= torus_dist(p, q) + torus_dist(q, r) + 1e-12


def test_torus_dist_accepts_typed_points():
    a = TorusPoint(0.9, 0.0)
    b = TorusPoint(1.1, 0.0)   # reduces to 0.1
    assert b.x == pytest.approx(0.1)
    assert torus_dist(a, b) == pytest.approx(0.2, abs=1e-15)


def test_eigenframe_orthonormal_and_diagonalizing():
    E, lam = eigenframe()
    assert abs(lam - (3.0 + math.sqrt(5.0)) / 2.0) < 1e-15
    assert np.max(np.abs(E.T @ E - np.eye(2))) < 1e-14
    assert abs(E[:, 0] @ E[:, 1]) < 1e-14
    assert abs(np.linalg.det(E) - 1.0) < 1e-14
    D = E.T @ A @ E
    assert abs(D[0, 0] - lam) < 1e-12
    assert abs(D[1, 1] - 1.0 / lam) < 1e-12
    assert abs(D[0, 1]) < 1e-12 and abs(D[1, 0]) < 1e-12


def test_unstable_eigvec_direction():
    # A (1, t) = lam (1, t) for t = (sqrt 5 - 1)/2
    E, lam = eigenframe()
    t = (math.sqrt(5.0) - 1.0) / 2.0
    v = np.array([1.0, t]) / math.hypot(1.0, t)
    assert np.max(np.abs(E[:, 0] - v)) < 1e-15
    assert np.max(np.abs(A @ v - lam * v)) < 1e-12


def test_unstable_direction_maps_to_s1_axis():
    E, _ = eigenframe()
    s = to_eigen(E[:, 0])
    assert abs(s[0] - 1.0) < 1e-14
    assert abs(s[1]) < 1e-14


def test_eigen_roundtrip_many():
    rng = np.random.default_rng(5)
    d = (rng.random((10_000, 2)) - 0.5) * 2 * CHART_RADIUS / math.sqrt(2.0)
    back = from_eigen(to_eigen(d))
    assert np.max(np.abs(back - d)) < 1e-12
    # the rotation is an isometry
    assert np.max(np.abs(np.linalg.norm(to_eigen(d), axis=1)
                         - np.linalg.norm(d, axis=1))) < 1e-12


def test_eigen_chart_centered_api():
    center = TorusPoint(0.3, 0.7)
    assert to_eigen(center, center).as_array() == pytest.approx((0.0, 0.0))
    x = TorusPoint(0.32, 0.69)
    s = to_eigen(x, center)
    assert isinstance(s, EigenVec2)
    back = from_eigen(s, center)
    assert torus_dist(back, x) < 1e-12


def test_chart_roundtrip_and_overflow():
    center = np.array([0.95, 0.05])
    rng = np.random.default_rng(9)
    d = (rng.random((500, 2)) - 0.5) * 0.3
    pts = from_chart(center, d)
    assert np.max(np.abs(to_chart(center, pts) - d)) < 1e-12
    with pytest.raises(ChartOverflowError):
        to_chart((0.0, 0.0), (0.4, 0.4))


def test_bowen_n1_is_torus_dist():
    cat = LinearCat()
    rng = np.random.default_rng(11)
    for _ in range(50):
        p, q = rng.random(2), rng.random(2)
        assert bowen_dist(cat, p, q, 1) == pytest.approx(torus_dist(p, q))


def test_bowen_monotone_in_n():
    cat = LinearCat()
    rng = np.random.default_rng(13)
    p = rng.random((1000, 2))
    q = rng.random((1000, 2))
    prev = bowen_dist_batch(cat, p, q, 1)
    for n in (2, 3, 5, 8):
        cur = bowen_dist_batch(cat, p, q, n)
        assert np.all(cur >= prev - 1e-15)
        prev = cur


def test_bowen_linear_unstable_stretch():
    # displacement h along e_u doubles the lead term: d_2 = lam * |h|
    cat = LinearCat()
    E, lam = eigenframe()
    h = 1e-4
    p = np.zeros(2)
    q = wrap01(h * E[:, 0])
    assert bowen_dist(cat, p, q, 2) == pytest.approx(lam * h, rel=1e-12)
    assert bowen_dist(cat, p, q, 3) == pytest.approx(lam ** 2 * h, rel=1e-12)


def test_bowen_triangle():
    cat = LinearCat()
    rng = np.random.default_rng(17)
    for _ in range(200):
        p, q, r = rng.random(2), rng.random(2), rng.random(2)
        assert bowen_dist(cat, p, r, 4) <= (
            bowen_dist(cat, p, q, 4) + bowen_dist(cat, q, r, 4) + 1e-12)


def test_bowen_rejects_bad_n():
    with pytest.raises(ValueError):
        bowen_dist(LinearCat(), (0.0, 0.0), (0.1, 0.1), 0)
