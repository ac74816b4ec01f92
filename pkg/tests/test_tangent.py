"""Cone invariance, line fields, geometric potentials, leaf probes."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import katoklab.engine as eng
import katoklab.tangent as tg
from katoklab.geometry import torus_dist, wrap01, wrap_half
from katoklab.katok_map import A_MATRIX
from katoklab.params import beta_slope


def torus_radius(points):
    d = wrap_half(np.atleast_2d(points))
    return np.hypot(d[:, 0], d[:, 1])


def clean_points(kmap, count, n_fwd, n_bwd, seed=0, margin=1.2):
    """Points whose orbit stays outside the flow region for n_fwd forward
    and n_bwd backward steps, so every factor of the cocycle is exactly A."""
    ctx = eng.get_ctx(kmap)
    rng = np.random.default_rng(seed)
    cut = margin * kmap.params.flow_radius
    cand = rng.random((2048, 2))
    ok = torus_radius(cand) > cut
    p = cand.copy()
    for _ in range(n_fwd):
        p = eng.apply_batch(ctx, p)
        ok &= torus_radius(p) > cut
    p = cand.copy()
    for _ in range(n_bwd):
        p = eng.apply_batch(ctx, p, direction=-1)
        ok &= torus_radius(p) > cut
    found = cand[ok]
    assert len(found) >= count, "sampler failed to find linear-orbit points"
    return found[:count]


def back_iter(kmap, p, m):
    q = np.atleast_2d(np.asarray(p, dtype=np.float64))
    for _ in range(m):
        q = kmap.apply_inv(q)
    return q[0]


def eigen_angle(kmap, column):
    v = kmap.frame[:, column]
    return math.atan2(v[1], v[0]) % math.pi


# ------------------------------------------------------------------- dG


def test_dG_identity_at_fixed_point(pressure_map):
    assert np.allclose(tg.dG(pressure_map, (0.0, 0.0)), np.eye(2),
                       rtol=0, atol=1e-12)


def test_dG_finite_differences_near_origin(pressure_map):
    # the derivative flattens to the identity at rate (h/r0)^{2 alpha},
    # the decay rate of psi; central differences of the map confirm it
    p = pressure_map.params

    def fd_deviation(h):
        fd = np.empty((2, 2))
        for j, e in enumerate(np.eye(2)):
            fd[:, j] = wrap_half(pressure_map.apply(h * e) -
                                 pressure_map.apply(-h * e)) / (2 * h)
        return np.abs(fd - np.eye(2)).max()

    devs = [fd_deviation(h) for h in (1e-6, 1e-9, 1e-12)]
    for h, dev in zip((1e-6, 1e-9, 1e-12), devs):
        assert dev < 2.0 * p.log_lam * (h / p.r0) ** (2 * p.alpha)
    assert devs[2] < devs[1] < devs[0]
    assert devs[2] < 0.05


def test_dG_equals_A_outside_flow_region(pressure_map):
    rng = np.random.default_rng(5)
    pts = rng.random((200, 2))
    pts = pts[torus_radius(pts) > pressure_map.params.flow_radius]
    J = pressure_map.jac(pts)
    assert np.array_equal(J, np.broadcast_to(A_MATRIX, J.shape))


def test_dG_transition_annulus_partition(pressure_map):
    # between r0 and lam*r0 the unit arc decides: inward-heading points are
    # genuinely slowed, the rest get A bitwise; beyond lam*r0 the arc cannot
    # reach the disc at all (its radial minimum is at least radius/lam)
    p = pressure_map.params
    rng = np.random.default_rng(6)
    rho = p.r0 + (p.lam * p.r0 - p.r0) * rng.random(300)
    ang = 2 * math.pi * rng.random(300)
    pts = wrap01(np.column_stack([rho * np.cos(ang), rho * np.sin(ang)]))
    J = pressure_map.jac(pts)
    exact = np.all(J == A_MATRIX, axis=(1, 2))
    assert 0 < exact.sum() < len(pts)
    assert np.abs(J - A_MATRIX).max() < 1.5

    outer = wrap01(np.column_stack([1.001 * p.lam * p.r0 * np.cos(ang),
                                    1.001 * p.lam * p.r0 * np.sin(ang)]))
    assert np.array_equal(pressure_map.jac(outer),
                          np.broadcast_to(A_MATRIX, (300, 2, 2)))


def test_dG_determinant_matches_kappa_ratio(pressure_map):
    p = pressure_map.params
    rng = np.random.default_rng(7)
    rho = p.r1 * np.sqrt(rng.random(1000))
    ang = 2 * math.pi * rng.random(1000)
    pts = wrap01(np.column_stack([rho * np.cos(ang), rho * np.sin(ang)]))
    det = np.linalg.det(pressure_map.jac(pts))
    ratio = pressure_map.kappa(pts) / pressure_map.kappa(pressure_map.apply(pts))
    assert np.abs(det / ratio - 1.0).max() < 1e-5


def test_chain_rule_product_of_one_step_matrices(pressure_map, ctx):
    # engine joint integration vs the product of per-step python matrices
    tol = eng.STRICT_TOL
    starts = [np.array([0.3141, 0.5692]),
              back_iter(pressure_map, np.array([0.004, -0.0025]), 25)]
    for x0 in starts:
        n = 50
        V_eng = np.eye(2)
        x, y = x0
        prod = np.eye(2)
        p = x0.copy()
        for _ in range(n):
            gx1, gy1, a11, a21, ok1 = eng._push_point(
                x, y, V_eng[0, 0], V_eng[1, 0], 1, ctx.par, ctx.Cm, tol)
            _, _, a12, a22, ok2 = eng._push_point(
                x, y, V_eng[0, 1], V_eng[1, 1], 1, ctx.par, ctx.Cm, tol)
            assert ok1 and ok2
            x, y = gx1, gy1
            V_eng = np.array([[a11, a12], [a21, a22]])
            prod = pressure_map.jac(p) @ prod
            p = pressure_map.apply(p)
        scale = np.abs(prod).max()
        assert np.abs(V_eng - prod).max() / scale < 1e-8


# ------------------------------------------------------------------ cones


def test_beta_of_alpha_is_the_closed_form():
    assert tg.beta_of_alpha is beta_slope
    assert abs(tg.beta_of_alpha(0.01) - 0.009804) < 1e-6


def test_cone_types_validate():
    with pytest.raises(ValueError):
        tg.Cone(slope=0.1, orientation="sideways")
    with pytest.raises(ValueError):
        tg.Cone(slope=0.0)
    with pytest.raises(ValueError):
        tg.cone_check(None, kind="diagonal")


@given(xi1=st.floats(-1e6, 1e6), xi2=st.floats(-1e6, 1e6),
       scale=st.floats(1e-6, 1e6))
@settings(max_examples=60, deadline=None)
def test_cone_membership_scale_invariant(xi1, xi2, scale):
    cone = tg.Cone(slope=0.3)
    assert cone.contains(xi1, xi2) == cone.contains(scale * xi1, scale * xi2)


def test_cone_axis_fixed_outside_disc(pressure_map):
    # the expanding eigendirection maps to the cone axis exactly under A
    E = pressure_map.frame
    x = np.array([0.43, 0.11])
    assert torus_radius(x)[0] > pressure_map.params.flow_radius
    img = E.T @ tg.dG(pressure_map, x) @ E @ np.array([1.0, 0.0])
    assert abs(img[1]) < 1e-15 * pressure_map.params.lam
    assert img[0] == pytest.approx(pressure_map.params.lam, rel=1e-14)


def test_cone_check_no_violations(pressure_map):
    rep = tg.cone_check(pressure_map, samples=10_000, seed=11)
    assert rep.passed and rep.violations == 0
    assert rep.worst_margin > 0.0
    assert rep.slope == pressure_map.params.beta


def test_cone_check_stable_cone_under_inverse(pressure_map):
    rep = tg.cone_check(pressure_map, samples=4000, kind="stable", seed=12)
    assert rep.violations == 0


def test_cone_check_halved_slope_has_power(pressure_map):
    beta = pressure_map.params.beta
    rep = tg.cone_check(pressure_map, samples=10_000, slope=beta / 2, seed=11)
    assert rep.violations > 0
    assert rep.worst_margin < 0.0


# ------------------------------------------------------------ line fields


def test_unstable_direction_linear_backward_orbit_is_eigen(pressure_map):
    x = clean_points(pressure_map, 3, 1, 500, seed=21)[0]
    lf = tg.unstable_direction(pressure_map, x)
    assert lf.kind == "unstable"
    assert lf.converged
    assert abs(lf.angle - eigen_angle(pressure_map, 0)) < 1e-13


def test_stable_direction_linear_forward_orbit_is_eigen(pressure_map):
    x = clean_points(pressure_map, 3, 500, 1, seed=22)[0]
    lf = tg.stable_direction(pressure_map, x)
    assert lf.kind == "stable"
    assert abs(lf.angle - eigen_angle(pressure_map, 1)) < 1e-13


def test_directions_at_origin_follow_convention(pressure_map):
    # dG(0) = Id leaves every direction neutral; the eigenframe is the pin
    assert tg.unstable_direction(pressure_map, (0.0, 0.0)).angle == \
        pytest.approx(eigen_angle(pressure_map, 0), abs=1e-15)
    assert tg.stable_direction(pressure_map, (0.0, 0.0)).angle == \
        pytest.approx(eigen_angle(pressure_map, 1), abs=1e-15)


def test_unstable_directions_lie_in_cone_bulk(pressure_map):
    rng = np.random.default_rng(23)
    P = rng.random((10_000, 2))
    V = tg.direction_field(pressure_map, P, "unstable", burn=200)
    xi = V @ pressure_map.frame            # rows give (xi1, xi2)
    beta = pressure_map.params.beta
    assert np.all(np.abs(xi[:, 1]) <= beta * np.abs(xi[:, 0]) * (1 + 1e-8))
    S = tg.direction_field(pressure_map, P[:2000], "stable", burn=200)
    xs = S @ pressure_map.frame
    assert np.all(np.abs(xs[:, 0]) <= beta * np.abs(xs[:, 1]) * (1 + 1e-8))


def test_direction_convergence_reporting(pressure_map):
    lf = tg.unstable_direction(pressure_map, (0.61, 0.24), burn_in=5)
    assert lf.converged
    assert 5 < lf.burn_in <= 3200
    with pytest.raises(ValueError):
        tg.unstable_direction(pressure_map, (0.61, 0.24), burn_in=0)
    v = lf.vector
    assert np.hypot(v[0], v[1]) == pytest.approx(1.0, abs=1e-12)


# ----------------------------------------------------- geometric potential


def test_geo_potential_zero_at_origin(pressure_map):
    assert abs(tg.geo_potential_G(pressure_map, (0.0, 0.0))) < 1e-12


def test_geo_potential_linear_context(pressure_map):
    x = clean_points(pressure_map, 1, 1, 500, seed=24)[0]
    val = tg.geo_potential_G(pressure_map, x)
    assert val == pytest.approx(-pressure_map.params.log_lam, abs=1e-12)


def test_geo_potential_nonpositive_everywhere_sampled(pressure_map):
    rng = np.random.default_rng(25)
    P = tg._cone_sample_points(pressure_map, 3000, rng)
    V = tg.direction_field(pressure_map, P, "unstable", burn=200)
    growth = np.einsum("nab,nb->na", pressure_map.jac(P), V)
    phi = -np.log(np.hypot(growth[:, 0], growth[:, 1]))
    assert phi.max() <= 1e-9


def test_geo_potential_birkhoff_mean_is_minus_exponent(pressure_map, ctx):
    sums, _ = eng.lyapunov_sums(ctx, np.array([[0.137, 0.642]]), 1_000_000)
    birkhoff = -sums[0] / 1_000_000
    assert birkhoff < 0
    assert birkhoff == pytest.approx(-pressure_map.params.log_lam, rel=1e-3)


# -------------------------------------------------------------- tilde sums


def test_tilde_sum_base_cases(pressure_map):
    assert tg.geo_potential_tilde_sum(pressure_map, (0.3, 0.7), 0) == 0.0
    with pytest.raises(ValueError):
        tg.geo_potential_tilde_sum(pressure_map, (0.3, 0.7), -1)


def test_tilde_sum_equals_plain_sum_outside_disc(pressure_map, ctx):
    # boundary terms vanish when both endpoints stay off the disc
    x = np.array([0.358, 0.716])
    n = 8
    z = pressure_map.phi_inv(x)
    T = eng.orbit_table(ctx, z[None, :], n + 1, dtype=np.float64)[0]
    assert torus_radius(T[[0, n]]).min() > pressure_map.params.r0
    plain = sum(tg.geo_potential_G(pressure_map, T[i]) for i in range(n))
    tilde = tg.geo_potential_tilde_sum(pressure_map, x, n)
    assert tilde == pytest.approx(plain, abs=1e-9)


def test_tilde_sum_telescopes(pressure_map):
    x = np.array([0.0521, 0.9173])
    n = 6
    y = np.asarray(x, dtype=np.float64)
    for _ in range(n - 1):
        y = pressure_map.apply_tilde(y)
    s_n = tg.geo_potential_tilde_sum(pressure_map, x, n)
    s_prev = tg.geo_potential_tilde_sum(pressure_map, x, n - 1)
    s_last = tg.geo_potential_tilde_sum(pressure_map, y, 1)
    assert s_n == pytest.approx(s_prev + s_last, abs=1e-12)


def test_tilde_sum_against_finite_difference_expansion(pressure_map):
    # expand a tiny unstable displacement under n conjugated steps
    for w, m in [(np.array([0.271, 0.654]), 0),
                 (np.array([0.0031, -0.0022]), 3)]:
        z = back_iter(pressure_map, w, m) if m else w
        x = pressure_map.phi(z)
        n = 6
        u0 = tg._direction_vector(pressure_map, z, "unstable", 200)[0]
        du = pressure_map.dphi(z) @ u0
        du /= np.hypot(du[0], du[1])
        h = 1e-9
        a, b = x + 0.5 * h * du, x - 0.5 * h * du
        for _ in range(n):
            a = pressure_map.apply_tilde(a)
            b = pressure_map.apply_tilde(b)
        fd = math.log(torus_dist(a, b) / h)
        s_n = tg.geo_potential_tilde_sum(pressure_map, x, n)
        assert fd == pytest.approx(-s_n, abs=1e-4)


# ---------------------------------------------------------------- lyapunov


def test_lyapunov_validation_and_origin(pressure_map):
    with pytest.raises(ValueError):
        tg.lyapunov(pressure_map, (0.1, 0.1), 0)
    assert abs(tg.lyapunov(pressure_map, (0.0, 0.0), 12)) < 1e-12


def test_lyapunov_linear_segment_exact(pressure_map):
    x = clean_points(pressure_map, 1, 60, 500, seed=26)[0]
    val = tg.lyapunov(pressure_map, x, 60)
    assert val == pytest.approx(pressure_map.params.log_lam, abs=1e-9)


def test_lyapunov_monte_carlo_concentrates(pressure_map, ctx):
    rng = np.random.default_rng(27)
    P = rng.random((100, 2))
    V0 = tg.direction_field(pressure_map, P, "unstable", burn=200)
    sums, _ = eng.lyapunov_sums(ctx, P, 100_000, V0=V0)
    chi = sums / 100_000
    assert np.all(chi >= -1e-9)
    assert chi.std() / chi.mean() < 0.05
    assert chi.mean() == pytest.approx(pressure_map.params.log_lam, rel=0.01)


def test_lyapunov_forward_backward_symmetry(pressure_map, ctx):
    rng = np.random.default_rng(28)
    n = 10_000
    for x in rng.random((3, 2)):
        fwd = tg.lyapunov(pressure_map, x, n)
        end = eng.orbit_table(ctx, x[None, :], n + 1,
                              dtype=np.float64)[0, n]
        bwd = tg.lyapunov(pressure_map, end, n, direction=-1)
        assert abs(fwd - bwd) / fwd < 0.02


# ---------------------------------------------------------------- grassmann


def test_grassmann_same_point_is_zero(pressure_map):
    rep = tg.grassmann_decay_probe(pressure_map, (0.21, 0.34), (0.21, 0.34), 24)
    assert rep.distances.max() == 0.0
    assert rep.theta == 0.0 and rep.holds


def test_grassmann_linear_pair_below_noise(pressure_map):
    pts = clean_points(pressure_map, 2, 40, 500, seed=29)
    x, y = pts[0], pts[0] + np.array([1e-7, 1e-7])
    rep = tg.grassmann_decay_probe(pressure_map, x, y, 30)
    assert rep.distances.max() < 1e-8
    assert rep.holds


def test_grassmann_bowen_pair_decays(pressure_map):
    # canonical Bowen pair: split delta at a disc passage, run both ends out
    rng = np.random.default_rng(30)
    m = 15
    w = np.array([0.004, 0.003])
    wp = w + 0.01 * pressure_map.params.lam ** -m * rng.standard_normal(2)
    x, y = back_iter(pressure_map, w, m), back_iter(pressure_map, wp, m)
    rep = tg.grassmann_decay_probe(pressure_map, x, y, 2 * m)
    assert rep.holds
    assert 0.0 < rep.theta < 0.8
    assert rep.distances.max() > 1e-10       # probe saw real structure
    assert len(rep.rows) == 2 * m and rep.rows[0][0] == 0


def test_grassmann_good_segment_n200(pressure_map):
    # stable-leaf companion at a point whose backward history felt the disc
    p = np.array([0.0035, -0.002])[None, :]
    for _ in range(6):
        p = pressure_map.apply(p)
    x = p[0]
    y = x + 1e-7 * tg.stable_direction(pressure_map, x).vector
    rep = tg.grassmann_decay_probe(pressure_map, x, y, 200)
    assert rep.holds and rep.theta < 1.0
    assert rep.distances.max() > 1e-10


def test_grassmann_validation(pressure_map):
    with pytest.raises(ValueError):
        tg.grassmann_decay_probe(pressure_map, (0.1, 0.2), (0.1, 0.2), 1)


# ------------------------------------------------------------ leaf tracing


def test_trace_leaf_validation(pressure_map):
    with pytest.raises(ValueError):
        tg.trace_leaf(pressure_map, (0.2, 0.3), "diagonal", 0.01)
    with pytest.raises(ValueError):
        tg.trace_leaf(pressure_map, (0.2, 0.3), "stable", 0.0)
    with pytest.raises(ValueError):
        tg.trace_leaf(pressure_map, (0.2, 0.3), "stable", 0.5)


def test_trace_leaf_geometry(pressure_map):
    x = np.array([0.73, 0.29])
    arclength = 0.02
    leaf = tg.trace_leaf(pressure_map, x, "stable", arclength)
    mid = (len(leaf) - 1) // 2
    assert np.array_equal(leaf[mid], x)
    assert len(leaf) <= 401
    steps = wrap_half(np.diff(leaf, axis=0))
    lens = np.hypot(steps[:, 0], steps[:, 1])
    assert np.allclose(lens, pressure_map.params.epsilon / 50, rtol=1e-6)
    # in the linear region the stable leaf is the eigenline through x
    e_s = pressure_map.frame[:, 1]
    rel = wrap_half(leaf - x)
    off_axis = rel @ pressure_map.frame[:, 0]
    assert np.abs(off_axis).max() < 1e-9 * (1 + arclength / 1e-2)


def test_trace_leaf_node_cap(pressure_map):
    leaf = tg.trace_leaf(pressure_map, (0.1, 0.8), "unstable", 0.19)
    assert len(leaf) == 401


# ---------------------------------------------------------------- brackets


def test_bracket_of_identical_points(pressure_map):
    z = tg.bracket(pressure_map, (0.4, 0.1), (0.4, 0.1))
    assert (z.x, z.y) == (0.4, 0.1)


def test_bracket_linear_region_closed_form(pressure_map):
    # oracle: W^s(x) and W^u(y) are eigenlines; intersection solves a 2x2
    # system, i.e. takes s1 from x and s2 from y in the eigenframe
    E = pressure_map.frame
    rng = np.random.default_rng(31)
    for _ in range(6):
        x = 0.2 + 0.6 * rng.random(2)
        y = x + 0.01 * (rng.random(2) - 0.5)
        sx, sy = x @ E, y @ E
        oracle = wrap01(np.array([sx[0], sy[1]]) @ E.T)
        z = tg.bracket(pressure_map, x, y)
        assert torus_dist(np.array([z.x, z.y]), oracle) < 1e-9


def test_bracket_scale_bound(pressure_map):
    p = pressure_map.params
    rng = np.random.default_rng(32)
    for _ in range(6):
        x = rng.random(2)
        y = wrap01(x + 0.012 * (rng.random(2) - 0.5))
        d = torus_dist(x, y)
        _, dist_s, dist_u = tg.bracket_report(pressure_map, x, y)
        assert max(dist_s, dist_u) <= p.gamma * d * 1.05


def test_bracket_dynamical_compatibility(pressure_map):
    rng = np.random.default_rng(33)
    for _ in range(4):
        x = rng.random(2)
        y = wrap01(x + 0.008 * (rng.random(2) - 0.5))
        z = tg.bracket(pressure_map, x, y)
        gz = pressure_map.apply(np.array([z.x, z.y]))
        zb = tg.bracket(pressure_map, pressure_map.apply(np.asarray(x)),
                        pressure_map.apply(np.asarray(y)))
        assert torus_dist(gz, np.array([zb.x, zb.y])) < 1e-6


def test_bracket_error_when_out_of_scale(pressure_map):
    with pytest.raises(tg.BracketError):
        tg.bracket(pressure_map, (0.1, 0.1), (0.6, 0.65))
