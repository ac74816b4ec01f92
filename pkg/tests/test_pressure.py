"""Separated sets, partition sums, and the pressure estimators."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from katoklab import engine as eng
from katoklab import pressure as pr
from katoklab.geometry import torus_dist, wrap_half

LOG_LAM = 0.9624236501192069


def bowen_dist(kmap, x, y, n):
    # brute-force d_n on float64 orbits
    ox = eng.orbit_table(eng.get_ctx(kmap), np.asarray(x)[None, :], n,
                         dtype=np.float64)[0]
    oy = eng.orbit_table(eng.get_ctx(kmap), np.asarray(y)[None, :], n,
                         dtype=np.float64)[0]
    return max(torus_dist(a, b) for a, b in zip(ox, oy))


def holder_potential(pts):
    pts = np.asarray(pts)
    return np.sqrt(np.hypot(*wrap_half(pts).T))


# -------------------------------------------------------------------- pools


def test_grid_pool_is_lexicographic():
    pool = pr.grid_pool(4)
    assert pool.points.shape == (16, 2)
    assert np.array_equal(pool.points[:5],
                          [[0, 0], [0, 0.25], [0, 0.5], [0, 0.75], [0.25, 0]])
    assert pool.source == "full-grid"


def test_grid_pool_validation():
    with pytest.raises(ValueError):
        pr.grid_pool(1)


def test_filtered_pool_source_tag():
    pool = pr.grid_pool(8, membership=lambda pts, n: pts[:, 0] < 0.5)
    assert pool.source == "collection-filtered"


def test_informative_window_defaults():
    from katoklab.katok_map import KatokMap
    from katoklab.params import preset_params
    km = KatokMap(preset_params("pressure"))
    assert pr.informative_window(km, 1 / 16, 1024) == [2, 3, 4, 5, 6]
    assert pr.informative_window(km, 1 / 128, 1024) == [2, 3]


# ----------------------------------------------------------- separated sets


def test_time0_separation_examples(pressure_map):
    # on a 64^2 pool with n = 1 the metric is the plain torus distance
    pool = pr.grid_pool(64)
    wide = pr.build_separated_set(pressure_map, pool, 1, 0.6)
    assert wide.size <= 2
    tight = pr.build_separated_set(pressure_map, pool, 1, 0.45)
    assert tight.size >= 2
    assert tight.source == "full-grid"


def test_separation_holds_pairwise_bruteforce(pressure_map):
    pool = pr.grid_pool(16)
    for n, delta in [(1, 0.3), (3, 0.25), (5, 0.2)]:
        E = pr.build_separated_set(pressure_map, pool, n, delta)
        for i in range(E.size):
            for j in range(i + 1, E.size):
                assert bowen_dist(pressure_map, E.points[i], E.points[j],
                                  n) >= delta


def test_greedy_set_is_maximal(pressure_map):
    # every rejected pool point sits within delta of a selected one
    pool = pr.grid_pool(16)
    n, delta = 3, 0.25
    E = pr.build_separated_set(pressure_map, pool, n, delta)
    sel = {tuple(p) for p in np.round(E.points, 12)}
    for p in pool.points:
        if tuple(np.round(p, 12)) in sel:
            continue
        assert any(bowen_dist(pressure_map, p, q, n) < delta
                   for q in E.points)


def test_separated_set_grows_with_n(pressure_map):
    pool = pr.grid_pool(64)
    sizes = [pr.build_separated_set(pressure_map, pool, n, 0.2).size
             for n in (1, 3, 5)]
    assert sizes[0] < sizes[1] < sizes[2]


def test_constant_weights_match_lexicographic(pressure_map):
    pool = pr.grid_pool(32)
    plain = pr.build_separated_set(pressure_map, pool, 2, 0.3)
    tied = pr.build_separated_set(pressure_map, pool, 2, 0.3,
                                  weights=np.zeros(len(pool.points)))
    assert np.array_equal(plain.points, tied.points)


def test_build_separated_set_deterministic(pressure_map):
    pool = pr.grid_pool(32)
    w = np.sin(7.0 * np.arange(len(pool.points)))
    a = pr.build_separated_set(pressure_map, pool, 3, 0.2, weights=w)
    b = pr.build_separated_set(pressure_map, pool, 3, 0.2, weights=w)
    assert np.array_equal(a.points, b.points)


def test_empty_pool_rejected(pressure_map):
    pool = pr.grid_pool(8, membership=lambda pts, n: np.zeros(len(pts), bool))
    with pytest.raises(ValueError, match="empty pool"):
        pr.build_separated_set(pressure_map, pool, 2, 0.3)


def test_build_separated_set_validation(pressure_map):
    pool = pr.grid_pool(8)
    with pytest.raises(ValueError):
        pr.build_separated_set(pressure_map, pool, 0, 0.3)
    with pytest.raises(ValueError):
        pr.build_separated_set(pressure_map, pool, 2, 0.0)


# ----------------------------------------------------------- partition sums


def test_partition_sum_zero_potential_counts(pressure_map):
    pool = pr.grid_pool(64)
    E = pr.build_separated_set(pressure_map, pool, 2, 0.2)
    rec = pr.partition_sum(pressure_map, E, None, "zero")
    assert rec.log_sum == pytest.approx(np.log(E.size), abs=1e-12)
    assert rec.set_size == E.size
    assert rec.potential_id == "zero"


def test_partition_sum_constant_shift(pressure_map):
    pool = pr.grid_pool(64)
    for n in (1, 3):
        E = pr.build_separated_set(pressure_map, pool, n, 0.2)
        rec = pr.partition_sum(pressure_map, E,
                               lambda p: np.full(len(p), 0.37))
        assert rec.log_sum == pytest.approx(np.log(E.size) + n * 0.37,
                                            abs=1e-10)


def test_partition_sum_monotone_in_atoms(pressure_map):
    pool = pr.grid_pool(64)
    E = pr.build_separated_set(pressure_map, pool, 2, 0.2)
    sub = pr.SeparatedSet(n=E.n, delta=E.delta, points=E.points[:E.size // 2],
                          source=E.source)
    full = pr.partition_sum(pressure_map, E, holder_potential)
    half = pr.partition_sum(pressure_map, sub, holder_potential)
    assert half.log_sum < full.log_sum


def test_partition_sum_bounds(pressure_map):
    # log|E| + n min S/n <= log_sum <= log|E| + n max S/n
    pool = pr.grid_pool(32)
    E = pr.build_separated_set(pressure_map, pool, 3, 0.2)
    pot = lambda p: np.cos(2 * np.pi * np.asarray(p)[:, 0])
    rec = pr.partition_sum(pressure_map, E, pot)
    S = pr._birkhoff_values(pressure_map, E.points, E.n, pot)
    assert np.log(E.size) + S.min() <= rec.log_sum <= np.log(E.size) + S.max()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40),
       st.randoms(use_true_random=False))
def test_logsumexp_permutation_invariant(vals, rng):
    v = np.array(vals)
    shuffled = v.copy()
    rng.shuffle(shuffled)
    assert pr._logsumexp_sorted(v) == pr._logsumexp_sorted(shuffled)


def test_logsumexp_matches_direct():
    v = np.array([-1.0, 0.5, 2.0])
    assert pr._logsumexp_sorted(v) == pytest.approx(np.log(np.exp(v).sum()),
                                                    rel=1e-15)


# --------------------------------------------------------------- estimation


def test_pressure_estimate_validation(pressure_map):
    pool = pr.grid_pool(64)
    with pytest.raises(ValueError, match="at least 4"):
        pr.pressure_estimate(pressure_map, None, 1 / 8, [2, 3, 4], pool)
    with pytest.raises(ValueError, match="resolution"):
        pr.pressure_estimate(pressure_map, None, 1 / 32, [2, 3, 4, 5],
                             pr.grid_pool(64))


def test_degenerate_fit_rejected(pressure_map):
    # delta so wide that every set is a single atom: flat log sums
    pool = pr.grid_pool(8)
    with pytest.raises(ValueError, match="degenerate"):
        pr.pressure_estimate(pressure_map, None, 1.0, [2, 3, 4, 5], pool,
                             companions=False)


def test_entropy_estimate_small_grid(pressure_map):
    # the window rule ends at n = 6 here; shorter windows sit on a lattice
    # resonance of A^5 and read ~10% low
    fit = pr.pressure_estimate(pressure_map, None, 1 / 4, [2, 3, 4, 5, 6],
                               pr.grid_pool(256), "zero", companions=False)
    assert fit.estimate == pytest.approx(LOG_LAM, rel=0.05)
    assert fit.r2 > 0.99
    assert [r.n for r in fit.records] == [2, 3, 4, 5, 6]
    assert all(r.delta == 1 / 4 for r in fit.records)


def test_companion_deltas_reported(pressure_map):
    fit = pr.pressure_estimate(pressure_map, None, 1 / 4, [2, 3, 4, 5, 6],
                               pr.grid_pool(256), "zero")
    assert len(fit.companions) == 2
    for d, est in fit.companions.items():
        assert d < 1 / 4
        assert est == pytest.approx(LOG_LAM, rel=0.25)


def test_shift_covariance_exact(pressure_map):
    pool = pr.grid_pool(256)
    ns = [2, 3, 4, 5]
    pot = holder_potential
    shifted = lambda p: holder_potential(p) + 0.31
    base = pr.pressure_estimate(pressure_map, pot, 1 / 8, ns, pool,
                                companions=False)
    up = pr.pressure_estimate(pressure_map, shifted, 1 / 8, ns, pool,
                              companions=False)
    for rb, ru in zip(base.records, up.records):
        assert ru.set_size == rb.set_size
        assert ru.log_sum == pytest.approx(rb.log_sum + rb.n * 0.31,
                                           abs=1e-9)
    assert up.estimate == pytest.approx(base.estimate + 0.31, abs=1e-9)


def test_pool_inclusion_orders_log_sums(pressure_map):
    # the 128^2 grid is a subset of the 256^2 grid
    small, big = pr.grid_pool(128), pr.grid_pool(256)
    for n in (2, 4):
        Es = pr.build_separated_set(pressure_map, small, n, 1 / 8)
        Eb = pr.build_separated_set(pressure_map, big, n, 1 / 8)
        ls = pr.partition_sum(pressure_map, Es, None).log_sum
        lb = pr.partition_sum(pressure_map, Eb, None).log_sum
        assert ls <= lb + 0.2


def test_restricted_pressure_below_full(product_map):
    # pool thinned to starts of good segments: strictly less pressure
    from katoklab import decomposition as dc

    def good_mask(pts, n):
        rows = eng.orbit_table(eng.get_ctx(product_map), pts, n,
                               dtype=np.float64)
        rad = np.hypot(*np.moveaxis(wrap_half(rows), 2, 0))
        word = (rad > product_map.params.chi_radius).astype(np.int64)
        i = np.arange(n + 1)
        S = np.concatenate([np.zeros((len(pts), 1), np.int64),
                            np.cumsum(word, axis=1)], axis=1)
        T = np.concatenate([np.zeros((len(pts), 1), np.int64),
                            np.cumsum(word[:, ::-1], axis=1)], axis=1)
        r = 0.3
        return (np.all(S >= r * i, axis=1) & np.all(T >= r * i, axis=1))

    full = pr.pressure_estimate(product_map, holder_potential, 1 / 8,
                                [2, 3, 4, 5], pr.grid_pool(256),
                                companions=False)
    rest = pr.pressure_estimate(product_map, holder_potential, 1 / 8,
                                [2, 3, 4, 5],
                                pr.grid_pool(256, membership=good_mask),
                                companions=False)
    assert rest.estimate < full.estimate
    for rr, rf in zip(rest.records, full.records):
        assert rr.log_sum <= rf.log_sum + 1e-9

    # sanity: the oracle mask agrees with the scalar classifier
    pts = pr.grid_pool(16).points
    m = good_mask(pts, 5)
    for k in (0, 37, 111, 255):
        seg = dc.OrbitSegment(tuple(pts[k]), 5)
        assert bool(m[k]) == dc.is_good(product_map, seg, 0.3)


# -------------------------------------------------------------------- curve


def test_curve_matches_estimate_at_t0(pressure_map):
    pool = pr.grid_pool(256)
    ns = [2, 3, 4, 5]
    curve = pr.pressure_curve(pressure_map, [0.0], pool, 1 / 8, ns)
    fit = pr.pressure_estimate(pressure_map, None, 1 / 8, ns, pool,
                               companions=False)
    assert curve.P[0] == pytest.approx(fit.estimate, abs=1e-12)
    assert curve.diagnostics[0]["set_sizes"] == [r.set_size
                                                 for r in fit.records]


def test_curve_shares_cache_across_t(pressure_map):
    pool = pr.grid_pool(128)
    ns = [2, 3, 4, 5]
    c = pr.pressure_curve(pressure_map, [-0.5, 0.0, 0.5, 1.0], pool, 1 / 4,
                          ns)
    assert len(c.P) == 4
    assert c.t_grid == (-0.5, 0.0, 0.5, 1.0)
    # pressure decreases in t (phi_geo <= 0)
    assert all(a >= b - 1e-9 for a, b in zip(c.P, c.P[1:]))
    for d in c.diagnostics:
        assert set(d) == {"t", "raw", "stderr", "r2", "set_sizes",
                          "log_sums"}
        assert max(d["raw"], 0.0) == c.P[c.t_grid.index(d["t"])]


def test_curve_clipped_and_monotone_coarse(pressure_map):
    pool = pr.grid_pool(256)
    ts = [round(-2 + 0.25 * i, 4) for i in range(17)]
    c = pr.pressure_curve(pressure_map, ts, pool, 1 / 4, [2, 3, 4, 5, 6])
    P = np.array(c.P)
    assert P.min() >= 0.0
    assert np.diff(P).max() <= 1e-9
    assert abs(c.diagnostics[ts.index(1.0)]["raw"]) < 0.05


def test_curve_is_convex(pressure_map):
    # the 1e-3 second-difference budget needs a pool of at least ~512^2;
    # coarser pools leak a few 1e-3 of concavity through the regression
    pool = pr.grid_pool(512)
    ts = [round(-8 + 0.25 * i, 4) for i in range(41)]
    c = pr.pressure_curve(pressure_map, ts, pool, 1 / 8, [2, 3, 4, 5, 6])
    P = np.array(c.P)
    d2 = P[:-2] - 2 * P[1:-1] + P[2:]
    assert d2.min() >= -1e-3
    assert np.diff(P).max() <= 0.0


def test_curve_rejects_filtered_pool(pressure_map):
    pool = pr.grid_pool(64, membership=lambda pts, n: pts[:, 0] < 0.5)
    with pytest.raises(ValueError, match="full grid"):
        pr.pressure_curve(pressure_map, [0.0], pool, 1 / 8, [2, 3, 4, 5])


# --------------------------------------------------------------------- zeta


def test_zeta_constant_potential_is_zero(pressure_map):
    z = pr.zeta_estimate(pressure_map, lambda p: np.full(len(p), 2.2), 8,
                         0.01, trials=4)
    assert z == 0.0


def test_zeta_bounded_by_sup(pressure_map):
    sup = holder_potential(np.array([[0.5, 0.5]]))[0]
    for n in (8, 16):
        z = pr.zeta_estimate(pressure_map, holder_potential, n, 0.05,
                             trials=6)
        assert 0.0 <= z <= 2 * n * sup


def test_zeta_per_step_decreases(product_map):
    scale = 100.0 * product_map.params.gamma * product_map.params.epsilon
    zs = [pr.zeta_estimate(product_map, holder_potential, n, scale, trials=8)
          / n for n in (8, 16, 32, 64)]
    assert all(a > b for a, b in zip(zs, zs[1:]))


def test_zeta_deterministic_and_validated(pressure_map):
    a = pr.zeta_estimate(pressure_map, holder_potential, 8, 0.05, trials=3,
                         seed=7)
    b = pr.zeta_estimate(pressure_map, holder_potential, 8, 0.05, trials=3,
                         seed=7)
    assert a == b
    with pytest.raises(ValueError):
        pr.zeta_estimate(pressure_map, holder_potential, 8, 0.05, trials=0)
