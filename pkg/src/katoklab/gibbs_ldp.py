"""Empirical equilibrium proxies, Gibbs-ratio diagnostics, rate functions.

The weak* limit of the mu_n sequence is out of numerical reach, so the
diagnostics run against finite proxies: either a genuine mu_n built from
a weighted separated set, or a single-orbit empirical measure (the
|E| = 1 degenerate case) when the atom budget matters more than the
measure class.  Ball masses at large n cannot be counted directly (the
mass of a length-64 Bowen ball is ~e^-60), so a second backend estimates
them geometrically: a local atom density at the coarse scale times a
Bowen-ball area computed in transported bracket coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as eng
from .decomposition import OrbitSegment, _fields_along
from .geometry import wrap01, wrap_half
from .katok_map import KatokMap
from .pressure import (GridPool, _birkhoff_values, _greedy_select,
                       _logsumexp_sorted, _verify_separated, grid_pool,
                       point_pool, pressure_curve, pressure_estimate)

__all__ = [
    "DeviationDecay",
    "RateFunction",
    "WeightedOrbitMeasure",
    "build_mu_n",
    "build_nu_n",
    "empirical_deviation_decay",
    "gibbs_diagnostics",
    "gibbs_ratio",
    "gibbs_ratio_detail",
    "orbit_proxy",
    "rate_function",
]

_KINDS = ("nu_n", "mu_n")


# ----------------------------------------------------------------- measures


@dataclass(frozen=True)
class WeightedOrbitMeasure:
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    n: int
    kind: str
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")
        if (self.weights < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")

    @property
    def atom_count(self) -> int:
        return len(self.points)


def _default_nu_pool(epsilon: float) -> GridPool:
    res = 64
    while res < 4.0 / (5.0 * epsilon) and res < 2048:
        res *= 2
    return grid_pool(res)


def build_nu_n(kmap: KatokMap, potential, n: int, epsilon: float,
               pool: GridPool | None = None) -> WeightedOrbitMeasure:
    """nu_n: atoms on a greedy maximal (n, 5 epsilon)-separated set, with
    weights exp(S_n phi - log Lambda_n) straight off the partition-sum
    log-sum-exp path (no renormalization on top)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    delta = 5.0 * epsilon
    if pool is None:
        pool = _default_nu_pool(epsilon)
    pts = pool.points
    if pool.membership is not None:
        pts = pts[np.asarray(pool.membership(pts, n), dtype=bool)]
        if len(pts) == 0:
            raise ValueError("empty pool: the membership filter removed "
                             "every point")
    S = _birkhoff_values(kmap, pts, n, potential)
    T = eng.orbit_table(eng.get_ctx(kmap), pts, n, dtype=np.float32)
    idx = _greedy_select(T, delta, None if potential is None else S)
    _verify_separated(T, idx, delta)
    SE = S[idx]
    w = np.exp(SE - _logsumexp_sorted(SE))
    return WeightedOrbitMeasure(points=pts[idx].copy(), weights=w, n=n,
                                kind="nu_n", epsilon=epsilon)


def build_mu_n(kmap: KatokMap, potential, n: int, epsilon: float,
               pool: GridPool | None = None) -> WeightedOrbitMeasure:
    """mu_n: the n-step orbit average of nu_n, each iterate at weight/n."""
    nu = build_nu_n(kmap, potential, n, epsilon, pool)
    rows = eng.orbit_table(eng.get_ctx(kmap), nu.points, n, dtype=np.float64)
    pts = rows.reshape(-1, 2)
    w = np.repeat(nu.weights / n, n)
    return WeightedOrbitMeasure(points=pts, weights=w, n=n, kind="mu_n",
                                epsilon=epsilon)


def orbit_proxy(kmap: KatokMap, length: int, seed: int = 0,
                x0=None) -> WeightedOrbitMeasure:
    """Single-orbit empirical measure: mu_n built from the one-atom nu_n.

    The cheapest proxy with `length` atoms; it weights Bowen balls like
    the smooth invariant measure, which is what the generous Gibbs
    tolerances are calibrated against.
    """
    if x0 is None:
        x0 = np.random.default_rng([seed, 101]).random(2)
    return build_mu_n(kmap, None, length, 1.0,
                      pool=point_pool(np.asarray(x0, dtype=np.float64)))


# ------------------------------------------------------------- ball masses


def _spatial_mass(mu: WeightedOrbitMeasure, x: np.ndarray, scale: float):
    d = np.hypot(*wrap_half(mu.points - x).T)
    return float(mu.weights[d <= scale].sum())


def _bowen_mass_count(kmap, mu, x, n, scale):
    d0 = np.hypot(*wrap_half(mu.points - x).T)
    cand = np.nonzero(d0 <= scale)[0]
    if len(cand) == 0:
        return 0.0
    rows = eng.orbit_table(eng.get_ctx(kmap), mu.points[cand], n,
                           dtype=np.float64)
    ox = eng.orbit_table(eng.get_ctx(kmap), x[None, :], n,
                         dtype=np.float64)[0]
    dn = np.hypot(*np.moveaxis(wrap_half(rows - ox[None, :, :]), 2, 0)
                  ).max(axis=1)
    return float(mu.weights[cand[dn <= scale]].sum())


def _log_bowen_volume(kmap, x, n, scale, mc, rng):
    """log Leb(B_n(x, scale)) in transported bracket coordinates.

    Offsets ride the stable/unstable cocycle (the unstable one pinned at
    the far end); membership is checked against the transported offsets
    rather than re-integrated orbits, which float hyperbolicity would
    shred for n beyond ~35.  The hit fraction is an O(1) boundary factor;
    the n-dependence sits entirely in the unstable volume contraction.
    """
    rows = eng.orbit_table(eng.get_ctx(kmap), x[None, :], n,
                           dtype=np.float64)[0]
    J, Vs, Vu = _fields_along(kmap, rows)
    ls = np.log(np.hypot(*np.einsum("nab,nb->na", J, Vs).T))
    lu = np.log(np.hypot(*np.einsum("nab,nb->na", J, Vu).T))
    cs = np.concatenate([[0.0], np.cumsum(ls[:-1])])
    cu = np.concatenate([[0.0], np.cumsum(lu[:-1])])
    dots = (Vs * Vu).sum(axis=1)
    sin0 = abs(Vs[0, 0] * Vu[0, 1] - Vs[0, 1] * Vu[0, 0])
    a = (2.0 * rng.random(mc) - 1.0) * scale
    b = (2.0 * rng.random(mc) - 1.0) * scale
    A = a[:, None] * np.exp(cs)[None, :]
    B = b[:, None] * np.exp(cu - cu[-1])[None, :]
    nrm2 = A * A + B * B + 2.0 * A * B * dots[None, :]
    hit = (nrm2.max(axis=1) <= scale * scale)
    f = max(hit.mean(), 0.25 / mc)
    return np.log(4.0 * scale * scale * sin0 * f) - cu[-1]


def gibbs_ratio_detail(kmap: KatokMap, mu: WeightedOrbitMeasure,
                       seg: OrbitSegment, potential, P_hat: float,
                       scale: float, backend: str = "count", mc: int = 256,
                       seed: int = 0):
    """rho(x, n) = log mu(B_n(x, scale)) + n P_hat - S_n phi(x).

    Returns (rho, censored).  The count backend bails into a one-sided
    bound (ball mass <= 1/atom count) when the cloud misses the ball; the
    geometric backend multiplies the coarse-scale atom density by a
    bracket-coordinate ball area and reaches n far beyond what counting
    can resolve.
    """
    if backend not in ("count", "geometric"):
        raise ValueError("backend must be 'count' or 'geometric'")
    if seg.n < 1:
        raise ValueError("the Gibbs ratio needs a segment of length >= 1")
    x = seg.x.as_array()
    n = seg.n
    S = float(_birkhoff_values(kmap, x[None, :], n, potential)[0])
    floor = 1.0 / mu.atom_count
    if backend == "count":
        mass = _bowen_mass_count(kmap, mu, x, n, scale)
        censored = mass == 0.0
        logm = np.log(mass if not censored else floor)
    else:
        mass0 = _spatial_mass(mu, x, scale)
        censored = mass0 == 0.0
        dens = np.log((mass0 if not censored else floor)
                      / (np.pi * scale * scale))
        rng = np.random.default_rng([seed, n, 3])
        logm = dens + _log_bowen_volume(kmap, x, n, scale, mc, rng)
    return float(logm + n * P_hat - S), bool(censored)


def gibbs_ratio(kmap: KatokMap, mu: WeightedOrbitMeasure, seg: OrbitSegment,
                potential, P_hat: float, scale: float,
                backend: str = "count", mc: int = 256,
                seed: int = 0) -> float:
    return gibbs_ratio_detail(kmap, mu, seg, potential, P_hat, scale,
                              backend, mc, seed)[0]


def gibbs_diagnostics(kmap: KatokMap, mu: WeightedOrbitMeasure, potential,
                      P_hat: float, ns, scale: float, samples: int = 100,
                      backend: str = "geometric", mc: int = 256,
                      seed: int = 0):
    """Per-n distribution of rho over a fixed sample of start points."""
    rng = np.random.default_rng([seed, 17])
    xs = rng.random((samples, 2))
    rows = []
    for n in ns:
        vals, cens = [], 0
        for x in xs:
            rho, c = gibbs_ratio_detail(kmap, mu, OrbitSegment(x, int(n)),
                                        potential, P_hat, scale, backend,
                                        mc, seed)
            vals.append(rho)
            cens += c
        vals = np.array(vals)
        rows.append({"n": int(n), "rho_max": float(np.abs(vals).max()),
                     "rho_mean": float(vals.mean()), "censored": cens})
    return tuple(rows)


# ------------------------------------------------------------ rate function


@dataclass(frozen=True)
class RateFunction:
    delta_grid: tuple
    q: tuple
    observable_id: str
    mean: float
    s_grid: tuple = ()
    lam: tuple = ()


def _lower_hull(s: np.ndarray, L: np.ndarray):
    """Values of the lower convex hull of (s, L) at the grid points."""
    hull = []
    for p in zip(s, L):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    hx = np.array([h[0] for h in hull])
    hy = np.array([h[1] for h in hull])
    return np.interp(s, hx, hy)


def rate_function(kmap: KatokMap, f, t_range, delta_grid, *,
                  pressure_fn=None, pool: GridPool | None = None,
                  delta: float = 1.0 / 4.0, n_range=(2, 3, 4, 5, 6),
                  observable_id: str = "f") -> RateFunction:
    """Rate function via the Legendre route.

    Lambda(s) = P-hat(phi + s f) - P-hat(phi) on the s-grid, convexified
    by its lower hull (the transform cannot see anything below the hull
    anyway); q(delta) is the smaller of the two one-sided transforms at
    displacement delta from the mean, with the transform's value at the
    mean itself subtracted so q(0) = 0 exactly rather than up to fit
    noise.  f may be the string "geo" (reuses the cached pressure curve),
    a callable potential, or bypassed entirely with pressure_fn, an
    s -> P-hat(s) stand-in.
    """
    s = np.array(sorted(float(t) for t in t_range))
    if len(s) < 3 or s[0] >= 0.0 or s[-1] <= 0.0:
        raise ValueError("t_range must straddle 0 with at least 3 points")
    i0 = int(np.argmin(np.abs(s)))
    if abs(s[i0]) > 1e-12:
        raise ValueError("t_range must contain s = 0")
    dg = np.array([float(d) for d in delta_grid])
    if (dg < 0).any():
        raise ValueError("delta_grid entries must be >= 0")
    dg = np.sort(dg)

    if pressure_fn is not None:
        P = np.array([float(pressure_fn(si)) for si in s])
    elif isinstance(f, str) and f == "geo":
        if pool is None:
            pool = grid_pool(512)
        P = np.array(pressure_curve(kmap, s, pool, 1.0 / 8.0,
                                    [2, 3, 4, 5, 6]).P)
    elif callable(f):
        if pool is None:
            pool = grid_pool(256)
        P = np.array([pressure_estimate(
            kmap, (lambda p, si=si: si * f(p)), delta, n_range, pool,
            companions=False).estimate for si in s])
    else:
        raise ValueError("f must be 'geo', a callable, or come with "
                         "pressure_fn")

    L = _lower_hull(s, P - P[i0])
    h = min(-s[i0 - 1], s[i0 + 1]) if 0 < i0 < len(s) - 1 else None
    if h is None:
        raise ValueError("t_range must have points on both sides of 0")
    mean = float((np.interp(h, s, L) - np.interp(-h, s, L)) / (2.0 * h))

    pos, neg = s >= 0.0, s <= 0.0
    base_p = float(np.max(s[pos] * mean - L[pos]))
    base_m = float(np.max(s[neg] * mean - L[neg]))
    q = []
    for d in dg:
        qp = float(np.max(s[pos] * (mean + d) - L[pos])) - base_p
        qm = float(np.max(s[neg] * (mean - d) - L[neg])) - base_m
        q.append(max(min(qp, qm), 0.0))
    return RateFunction(delta_grid=tuple(dg), q=tuple(q),
                        observable_id=observable_id, mean=mean,
                        s_grid=tuple(s), lam=tuple(L))


# -------------------------------------------------------- deviation decay


@dataclass(frozen=True)
class DeviationDecay:
    delta: float
    exponent: float
    mean: float
    rows: tuple

    @property
    def censored(self) -> int:
        return sum(r["censored"] for r in self.rows)


def deviation_decay_table(kmap: KatokMap, f, mu: WeightedOrbitMeasure,
                          n_grid, deltas,
                          min_atoms: int = 10000) -> tuple:
    """empirical_deviation_decay across several deltas in one orbit sweep.

    The Birkhoff table of f over the proxy dominates the cost and does not
    depend on delta, so it is computed once and each threshold reuses it.
    f = "geo" routes that table through the cocycle kernel, which is two
    orders of magnitude faster than evaluating the line field pointwise.
    """
    if mu.atom_count < min_atoms:
        raise ValueError(f"proxy too small: {mu.atom_count} atoms "
                         f"< {min_atoms}")
    ns = sorted(int(n) for n in n_grid)
    if ns[0] < 1:
        raise ValueError("n_grid entries must be >= 1")
    if isinstance(f, str):
        if f != "geo":
            raise ValueError("f must be 'geo' or a callable observable")
        S = eng.birkhoff_geo(eng.get_ctx(kmap), mu.points, ns[-1])[0]
        mean = float((mu.weights * S[:, 1]).sum())
        C = S[:, 1:]
    else:
        vals = f(mu.points)
        mean = float((mu.weights * vals).sum())
        T = eng.orbit_table(eng.get_ctx(kmap), mu.points, ns[-1],
                            dtype=np.float64)
        F = f(T.reshape(-1, 2)).reshape(len(mu.points), ns[-1])
        C = np.cumsum(F, axis=1)
    floor = 1.0 / mu.atom_count
    out = []
    for delta in deltas:
        rows, fit_n, fit_y = [], [], []
        for n in ns:
            dev = np.abs(C[:, n - 1] / n - mean)
            mass = float(mu.weights[dev >= float(delta)].sum())
            censored = mass == 0.0
            rows.append({"n": n, "mass": (mass if not censored else floor),
                         "censored": censored})
            if not censored:
                fit_n.append(n)
                fit_y.append(np.log(mass))
        if len(fit_n) >= 2:
            exponent = float(-np.polyfit(fit_n, fit_y, 1)[0])
        else:
            exponent = float("nan")
        out.append(DeviationDecay(delta=float(delta), exponent=exponent,
                                  mean=mean, rows=tuple(rows)))
    return tuple(out)


def empirical_deviation_decay(kmap: KatokMap, f, mu: WeightedOrbitMeasure,
                              n_grid, delta: float,
                              min_atoms: int = 10000) -> DeviationDecay:
    """mu-mass of {|S_n f / n - mean| >= delta} regressed against n.

    Zero-mass rows are censored at the 1/atom-count floor and left out of
    the fit; the positive exponent returned is the decay rate of the
    surviving rows.
    """
    return deviation_decay_table(kmap, f, mu, n_grid, (delta,),
                                 min_atoms=min_atoms)[0]
