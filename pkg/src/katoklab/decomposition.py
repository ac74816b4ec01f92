"""Orbit-segment bookkeeping: the indicator of the complement of the
slow neighborhood, Birkhoff sums of that indicator, the (p, g, s)
decomposition of segments, and the empirical probes tied to it
(stable-leaf contraction, the Bowen property, expansivity).

A segment (x, n) splits as prefix + good core + suffix: p is the largest
i with S_i chi(x) < i r, s the largest k <= n - p with the mirrored sum
below k r at the other end, and the middle inherits two-sided goodness
from the maximality of both cuts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as eng
from . import tangent as tg
from .geometry import TorusPoint, torus_dist, wrap01, wrap_half
from .katok_map import KatokMap

__all__ = [
    "BowenReport",
    "CollectionParams",
    "ContractionReport",
    "DecompTriple",
    "ExpansivityReport",
    "OrbitSegment",
    "bowen_property_probe",
    "chi",
    "classify",
    "collection_params",
    "contraction_probe",
    "expansivity_probe",
    "is_good",
    "is_prefix",
    "is_suffix",
    "segment_chi",
]

_WHICH = ("G", "G_tilde")


@dataclass(frozen=True)
class OrbitSegment:
    """A finite orbit segment, recomputable from its start point and length."""

    x: TorusPoint
    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 0:
            raise ValueError("segment length must be a nonnegative integer")
        if not isinstance(self.x, TorusPoint):
            p = wrap01(np.asarray(self.x, dtype=np.float64))
            object.__setattr__(self, "x", TorusPoint(p[0], p[1]))


@dataclass(frozen=True)
class DecompTriple:
    p: int
    g: int
    s: int

    @property
    def n(self) -> int:
        return self.p + self.g + self.s


@dataclass(frozen=True)
class CollectionParams:
    r: float
    chi_radius: float


def collection_params(params, r: float) -> CollectionParams:
    if not 0.0 < r <= 1.0:
        raise ValueError("r must lie in (0, 1]")
    return CollectionParams(r=float(r), chi_radius=params.chi_radius)


# ------------------------------------------------------------------ chi


def chi(kmap: KatokMap, points):
    """1 outside the closed slow neighborhood of the origin, else 0."""
    if isinstance(points, TorusPoint):
        points = points.as_array()
    points = np.asarray(points, dtype=np.float64)
    d = wrap_half(np.atleast_2d(points))
    r = np.hypot(d[:, 0], d[:, 1])
    out = (r > kmap.params.chi_radius).astype(np.int64)
    return int(out[0]) if points.ndim == 1 else out


def _orbit(kmap: KatokMap, x, n: int, which: str) -> np.ndarray:
    if which not in _WHICH:
        raise ValueError(f"map selector must be one of {_WHICH}")
    p = np.asarray([x.x, x.y] if isinstance(x, TorusPoint) else x,
                   dtype=np.float64)
    if n == 0:
        return p[None, :]
    if which == "G":
        return eng.orbit_table(eng.get_ctx(kmap), p[None, :], n + 1,
                               dtype=np.float64)[0]
    rows = np.empty((n + 1, 2))
    rows[0] = p
    for i in range(n):
        rows[i + 1] = kmap.apply_tilde(rows[i])
    return rows


def segment_chi(kmap: KatokMap, seg: OrbitSegment,
                which: str = "G") -> np.ndarray:
    """The 0/1 word chi(x) .. chi(map^{n-1} x) of a segment."""
    if seg.n == 0:
        return np.zeros(0, dtype=np.int64)
    orbit = _orbit(kmap, seg.x, seg.n - 1, which)
    return chi(kmap, orbit)


def _triple_from_word(word: np.ndarray, r: float) -> DecompTriple:
    """(p, g, s) of a chi word by the maximal-cut rule."""
    n = len(word)
    idx = np.arange(n + 1)
    S = np.concatenate([[0], np.cumsum(word)])
    hits = np.nonzero(S < r * idx)[0]
    p = int(hits.max()) if len(hits) else 0
    T = np.concatenate([[0], np.cumsum(word[::-1])])
    k = np.arange(n - p + 1)
    hits = np.nonzero(T[: n - p + 1] < r * k)[0]
    s = int(hits.max()) if len(hits) else 0
    return DecompTriple(p=p, g=n - p - s, s=s)


def classify(kmap: KatokMap, seg: OrbitSegment, r: float,
             which: str = "G") -> DecompTriple:
    """Split (x, n) into maximal prefix, good core, and maximal suffix."""
    if not 0.0 < r <= 1.0:
        raise ValueError("r must lie in (0, 1]")
    return _triple_from_word(segment_chi(kmap, seg, which), r)


def _word_is_good(word: np.ndarray, r: float) -> bool:
    n = len(word)
    if n == 0:
        return True
    idx = np.arange(1, n + 1)
    S = np.cumsum(word)
    T = np.cumsum(word[::-1])
    return bool(np.all(S >= r * idx) and np.all(T >= r * idx))


def is_good(kmap: KatokMap, seg: OrbitSegment, r: float,
            which: str = "G") -> bool:
    """Two-sided goodness: both one-sided averages reach r at every cut."""
    if not 0.0 < r <= 1.0:
        raise ValueError("r must lie in (0, 1]")
    return _word_is_good(segment_chi(kmap, seg, which), r)


def is_prefix(kmap: KatokMap, seg: OrbitSegment, r: float,
              which: str = "G") -> bool:
    """Membership in the prefix collection: the full average stays below r.

    Length-0 segments belong to every collection by convention.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError("r must lie in (0, 1]")
    if seg.n == 0:
        return True
    word = segment_chi(kmap, seg, which)
    return bool(word.sum() < r * seg.n)


def is_suffix(kmap: KatokMap, seg: OrbitSegment, r: float,
              which: str = "G") -> bool:
    """Suffix membership; the defining inequality coincides with is_prefix
    (the two collections differ only by the role they play in gluing)."""
    return is_prefix(kmap, seg, r, which)


# ------------------------------------------------------------ probe reports


@dataclass(frozen=True)
class ContractionReport:
    variant: str
    n: int
    rate: float
    violations: int
    holds: bool
    distances: np.ndarray = field(repr=False)
    bounds: np.ndarray = field(repr=False)

    @property
    def rows(self):
        return [(i, float(d), float(b))
                for i, (d, b) in enumerate(zip(self.distances, self.bounds))]


@dataclass(frozen=True)
class ExpansivityReport:
    scale: float
    horizon: int
    pairs: int
    survivors: int
    median_initial: float
    initial_distances: np.ndarray = field(repr=False)

    @property
    def survival_fraction(self) -> float:
        return self.survivors / self.pairs


@dataclass(frozen=True)
class BowenReport:
    ns: tuple
    values: tuple
    slope: float
    intercept: float
    vmax: float
    trials: int

    @property
    def rows(self):
        return list(zip(self.ns, self.values))

    @property
    def summary(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "max": self.vmax, "trials": self.trials}


# ------------------------------------------------------------------ probes


def _leaf_arc(kmap: KatokMap, x, y) -> float:
    """Arclength from x to the projection of y on the traced stable leaf."""
    px = x.as_array() if isinstance(x, TorusPoint) else np.asarray(x, float)
    py = y.as_array() if isinstance(y, TorusPoint) else np.asarray(y, float)
    rel = wrap_half(py - px)
    chord = float(np.hypot(rel[0], rel[1]))
    if chord == 0.0:
        return 0.0
    disp, h = tg._trace_displacements(kmap, px, "stable", 2.0 * chord)
    a, b = disp[:-1], disp[1:]
    q = b - a
    qq = (q * q).sum(axis=1)
    t = np.clip(((rel - a) * q).sum(axis=1) / qq, 0.0, 1.0)
    gap = rel - (a + t[:, None] * q)
    j = int(np.argmin((gap * gap).sum(axis=1)))
    mid = (len(disp) - 1) // 2
    return abs((j + t[j] - mid) * h)


def contraction_probe(kmap: KatokMap, seg: OrbitSegment, y, r: float,
                      variant: str = "leaf", scale: float | None = None,
                      slack: float = 1.2) -> ContractionReport:
    """Distance decay along a good segment against the (lambda(1-beta))^{-ir}
    envelope.

    variant "leaf" measures the stable-leaf arclength d_s(G^i x, G^i y)
    against rate^i times the initial arclength, for y on the local stable
    leaf of x.  The initial arclength comes from tracing the leaf and
    projecting y onto it; its per-step evolution is transported by the
    derivative cocycle along the stable line field, the only measurement
    that survives to large i (re-iterating y directly loses the leaf after
    some fifteen steps: any float companion carries a transverse seed that
    the expansion amplifies past the decaying signal).

    variant "bowen" measures ambient distance d(G^k x, G^k y) for y in the
    n-Bowen ball against the two-sided form scale * (rate^k + rate^{n-1-k}).
    This one differences the two orbits directly, so it is meaningful only
    while the float seed times lambda^k stays under the bound; keep n
    moderate (around 25 for companions built at scale 1e-5).
    """
    if variant not in ("leaf", "bowen"):
        raise ValueError("variant must be 'leaf' or 'bowen'")
    if not 0.0 < r <= 1.0:
        raise ValueError("r must lie in (0, 1]")
    p = kmap.params
    n = seg.n
    rate = (p.lam * (1.0 - p.beta)) ** (-r)
    i = np.arange(n + 1)
    if variant == "leaf":
        d0 = _leaf_arc(kmap, seg.x, y)
        S = np.zeros(n + 1)
        if n:
            rows = _orbit(kmap, seg.x, n, "G")
            # one cocycle factor per step, the stable line resampled from
            # its converged field each time: transporting a single vector
            # forward would let float noise rotate it unstable by step ~20
            V = tg.direction_field(kmap, rows[:n], "stable")
            W = np.einsum("nab,nb->na", kmap.jac(rows[:n]), V)
            S[1:] = np.cumsum(np.log(np.hypot(W[:, 0], W[:, 1])))
        d = d0 * np.exp(S)
        bounds = d0 * rate ** i
    else:
        if scale is None:
            scale = 100.0 * p.gamma * p.epsilon
        ox = _orbit(kmap, seg.x, n, "G")
        oy = _orbit(kmap, y, n, "G")
        d = np.array([torus_dist(a, b) for a, b in zip(ox[:n], oy[:n])])
        k = i[:-1]
        bounds = scale * (rate ** k + rate ** (n - 1 - k))
    bad = int((d > slack * bounds).sum())
    return ContractionReport(variant=variant, n=n, rate=rate, violations=bad,
                             holds=bad == 0, distances=d, bounds=bounds)


def expansivity_probe(kmap: KatokMap, scale: float, horizon: int,
                      pairs: int, seed: int = 0,
                      initial_distance=None) -> ExpansivityReport:
    """Two-sided separation statistics for nearby pairs.

    Start distances default to uniform in (0, scale); pass a number to pin
    them, or an array of length `pairs` to control the distribution (the
    shrinking-median study wants log-uniform spacings).  A pair survives
    when max d(G^k x, G^k y) over |k| <= horizon stays below scale.
    """
    if scale <= 0 or horizon <= 0:
        raise ValueError("scale and horizon must be positive")
    ctx = eng.get_ctx(kmap)
    rng = np.random.default_rng(seed)
    X = rng.random((pairs, 2))
    if initial_distance is None:
        rho = scale * rng.random(pairs)
    else:
        rho = np.broadcast_to(np.asarray(initial_distance, dtype=np.float64),
                              (pairs,)).copy()
    ang = 2.0 * np.pi * rng.random(pairs)
    Y = wrap01(X + rho[:, None] * np.column_stack([np.cos(ang), np.sin(ang)]))

    def row_dist(a, b):
        d = wrap_half(a - b)
        return np.hypot(d[:, 0], d[:, 1])

    worst = row_dist(X, Y)
    tx = eng.orbit_table(ctx, X, horizon + 1, dtype=np.float64)
    ty = eng.orbit_table(ctx, Y, horizon + 1, dtype=np.float64)
    for k in range(1, horizon + 1):
        worst = np.maximum(worst, row_dist(tx[:, k], ty[:, k]))
    bx, by = X.copy(), Y.copy()
    for _ in range(horizon):
        bx = eng.apply_batch(ctx, bx, direction=-1, tol=eng.BULK_TOL)
        by = eng.apply_batch(ctx, by, direction=-1, tol=eng.BULK_TOL)
        worst = np.maximum(worst, row_dist(bx, by))
    alive = worst < scale
    init = row_dist(X, Y)[alive]
    median = float(np.median(init)) if len(init) else 0.0
    return ExpansivityReport(scale=scale, horizon=horizon, pairs=pairs,
                             survivors=int(alive.sum()),
                             median_initial=median, initial_distances=init)


def _inv2(J):
    """Closed-form inverses of a stack of 2x2 matrices."""
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    out = np.empty_like(J)
    out[:, 0, 0] = J[:, 1, 1]
    out[:, 0, 1] = -J[:, 0, 1]
    out[:, 1, 0] = -J[:, 1, 0]
    out[:, 1, 1] = J[:, 0, 0]
    return out / det[:, None, None]


def _fields_along(kmap: KatokMap, rows: np.ndarray):
    """Stable and unstable unit fields on an orbit, with the jacobians.

    The stable field is seeded at the last point and pulled back (the
    inverse cocycle contracts toward the stable line), the unstable one
    seeded at the first and pushed forward; one O(n) sweep each instead of
    a fresh burn-in per point.
    """
    n = len(rows)
    J = kmap.jac(rows)
    Ji = _inv2(J)
    Vs = np.empty((n, 2))
    Vu = np.empty((n, 2))
    Vs[-1] = tg.stable_direction(kmap, rows[-1]).vector
    for k in range(n - 2, -1, -1):
        w = Ji[k] @ Vs[k + 1]
        Vs[k] = w / np.hypot(w[0], w[1])
    Vu[0] = tg.unstable_direction(kmap, rows[0]).vector
    for k in range(n - 1):
        w = J[k] @ Vu[k]
        Vu[k + 1] = w / np.hypot(w[0], w[1])
    return J, Vs, Vu


def _bowen_spread(kmap: KatokMap, potential, rows, scale: float, rng):
    """|S_n potential| gap between an orbit and a Bowen-ball companion.

    The companion lives in bracket coordinates: a stable leaf offset plus
    an unstable one pinned at the far end, each transported by its cocycle
    factor along the orbit (re-iterating a float companion directly
    decorrelates after some twenty steps; the transported offsets are the
    orbit of the true companion up to curvature terms quadratic in scale).
    """
    n = len(rows)
    gam = kmap.params.gamma
    J, Vs, Vu = _fields_along(kmap, rows)
    ls = np.log(np.hypot(*np.einsum("nab,nb->na", J, Vs).T))
    lu = np.log(np.hypot(*np.einsum("nab,nb->na", J, Vu).T))
    a = (2.0 * rng.random() - 1.0) * scale / gam
    b = (2.0 * rng.random() - 1.0) * scale / gam
    A = a * np.exp(np.concatenate([[0.0], np.cumsum(ls[:-1])]))
    lu_cum = np.concatenate([[0.0], np.cumsum(lu[:-1])])
    B = b * np.exp(lu_cum - lu_cum[-1])
    m = (np.abs(A) + np.abs(B)).max() if n else 0.0
    if m > scale:
        A *= 0.9 * scale / m
        B *= 0.9 * scale / m
    y = wrap01(rows + A[:, None] * Vs + B[:, None] * Vu)
    return float(abs(potential(y).sum() - potential(rows).sum()))


def bowen_property_probe(kmap: KatokMap, potential, r: float, scale: float,
                         trials: int, n_max: int, seed: int = 0,
                         good_only: bool = True) -> BowenReport:
    """Spread of Birkhoff sums across Bowen balls of good segments.

    For each n in a geometric grid up to n_max, samples `trials` good
    segments (x, n), a Bowen-ball companion per segment, and records
    V(n) = max |S_n potential(x) - S_n potential(y)|; the report carries the
    linear regression of V against n.  The potential must accept an (N, 2)
    array of torus points and return N values.  good_only=False drops the
    goodness filter (the zeta-type variant: V may drift, V(n)/n must not).
    """
    if trials < 1 or n_max < 8:
        raise ValueError("need at least one trial and n_max >= 8")
    ctx = eng.get_ctx(kmap)
    ns, values = [], []
    n = 8
    while n <= n_max:
        ns.append(n)
        n *= 2
    if ns[-1] != n_max:
        ns.append(n_max)
    Rchi = kmap.params.chi_radius
    for n in ns:
        v = 0.0
        for t in range(trials):
            # independent stream per (length, trial): results do not depend
            # on evaluation order
            rng = np.random.default_rng([seed, n, t])
            for _attempt in range(64):
                x = rng.random(2)
                rows = eng.orbit_table(ctx, x[None, :], n,
                                       dtype=np.float64)[0]
                gap = wrap_half(rows)
                word = (np.hypot(gap[:, 0], gap[:, 1]) > Rchi).astype(np.int64)
                if not good_only or _word_is_good(word, r):
                    break
            else:
                raise RuntimeError(
                    f"no good segment of length {n} found in budget; "
                    f"r={r} is too demanding for these parameters")
            v = max(v, _bowen_spread(kmap, potential, rows, scale, rng))
        values.append(v)
    slope, intercept = np.polyfit(ns, values, 1)
    return BowenReport(ns=tuple(ns), values=tuple(values),
                       slope=float(slope), intercept=float(intercept),
                       vmax=float(max(values)), trials=trials)
