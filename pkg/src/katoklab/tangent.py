"""Derivative cocycle diagnostics: invariant cones, unstable and stable
line fields, the geometric potential, and local-leaf probes.

Everything here works pointwise or on small batches; the heavy lifting
(orbit integration, cocycle pushes) is delegated to the numba engine.
Tangent vectors are expressed in the eigenframe of the linear part, where
the invariant cones are the sectors |xi2| <= beta |xi1| (unstable) and
|xi1| <= beta |xi2| (stable).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import engine as eng
from .geometry import TorusPoint, torus_dist, wrap01, wrap_half
from .katok_map import KatokMap
from .params import beta_slope

__all__ = [
    "BracketError",
    "Cone",
    "ConeReport",
    "GrassmannReport",
    "LineField",
    "TangentVector",
    "beta_of_alpha",
    "bracket",
    "bracket_report",
    "cone_check",
    "dG",
    "direction_field",
    "geo_potential_G",
    "geo_potential_tilde_sum",
    "grassmann_decay_probe",
    "lyapunov",
    "stable_direction",
    "trace_leaf",
    "unstable_direction",
]

beta_of_alpha = beta_slope

_ANGLE_TOL = 1e-8       # doubling the burn-in must move the line less than this
_BURN_CAP = 3200
_NODE_CAP = 401         # leaf polylines keep at most this many nodes
_LEAF_SPAN = 0.2        # half-width budget of a leaf trace, chart safety


class BracketError(RuntimeError):
    """Local stable and unstable leaves failed to intersect at the
    requested scale."""


@dataclass(frozen=True)
class TangentVector:
    """A tangent vector attached to a base point, eigenframe components."""

    base: TorusPoint
    xi1: float
    xi2: float

    def as_eigen(self) -> np.ndarray:
        return np.array([self.xi1, self.xi2])

    def as_xy(self, frame: np.ndarray) -> np.ndarray:
        return frame @ self.as_eigen()


@dataclass(frozen=True)
class Cone:
    """Sector of tangent vectors around an eigenaxis.

    orientation "unstable" means |xi2| <= slope |xi1|; "stable" mirrors it.
    """

    slope: float
    orientation: str = "unstable"

    def __post_init__(self):
        if self.orientation not in ("unstable", "stable"):
            raise ValueError("orientation must be 'unstable' or 'stable'")
        if not self.slope > 0.0:
            raise ValueError("cone slope must be positive")

    def contains(self, xi1, xi2, slack: float = 0.0) -> np.ndarray:
        a, b = np.abs(np.asarray(xi1)), np.abs(np.asarray(xi2))
        if self.orientation == "stable":
            a, b = b, a
        return b <= self.slope * a * (1.0 + slack)

    def boundary_vector(self, sign: int = 1) -> np.ndarray:
        v = np.array([1.0, sign * self.slope])
        if self.orientation == "stable":
            v = v[::-1]
        return v / np.hypot(v[0], v[1])


@dataclass(frozen=True)
class LineField:
    """A line (angle mod pi) attached to a base point."""

    base: TorusPoint
    angle: float
    kind: str
    burn_in: int
    converged: bool = True

    @property
    def vector(self) -> np.ndarray:
        return np.array([math.cos(self.angle), math.sin(self.angle)])


@dataclass(frozen=True)
class ConeReport:
    kind: str
    slope: float
    samples: int
    violations: int
    worst_margin: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass(frozen=True)
class GrassmannReport:
    """Fit of d_Gr(E^u(G^k x), E^u(G^k y)) against C (theta^k + theta^{n-1-k})."""

    n: int
    theta: float
    C: float
    holds: bool
    distances: np.ndarray = field(repr=False)

    @property
    def rows(self):
        """CSV-ready (k, distance, theta, C) rows."""
        return [(k, float(d), self.theta, self.C)
                for k, d in enumerate(self.distances)]


# --------------------------------------------------------------- utilities


def _pt(x) -> np.ndarray:
    if isinstance(x, TorusPoint):
        return np.array([x.x, x.y])
    p = np.asarray(x, dtype=np.float64)
    if p.shape != (2,):
        raise ValueError("expected a single point of shape (2,)")
    return p


def _line_gap(u, v) -> float:
    # acute angle between two unit vectors read as lines (mod pi)
    cross = abs(u[0] * v[1] - u[1] * v[0])
    return math.asin(min(1.0, cross))


def _angle_mod_pi(v) -> float:
    a = math.atan2(v[1], v[0]) % math.pi
    return 0.0 if a == math.pi else a


def dG(kmap: KatokMap, x) -> np.ndarray:
    """Derivative of the map at x (xy frame), a 2x2 array."""
    return kmap.jac(_pt(x))


# ------------------------------------------------------------ cone checks


def _cone_sample_points(kmap: KatokMap, n: int, rng) -> np.ndarray:
    """Sample mix biased toward the slow disc, where the cone bound is tight:
    40% uniform torus, 40% uniform over the flow disc, 20% on deep hyperbola
    arcs with log-uniform |s1 s2|."""
    p = kmap.params
    n_disc = int(0.4 * n)
    n_hyp = int(0.2 * n)
    n_uni = n - n_disc - n_hyp
    pts = [rng.random((n_uni, 2))]

    radius = p.flow_radius
    rho = radius * np.sqrt(rng.random(n_disc))
    ang = 2.0 * math.pi * rng.random(n_disc)
    pts.append(wrap01(np.column_stack([rho * np.cos(ang),
                                       rho * np.sin(ang)])))

    r0sq = p.r0 ** 2
    lo, hi = 1e-6 * r0sq, 0.2 * r0sq
    invariant = lo * (hi / lo) ** rng.random(n_hyp)      # |s1 s2|
    span = 0.5 * np.arccosh(0.45 * r0sq / invariant)
    g = span * (2.0 * rng.random(n_hyp) - 1.0)
    s1 = np.sqrt(invariant) * np.exp(g) * rng.choice([-1.0, 1.0], n_hyp)
    s2 = np.sqrt(invariant) * np.exp(-g) * rng.choice([-1.0, 1.0], n_hyp)
    pts.append(wrap01(np.column_stack([s1, s2]) @ kmap.frame.T))
    return np.concatenate(pts)


def cone_check(kmap: KatokMap, samples: int = 10_000, slope: float | None = None,
               kind: str = "unstable", seed: int = 0,
               slack: float = 1e-10) -> ConeReport:
    """Push cone vectors through the cocycle and count escapes.

    The unstable cone is checked under DG, the stable cone under DG^{-1}.
    Half the test vectors sit on the cone boundary (the extremal slopes),
    half are spread through the interior.  A sample is a violation when the
    image slope exceeds the cone slope by more than the relative slack.
    """
    if kind not in ("unstable", "stable"):
        raise ValueError("kind must be 'unstable' or 'stable'")
    rng = np.random.default_rng(seed)
    beta = kmap.params.beta if slope is None else float(slope)
    P = _cone_sample_points(kmap, samples, rng)

    J = kmap.jac(P) if kind == "unstable" else kmap.jac_inv(P)
    E = kmap.frame
    Je = np.einsum("ab,nbc,cd->nad", E.T, J, E)

    m = np.empty(samples)
    half = samples // 2
    m[:half] = beta * rng.choice([-1.0, 1.0], half)
    m[half:] = beta * (2.0 * rng.random(samples - half) - 1.0)
    xi = np.column_stack([np.ones(samples), m])
    if kind == "stable":
        xi = xi[:, ::-1]
    img = np.einsum("nab,nb->na", Je, xi)

    num, den = (img[:, 1], img[:, 0]) if kind == "unstable" else \
               (img[:, 0], img[:, 1])
    ratio = np.abs(num) / np.abs(den)
    bad = ratio > beta * (1.0 + slack)
    return ConeReport(kind=kind, slope=beta, samples=samples,
                      violations=int(bad.sum()),
                      worst_margin=float((beta - ratio).min()))


# -------------------------------------------------------- line field probes


def _direction_vector(kmap: KatokMap, x, kind: str, burn_in: int):
    """Unit line-field vector with burn-in doubled until the angle settles."""
    if burn_in < 1:
        raise ValueError("burn_in must be a positive integer")
    ctx = eng.get_ctx(kmap)
    p = _pt(x)[None, :]
    probe = eng.unstable_directions if kind == "unstable" else \
        eng.stable_directions
    v = probe(ctx, p, burn=burn_in)[0]
    burn, converged = burn_in, False
    while burn < _BURN_CAP:
        burn = min(2 * burn, _BURN_CAP)
        v_next = probe(ctx, p, burn=burn)[0]
        settled = _line_gap(v, v_next) < _ANGLE_TOL
        v = v_next
        if settled:
            converged = True
            break
    return v, burn, converged


def _as_linefield(kmap, x, kind, burn_in) -> LineField:
    v, burn, converged = _direction_vector(kmap, x, kind, burn_in)
    p = wrap01(_pt(x))
    return LineField(base=TorusPoint(p[0], p[1]), angle=_angle_mod_pi(v),
                     kind=kind, burn_in=burn, converged=converged)


def unstable_direction(kmap: KatokMap, x, burn_in: int = 200) -> LineField:
    """Unstable line at x from backward burn-in and cocycle push-forward.

    The burn-in doubles until the angle moves by < 1e-8 (or the cap is hit,
    flagged on the result).  Points whose backward orbit never meets the
    slow disc get the expanding eigendirection exactly; the fixed point at
    the origin does so by the same mechanism.
    """
    return _as_linefield(kmap, x, "unstable", burn_in)


def stable_direction(kmap: KatokMap, x, burn_in: int = 200) -> LineField:
    """Stable line at x, the mirror construction along the forward orbit."""
    return _as_linefield(kmap, x, "stable", burn_in)


def direction_field(kmap: KatokMap, points, kind: str = "unstable",
                    burn: int = 200) -> np.ndarray:
    """Bulk line-field vectors at fixed burn-in, (N, 2) unit vectors."""
    ctx = eng.get_ctx(kmap)
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    probe = eng.unstable_directions if kind == "unstable" else \
        eng.stable_directions
    return probe(ctx, P, burn=burn)


# ------------------------------------------------------ geometric potential


def geo_potential_G(kmap: KatokMap, x, burn_in: int = 200) -> float:
    """phi^geo(x) = -log of the expansion along the unstable line at x."""
    v, _, _ = _direction_vector(kmap, x, "unstable", burn_in)
    return -math.log(float(np.linalg.norm(dG(kmap, x) @ v)))


def geo_potential_tilde_sum(kmap: KatokMap, x, n: int,
                            burn_in: int = 200) -> float:
    """Birkhoff sum of the geometric potential of the conjugated map.

    Computed through the coboundary identity: with z = phi^{-1}(x) and u_i
    the unit unstable directions along the orbit of z,

        S_n(x) = S_n phi^geo(z) - log|Dphi(G^n z) u_n| + log|Dphi(z) u_0|.

    The boundary terms vanish whenever the endpoints sit outside the disc.
    """
    if n < 0:
        raise ValueError("n must be a nonnegative integer")
    if n == 0:
        return 0.0
    ctx = eng.get_ctx(kmap)
    z = kmap.phi_inv(_pt(x))
    T = eng.orbit_table(ctx, z[None, :], n + 1, dtype=np.float64)[0]
    U = eng.orbit_directions(ctx, z[None, :], n + 1, burn=burn_in)[0]
    growth = np.einsum("nab,nb->na", kmap.jac(T[:-1]), U[:-1])
    s_geo = -float(np.log(np.hypot(growth[:, 0], growth[:, 1])).sum())
    d0 = kmap.dphi(T[0]) @ U[0]
    dn = kmap.dphi(T[n]) @ U[n]
    return (s_geo - math.log(float(np.hypot(dn[0], dn[1])))
            + math.log(float(np.hypot(d0[0], d0[1]))))


def lyapunov(kmap: KatokMap, x, n: int, direction: int = 1,
             burn_in: int = 200) -> float:
    """Finite-time top exponent, -S_n phi^geo / n along the proper line.

    direction=-1 measures the backward cocycle along the stable line, the
    quantity that matches the forward exponent at the orbit's other end.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    kind = "unstable" if direction > 0 else "stable"
    v, _, _ = _direction_vector(kmap, x, kind, burn_in)
    ctx = eng.get_ctx(kmap)
    sums, _ = eng.lyapunov_sums(ctx, _pt(x)[None, :], n,
                                direction=1 if direction > 0 else -1,
                                V0=v[None, :])
    return float(sums[0]) / n


# -------------------------------------------------------- decay of angles


def grassmann_decay_probe(kmap: KatokMap, x, y, n: int,
                          burn: int = 96) -> GrassmannReport:
    """Angles between the unstable lines along two nearby orbits, checked
    against the U-shaped envelope C (theta^k + theta^{n-1-k}).

    The envelope is monotone in theta, so the probe fits by feasibility:
    theta is the smallest rate at which the envelope with an absolute
    constant C <= 1 majorizes every sample (found by bisection), and the
    reported C is the exact constant at that rate.  `holds` records that
    some theta <= 0.95 works; data humped in the middle of the window
    forces theta toward 1 and fails the check.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    ctx = eng.get_ctx(kmap)
    P = np.stack([_pt(x), _pt(y)])
    U = eng.orbit_directions(ctx, P, n, burn=burn)
    cross = U[0, :, 0] * U[1, :, 1] - U[0, :, 1] * U[1, :, 0]
    d = np.arcsin(np.clip(np.abs(cross), 0.0, 1.0))

    k = np.arange(n)
    if d.max() <= 1e-14:
        return GrassmannReport(n=n, theta=0.0, C=float(d.max()),
                               holds=True, distances=d)

    def c_req(theta):
        env = theta ** k + theta ** (n - 1 - k)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(env > 0.0, d / env, np.where(d > 0.0, np.inf, 0.0))
        return float(r.max())

    c_abs, theta_cap = 1.0, 0.95
    if c_req(theta_cap) > c_abs:
        return GrassmannReport(n=n, theta=1.0, C=c_req(theta_cap),
                               holds=False, distances=d)
    lo, hi = 0.0, theta_cap
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mid == 0.0 or c_req(mid) <= c_abs:
            hi = mid
        else:
            lo = mid
    return GrassmannReport(n=n, theta=hi, C=c_req(hi), holds=True,
                           distances=d)


# ------------------------------------------------------------- local leaves


def _trace_displacements(kmap: KatokMap, x, kind: str, arclength: float):
    """Polyline of a local leaf in the chart at x, midpoint integration of
    the line field with sign carried along to kill mod-pi flips.

    Returns (disp, h): displacements of shape (2m+1, 2) whose middle row is
    the origin, and the actual step used.
    """
    if not arclength > 0.0:
        raise ValueError("arclength must be positive")
    if arclength > _LEAF_SPAN:
        raise ValueError(f"arclength {arclength} exceeds the chart budget "
                         f"{_LEAF_SPAN}")
    p0 = _pt(x)
    h = kmap.params.epsilon / 50.0
    m = int(math.ceil(arclength / h))
    if 2 * m + 1 > _NODE_CAP:
        m = (_NODE_CAP - 1) // 2
        h = arclength / m

    ctx = eng.get_ctx(kmap)
    probe = eng.unstable_directions if kind == "unstable" else \
        eng.stable_directions

    def fld(disp, ref):
        v = probe(ctx, wrap01(p0 + disp)[None, :], burn=48)[0]
        return -v if v @ ref < 0.0 else v

    v0 = probe(ctx, p0[None, :], burn=48)[0]
    sides = []
    for sign in (-1.0, 1.0):
        disp = np.zeros(2)
        ref = sign * v0
        rows = []
        for _ in range(m):
            v1 = fld(disp, ref)
            v2 = fld(disp + 0.5 * h * v1, v1)
            disp = disp + h * v2
            ref = v2
            rows.append(disp)
        sides.append(rows)
    disp = np.vstack([sides[0][::-1], np.zeros((1, 2)), sides[1]])
    return disp, h


def trace_leaf(kmap: KatokMap, x, kind: str, arclength: float) -> np.ndarray:
    """Local leaf through x as torus points, x at the middle node.

    The polyline extends `arclength` along the leaf on each side of x in
    steps of epsilon/50, coarsened if the node cap would be exceeded.
    """
    if kind not in ("unstable", "stable"):
        raise ValueError("kind must be 'unstable' or 'stable'")
    disp, _ = _trace_displacements(kmap, x, kind, arclength)
    return wrap01(_pt(x) + disp)


def _segment_hits(ds, du):
    """All crossings between two chains of segments; (i, j, point) tuples."""
    a, r = ds[:-1], ds[1:] - ds[:-1]
    c, s = du[:-1], du[1:] - du[:-1]
    denom = r[:, None, 0] * s[None, :, 1] - r[:, None, 1] * s[None, :, 0]
    qp = c[None, :, :] - a[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[..., 0] * s[None, :, 1] - qp[..., 1] * s[None, :, 0]) / denom
        u = (qp[..., 0] * r[:, None, 1] - qp[..., 1] * r[:, None, 0]) / denom
    hit = (denom != 0.0) & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    out = []
    for i, j in zip(*np.nonzero(hit)):
        out.append((i, j, a[i] + t[i, j] * r[i]))
    return out


def _arc_position(disp, h, idx, point):
    """Leaf distance from the middle node to a point on segment idx."""
    mid = (len(disp) - 1) // 2
    along = float(np.linalg.norm(point - disp[idx]))
    if idx >= mid:
        return (idx - mid) * h + along
    return (mid - idx) * h - along


def bracket_report(kmap: KatokMap, x, y):
    """The bracket point [x, y] together with the two leaf distances.

    [x, y] is the local intersection W^s_loc(x) cap W^u_loc(y), located by
    tracing both leaves to length 2 gamma d(x, y) and intersecting the
    polylines; among multiple crossings the one nearest the base points
    wins.
    """
    px, py = _pt(x), _pt(y)
    d = torus_dist(px, py)
    if d == 0.0:
        q = wrap01(px)
        return TorusPoint(q[0], q[1]), 0.0, 0.0
    span = 2.0 * kmap.params.gamma * d
    if span > _LEAF_SPAN:
        raise BracketError(f"points too far apart for a local bracket "
                           f"(needed leaf span {span:.3g})")
    ds, hs = _trace_displacements(kmap, px, "stable", span)
    du, hu = _trace_displacements(kmap, py, "unstable", span)
    du = du + wrap_half(py - px)

    hits = _segment_hits(ds, du)
    if not hits:
        raise BracketError(f"stable leaf of {tuple(px)} and unstable leaf of "
                           f"{tuple(py)} do not cross within arclength "
                           f"{span:.3g}")
    best = min(hits, key=lambda ij: max(_arc_position(ds, hs, ij[0], ij[2]),
                                        _arc_position(du, hu, ij[1], ij[2])))
    i, j, pt = best
    dist_s = _arc_position(ds, hs, i, pt)
    dist_u = _arc_position(du, hu, j, pt)
    q = wrap01(px + pt)
    return TorusPoint(q[0], q[1]), dist_s, dist_u


def bracket(kmap: KatokMap, x, y) -> TorusPoint:
    """Local product structure: the point W^s_loc(x) cap W^u_loc(y)."""
    z, _, _ = bracket_report(kmap, x, y)
    return z
