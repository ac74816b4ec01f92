"""Legendre spectra of the pressure curve and Lyapunov-exponent sampling.

The entropy of a Lyapunov level set is reported through the Legendre
identity h(L(-alpha)) = E(alpha), not measured independently: level sets
are dense null sets and box counting says nothing useful about them at
desk scale.  The histogram side is an existence device: it exhibits
finite-time exponents across (0, lambda_hat) by seeding orbits on the
entry hyperbolas of the slow disc, where passage times can be dialed in
through the conserved product s1*s2.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import engine as eng
from .geometry import from_eigen
from .katok_map import KatokMap
from .pressure import PressureCurve

__all__ = [
    "LyapunovHistogram",
    "SpectrumTable",
    "alpha_bounds",
    "dimension_bound",
    "entropy_spectrum",
    "legendre",
    "lyapunov_histogram",
    "plateau_fit",
    "srb_exponent",
]


# ---------------------------------------------------------------- transform


def _grid(P: PressureCurve):
    t = np.asarray(P.t_grid, dtype=np.float64)
    v = np.asarray(P.P, dtype=np.float64)
    if len(t) < 3:
        raise ValueError("insufficient grid: need at least 3 curve points")
    return t, v


def legendre(P: PressureCurve, alpha: float) -> float:
    """E(alpha) = inf_t (P(t) - t alpha), taken over the sampled grid.

    Affine endpoint extension never beats a grid point while alpha stays
    inside the sampled slope range, so the grid minimum is exact there;
    outside that range the infimum runs away and the call refuses.
    """
    t, v = _grid(P)
    slopes = np.diff(v) / np.diff(t)
    lo, hi = float(slopes.min()), float(slopes.max())
    if not lo - 1e-9 <= alpha <= hi + 1e-9:
        raise ValueError(
            f"alpha = {alpha:.6g} outside the sampled slope range "
            f"[{lo:.6g}, {hi:.6g}]")
    return float(np.min(v - t * alpha))


def alpha_bounds(P: PressureCurve):
    """(alpha1_hat, alpha2_hat) from the sampled curve.

    alpha2_hat is the left difference quotient at t = 1.  alpha1_hat is
    the slope of the two leftmost points; the true alpha1 is a t -> -inf
    limit, so the finite t_min makes this an upper bound.
    """
    t, v = _grid(P)
    if t[0] > -5.0:
        raise ValueError("insufficient grid: the curve must reach "
                         "t_min <= -5 to estimate alpha1")
    i1 = np.flatnonzero(np.abs(t - 1.0) <= 1e-9)
    if len(i1) == 0 or i1[0] == 0:
        raise ValueError("insufficient grid: the curve must pass through "
                         "t = 1 with a point to its left")
    i1 = int(i1[0])
    alpha2 = float((v[i1] - v[i1 - 1]) / (t[i1] - t[i1 - 1]))
    alpha1 = float((v[1] - v[0]) / (t[1] - t[0]))
    return alpha1, alpha2


@dataclass(frozen=True)
class SpectrumTable:
    alpha_grid: tuple
    E: tuple
    dim_lb: tuple
    alpha1_hat: float
    alpha2_hat: float


def entropy_spectrum(P: PressureCurve, alpha_grid=None) -> SpectrumTable:
    """Level-set entropies over an alpha grid in (alpha1_hat, 0].

    The E column is the Legendre transform; the dimension column starts
    unfilled (NaN), see dimension_bound.
    """
    a1, a2 = alpha_bounds(P)
    if alpha_grid is None:
        alpha_grid = np.linspace(a1 + 0.01, 0.0, 48)
    alpha = np.array([float(a) for a in alpha_grid])
    E = tuple(legendre(P, a) for a in alpha)
    return SpectrumTable(alpha_grid=tuple(alpha), E=E,
                         dim_lb=(float("nan"),) * len(alpha),
                         alpha1_hat=a1, alpha2_hat=a2)


def dimension_bound(table: SpectrumTable) -> SpectrumTable:
    """dim_lb(alpha) = 2 E(alpha) / (-alpha), clamped to [0, 2].

    alpha = 0 rows stay NaN (the bound divides by alpha); the paper's
    plateau makes the clamp a no-op on [alpha2, 0).
    """
    dims = []
    for a, e in zip(table.alpha_grid, table.E):
        if a == 0.0:
            dims.append(float("nan"))
        else:
            dims.append(float(min(2.0, max(0.0, 2.0 * e / (-a)))))
    return dataclasses.replace(table, dim_lb=tuple(dims))


def plateau_fit(table: SpectrumTable, margin: float = 0.01) -> dict:
    """Fit quality of E = -alpha on the interior plateau [a2+margin, -margin]."""
    alpha = np.array(table.alpha_grid)
    E = np.array(table.E)
    dims = np.array(table.dim_lb)
    sel = (alpha >= table.alpha2_hat + margin) & (alpha <= -margin)
    if not sel.any():
        raise ValueError("plateau window is empty at this margin")
    dev = np.abs(E[sel] + alpha[sel])
    out = {"alpha_lo": float(alpha[sel].min()),
           "alpha_hi": float(alpha[sel].max()),
           "points": int(sel.sum()),
           "max_abs_dev": float(dev.max())}
    if np.isfinite(dims[sel]).all():
        out["dim_min"] = float(dims[sel].min())
        out["dim_max"] = float(dims[sel].max())
    return out


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class LyapunovHistogram:
    n: int
    sampler: str
    exponents: np.ndarray = field(repr=False)
    bin_centers: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)


def _linger_seeds(kmap: KatokMap, samples: int, seed: int,
                  rho_min: float) -> np.ndarray:
    """Entry points of D_r1 on hyperbolas s1 s2 = rho, rho log-uniform.

    rho below the float resolution of the embedding collapses onto the
    stable axis, parking the orbit past any window end; that is the
    intended deep end of the tail, not an error.
    """
    r1 = kmap.params.r1
    hi = r1 * r1 / 8.0
    pts = np.empty((samples, 2))
    for i in range(samples):
        u, c = np.random.default_rng([seed, i]).random(2)
        rho = hi * (rho_min / hi) ** u
        s2 = np.sqrt((r1 ** 2 + np.sqrt(r1 ** 4 - 4.0 * rho ** 2)) / 2.0)
        # slide along the hyperbola into the passage: diversifies the
        # remaining park length without leaving the incoming branch
        s2 *= 0.7 + 0.3 * c
        pts[i] = from_eigen(np.array([rho / s2, s2]))
    return pts


def lyapunov_histogram(kmap: KatokMap, n: int, samples: int,
                       sampler: str = "lebesgue", seed: int = 0,
                       x0=None, bins: int = 40,
                       rho_min: float = 1e-60) -> LyapunovHistogram:
    """Finite-time exponents (1/n) S_n(-phi_geo) over sampled orbits."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if sampler not in ("lebesgue", "linger-biased"):
        raise ValueError("sampler must be 'lebesgue' or 'linger-biased'")
    if x0 is not None:
        pts = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    elif sampler == "lebesgue":
        pts = np.stack([np.random.default_rng([seed, i]).random(2)
                        for i in range(samples)])
    else:
        pts = _linger_seeds(kmap, samples, seed, rho_min)
    ctx = eng.get_ctx(kmap)
    vals = np.empty(len(pts))
    chunk = max(1, int(8e6 // max(n, 1)))
    for a in range(0, len(pts), chunk):
        S, _ = eng.birkhoff_geo(ctx, pts[a:a + chunk], n)
        vals[a:a + len(S)] = -S[:, n] / n
    counts, edges = np.histogram(vals, bins=bins)
    return LyapunovHistogram(n=int(n), sampler=sampler, exponents=vals,
                             bin_centers=0.5 * (edges[:-1] + edges[1:]),
                             counts=counts)


def srb_exponent(kmap: KatokMap, orbits: int = 1000, steps: int = 100000,
                 seed: int = 0) -> float:
    """lambda_hat_plus(m): mean finite-time exponent over random orbits."""
    h = lyapunov_histogram(kmap, steps, orbits, "lebesgue", seed=seed)
    return float(h.exponents.mean())
