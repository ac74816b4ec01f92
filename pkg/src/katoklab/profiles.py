"""The slow-down profile psi and its radial integrals.

psi is the scalar function the whole construction hangs on:

    psi(u) = (u/r0)^alpha   on [0, r0/2]
    psi(u) = 1              for u >= r0
    C-infinity monotone blend on [r0/2, r0]

with psi' >= 0 and non-increasing everywhere on (0, r0], and the ratio
bound u*psi'(u) <= 2*alpha*psi(u).  The blend is built so these hold by
construction, not by luck: psi' on the blend is p'(r0/2) * m(t) where
m is a product of two non-negative, non-increasing C-infinity factors
with flat contact at both ends, and the single free knob t0 is solved
so that psi(r0) = 1 exactly.

Also provided: J(u) = int_0^u dxi / psi(xi), its inverse, and the
boundary-matching constant c0 = J(r0)/r0 used by the radial coordinate
change.  All one-dimensional calculus is done once on dense grids and
frozen into monotone interpolants; evaluation is vectorized.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

__all__ = ["SlowProfile"]

_RAMP_SPAN = 0.25   # t-distance over which the blend's derivative leaves the power law
_GRID_N = 8193      # blend table nodes


def _smoothstep(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, strictly increasing between."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros(t.shape, dtype=np.float64)
    out[t >= 1.0] = 1.0
    mid = (t > 0.0) & (t < 1.0)
    tm = t[mid]
    ea = np.exp(-1.0 / tm)
    eb = np.exp(-1.0 / (1.0 - tm))
    out[mid] = ea / (ea + eb)
    return out


class SlowProfile:
    """psi(u; alpha, r0) with derivative, reciprocal integral, and inverse."""

    def __init__(self, alpha: float, r0: float):
        if not 0.0 < alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")
        if not 0.0 < r0 < 1.0:
            raise ValueError(f"r0 must lie in (0, 1), got {r0}")
        self.alpha = float(alpha)
        self.r0 = float(r0)
        self._build()

    # ---------------------------------------------------------------- build

    def _build(self):
        a = self.alpha
        r0 = self.r0
        span = _RAMP_SPAN

        # Smoothed ramp: s1(t) = span * S(min(t/span, 1)) where S' = 1 - step.
        # s1 matches t to infinite order at 0 and saturates at span/2.
        xs = np.linspace(0.0, 1.0, 4097)
        S = cumulative_simpson(1.0 - _smoothstep(xs), x=xs, initial=0.0)
        S *= 0.5 / S[-1]            # int_0^1 (1 - step) = 1/2 by symmetry
        self._ramp_integral = PchipInterpolator(xs, S)

        t = np.linspace(0.0, 1.0, _GRID_N)
        s1 = span * self._ramp_integral(np.minimum(t / span, 1.0))
        ramp = (1.0 + s1) ** (a - 1.0)   # the power law's own derivative profile, tamed

        # Find the drop position t0 so that int_0^1 m(t) dt hits the value
        # continuity of psi at r0 demands.
        target = (2.0 ** a - 1.0) / a

        def gap(t0):
            m = ramp * (1.0 - _smoothstep((t - t0) / (1.0 - t0)))
            return simpson(m, x=t) - target

        lo, hi = 0.02, 0.999
        if not (gap(lo) < 0.0 < gap(hi)):
            raise RuntimeError(
                f"profile blend infeasible for alpha={a}, r0={r0}: "
                f"bracket [{gap(lo):.3g}, {gap(hi):.3g}] does not straddle 0"
            )
        t0 = brentq(gap, lo, hi, xtol=1e-15, rtol=8.9e-16)
        self._t0 = float(t0)

        m = ramp * (1.0 - _smoothstep((t - t0) / (1.0 - t0)))
        M = cumulative_simpson(m, x=t, initial=0.0)
        M *= target / M[-1]          # pin psi(r0) = 1 to machine precision
        self._blend_M = PchipInterpolator(t, M)

        # psi'(r0/2), the derivative scale carried through the blend
        self._pp_half = a * 2.0 ** (1.0 - a) / r0

        # Reciprocal integral over the blend, in t units:
        # J(u) = J(r0/2) + (r0/2) * K(t(u)),  K(t) = int_0^t dtau / psi_blend
        psi_blend = 2.0 ** (-a) + a * 2.0 ** (-a) * M
        K = cumulative_simpson(1.0 / psi_blend, x=t, initial=0.0)
        self._blend_K = PchipInterpolator(t, K)
        self._J_half = r0 * 2.0 ** (a - 1.0) / (1.0 - a)
        self._J_r0 = self._J_half + 0.5 * r0 * K[-1]
        # monotone seed table for inverting J on the blend
        self._blend_J_inv = PchipInterpolator(self._J_half + 0.5 * r0 * K,
                                              0.5 * r0 * (1.0 + t))

    # ----------------------------------------------------------- evaluation

    def _blend_m(self, t):
        """Normalized derivative profile on the blend, analytic up to the ramp table."""
        t = np.asarray(t, dtype=np.float64)
        s1 = _RAMP_SPAN * self._ramp_integral(np.minimum(t / _RAMP_SPAN, 1.0))
        drop = 1.0 - _smoothstep((t - self._t0) / (1.0 - self._t0))
        return (1.0 + s1) ** (self.alpha - 1.0) * drop

    def value(self, u):
        """psi(u).  Accepts scalars or arrays; u may exceed r0 (psi = 1 there)."""
        u = np.asarray(u, dtype=np.float64)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        if np.any(u < 0.0):
            raise ValueError("psi argument must be >= 0")
        out = np.ones(u.shape, dtype=np.float64)
        r0 = self.r0
        power = u < 0.5 * r0
        out[power] = (u[power] / r0) ** self.alpha
        blend = (u >= 0.5 * r0) & (u < r0)
        if np.any(blend):
            tb = 2.0 * u[blend] / r0 - 1.0
            out[blend] = 2.0 ** (-self.alpha) * (
                1.0 + self.alpha * self._blend_M(tb))
        return float(out[0]) if scalar else out

    def deriv(self, u):
        """psi'(u).  Diverges at u = 0 (+inf is returned there)."""
        u = np.asarray(u, dtype=np.float64)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        if np.any(u < 0.0):
            raise ValueError("psi argument must be >= 0")
        out = np.zeros(u.shape, dtype=np.float64)
        r0 = self.r0
        zero = u == 0.0
        out[zero] = np.inf
        power = (u > 0.0) & (u < 0.5 * r0)
        out[power] = (self.alpha / r0) * (u[power] / r0) ** (self.alpha - 1.0)
        blend = (u >= 0.5 * r0) & (u < r0)
        if np.any(blend):
            tb = 2.0 * u[blend] / r0 - 1.0
            out[blend] = self._pp_half * self._blend_m(tb)
        return float(out[0]) if scalar else out

    def recip_integral(self, u):
        """J(u) = int_0^u dxi / psi(xi); finite for alpha < 1, strictly increasing."""
        u = np.asarray(u, dtype=np.float64)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        if np.any(u < 0.0):
            raise ValueError("argument must be >= 0")
        r0 = self.r0
        out = np.empty(u.shape, dtype=np.float64)
        power = u < 0.5 * r0
        out[power] = r0 / (1.0 - self.alpha) * (u[power] / r0) ** (1.0 - self.alpha)
        blend = (u >= 0.5 * r0) & (u < r0)
        if np.any(blend):
            tb = 2.0 * u[blend] / r0 - 1.0
            out[blend] = self._J_half + 0.5 * r0 * self._blend_K(tb)
        flat = u >= r0
        out[flat] = self._J_r0 + (u[flat] - r0)
        return float(out[0]) if scalar else out

    def recip_integral_inv(self, y):
        """Inverse of J, refined with two Newton steps (J' = 1/psi is analytic)."""
        y = np.asarray(y, dtype=np.float64)
        scalar = y.ndim == 0
        y = np.atleast_1d(y)
        if np.any(y < 0.0):
            raise ValueError("argument must be >= 0")
        r0 = self.r0
        out = np.empty(y.shape, dtype=np.float64)
        low = y < self._J_half
        out[low] = r0 * ((1.0 - self.alpha) * y[low] / r0) ** (1.0 / (1.0 - self.alpha))
        mid = (y >= self._J_half) & (y < self._J_r0)
        if np.any(mid):
            u = np.asarray(self._blend_J_inv(y[mid]), dtype=np.float64)
            np.clip(u, 0.5 * r0, r0, out=u)
            for _ in range(2):
                u -= (self.recip_integral(u) - y[mid]) * self.value(u)
                np.clip(u, 0.5 * r0, r0, out=u)
            out[mid] = u
        high = y >= self._J_r0
        out[high] = r0 + (y[high] - self._J_r0)
        return float(out[0]) if scalar else out

    # ------------------------------------------------------------ constants

    @property
    def c0(self) -> float:
        """J(r0)/r0: makes the radial coordinate change continuous at radius r0."""
        return self._J_r0 / self.r0

    @property
    def J_r0(self) -> float:
        return self._J_r0

    def __repr__(self):
        return f"SlowProfile(alpha={self.alpha}, r0={self.r0})"
