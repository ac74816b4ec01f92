"""The slow-down construction on the torus.

G agrees with the automorphism A = [[2, 1], [1, 1]] except on orbits whose
unit-time trajectory arc enters the disc of radius r0 around the fixed
point; there it is the time-one map of the slowed field

    ds1/dt =  s1 psi(|s|^2 / r0) log(lam)
    ds2/dt = -s2 psi(|s|^2 / r0) log(lam)

written in the orthonormal eigenframe of A.  Because s1*s2 is conserved,
the slowed trajectory traverses the same hyperbola arc as the linear one,
so "the arc stays outside the disc" is an exact, checkable criterion for
G(x) = A(x); no tolerance is involved in the branch choice.

kappa = 1 / psi(|s|^2 / r0) inside the disc (1 outside, continuously) is
the density of the invariant measure nu of G, and phi is the radial
coordinate change that turns nu into area: the Katok map is
Gtilde = phi o G o phi^{-1}, with det(DGtilde) = 1 identically because
det(Dphi) = kappa / c0 telescopes against det(DG) = kappa/kappa o G.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .geometry import wrap01, wrap_half
from .params import MapParams, make_params
from .profiles import SlowProfile

__all__ = ["KatokMap", "IntegratorError", "LingerResult", "A_MATRIX", "A_INV"]

A_MATRIX = np.array([[2.0, 1.0], [1.0, 1.0]])
A_INV = np.array([[1.0, -1.0], [-1.0, 2.0]])

_MAX_STEPS = 8192
_DRIFT_RTOL = 1e-10        # conserved-product drift per unit time
_END_RTOL = 1e-11          # endpoint Richardson agreement between halvings
_JAC_TOL = 3e-10           # same, for the variational part


class IntegratorError(RuntimeError):
    """Step control could not meet the conservation/agreement tolerances."""


@dataclasses.dataclass(frozen=True)
class LingerResult:
    measured: float     # time-1 steps spent inside the disc of radius r1
    bound: float        # a-priori passage bound for the entry product rho
    exited: bool


class KatokMap:
    """The map G, its conjugate Gtilde, and everything local to them."""

    def __init__(self, params: MapParams | None = None):
        self.params = params if params is not None else make_params()
        self.profile = SlowProfile(self.params.alpha, self.params.r0)
        t = (math.sqrt(5.0) - 1.0) / 2.0
        n = math.sqrt(1.0 + t * t)
        # columns: unstable and stable unit eigenvectors, det = +1
        self.frame = np.array([[1.0 / n, -t / n], [t / n, 1.0 / n]])
        self._loglam = math.log(self.params.lam)
        self.c0 = self.profile.c0
        r0 = self.params.r0
        self.kappa0 = 1.0 + math.pi * r0 * (self.profile.J_r0 - r0)

    # ------------------------------------------------------------ plumbing

    def _disp(self, points):
        """Displacement of points from the fixed point, wrapped to [-1/2, 1/2)."""
        return wrap_half(np.asarray(points, dtype=np.float64))

    def _to_eigen(self, d):
        return d @ self.frame

    def _from_eigen(self, s):
        return s @ self.frame.T

    @staticmethod
    def _shape_in(points):
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        return p.reshape(-1, 2), single

    @staticmethod
    def _shape_out(arr, single):
        return arr[0] if single else arr

    # ------------------------------------------------------------ the flow

    def _field(self, s):
        w = s[:, 0] ** 2 + s[:, 1] ** 2
        psi = self.profile.value(w / self.params.r0)
        f = np.empty_like(s)
        f[:, 0] = self._loglam * psi * s[:, 0]
        f[:, 1] = -self._loglam * psi * s[:, 1]
        return f

    def _field_jac(self, s):
        """Field value and its spatial Jacobian (the variational coefficient)."""
        s1 = s[:, 0]
        s2 = s[:, 1]
        w = s1 * s1 + s2 * s2
        u = w / self.params.r0
        psi = self.profile.value(u)
        dpsi = self.profile.deriv(u) / self.params.r0   # d/dw of psi(w/r0)
        g = np.where(w > 0.0, dpsi, 0.0)                # s^2 * psi' -> 0 at the origin
        f = np.empty_like(s)
        f[:, 0] = self._loglam * psi * s1
        f[:, 1] = -self._loglam * psi * s2
        J = np.empty(s.shape[:1] + (2, 2))
        J[:, 0, 0] = self._loglam * (psi + 2.0 * g * s1 * s1)
        J[:, 0, 1] = self._loglam * (2.0 * g * s1 * s2)
        J[:, 1, 0] = -self._loglam * (2.0 * g * s1 * s2)
        J[:, 1, 1] = -self._loglam * (psi + 2.0 * g * s2 * s2)
        return f, J

    def _rk4(self, s0, n_steps, sign):
        h = sign / float(n_steps)
        s = s0.copy()
        for _ in range(n_steps):
            k1 = self._field(s)
            k2 = self._field(s + 0.5 * h * k1)
            k3 = self._field(s + 0.5 * h * k2)
            k4 = self._field(s + h * k3)
            s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return s

    def _rk4_jac(self, s0, n_steps, sign):
        h = sign / float(n_steps)
        s = s0.copy()
        V = np.broadcast_to(np.eye(2), s.shape[:1] + (2, 2)).copy()
        for _ in range(n_steps):
            f1, J1 = self._field_jac(s)
            kV1 = J1 @ V
            f2, J2 = self._field_jac(s + 0.5 * h * f1)
            kV2 = J2 @ (V + 0.5 * h * kV1)
            f3, J3 = self._field_jac(s + 0.5 * h * f2)
            kV3 = J3 @ (V + 0.5 * h * kV2)
            f4, J4 = self._field_jac(s + h * f3)
            kV4 = J4 @ (V + h * kV3)
            s += (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
            V += (h / 6.0) * (kV1 + 2.0 * kV2 + 2.0 * kV3 + kV4)
        return s, V

    def _integrate(self, s, sign=1, with_jac=False):
        """Unit-time flow by RK4, halving the step until the conserved product
        s1*s2 drifts by < 1e-10 relative and successive halvings agree."""
        s = np.asarray(s, dtype=np.float64).reshape(-1, 2)
        npts = len(s)
        out = np.empty_like(s)
        outV = np.empty((npts, 2, 2)) if with_jac else None
        q0 = s[:, 0] * s[:, 1]
        active = np.arange(npts)
        n_steps = max(4, int(round(1.0 / self.params.ode_step)))
        prev = prevV = None
        while active.size:
            if with_jac:
                cur, curV = self._rk4_jac(s[active], n_steps, sign)
            else:
                cur = self._rk4(s[active], n_steps, sign)
                curV = None
            if prev is None:
                ok = np.zeros(active.size, dtype=bool)   # need two resolutions
            else:
                drift = np.abs(cur[:, 0] * cur[:, 1] - q0[active])
                ok = drift <= _DRIFT_RTOL * np.abs(q0[active]) + 1e-300
                endgap = np.max(np.abs(cur - prev), axis=1)
                ok &= endgap <= _END_RTOL * (
                    np.max(np.abs(cur), axis=1) + self.params.r0)
                if with_jac:
                    vgap = np.max(np.abs(curV - prevV), axis=(1, 2))
                    ok &= vgap <= _JAC_TOL * np.maximum(
                        1.0, np.max(np.abs(curV), axis=(1, 2)))
            out[active[ok]] = cur[ok]
            if with_jac:
                outV[active[ok]] = curV[ok]
            keep = ~ok
            active = active[keep]
            prev = cur[keep]
            prevV = curV[keep] if with_jac else None
            n_steps *= 2
            if active.size and n_steps > _MAX_STEPS:
                raise IntegratorError(
                    f"{active.size} points failed step control at {_MAX_STEPS} steps")
        return (out, outV) if with_jac else out

    # ------------------------------------------------------- branch choice

    def _arc_enters_disc(self, s):
        """True where the linear hyperbola arc from s to A(s) dips inside
        squared radius r0^2.  Exact: the slowed orbit rides the same arc."""
        lam2 = self.params.lam ** 2
        w0 = s[:, 0] ** 2 + s[:, 1] ** 2
        w1 = s[:, 0] ** 2 * lam2 + s[:, 1] ** 2 / lam2
        wmin = np.minimum(w0, w1)
        q = s[:, 0] * s[:, 1]
        both = (s[:, 0] != 0.0) & (s[:, 1] != 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            tstar = np.log(np.abs(s[:, 1]) / np.abs(s[:, 0])) / (2.0 * self._loglam)
        interior = both & (tstar > 0.0) & (tstar < 1.0)
        wmin = np.where(interior, np.minimum(wmin, 2.0 * np.abs(q)), wmin)
        return wmin < self.params.r0 ** 2

    def _arc_enters_disc_backward(self, s):
        back = np.empty_like(s)
        back[:, 0] = s[:, 0] / self.params.lam
        back[:, 1] = s[:, 1] * self.params.lam
        return self._arc_enters_disc(back)

    def _flow_candidates(self, d):
        r2 = d[:, 0] ** 2 + d[:, 1] ** 2
        return r2 <= self.params.flow_radius ** 2

    # ------------------------------------------------------------- the map

    def apply(self, points):
        p, single = self._shape_in(points)
        out = wrap01(p @ A_MATRIX.T)
        d = self._disp(p)
        cand = self._flow_candidates(d)
        if np.any(cand):
            s = self._to_eigen(d[cand])
            flow = self._arc_enters_disc(s)
            if np.any(flow):
                idx = np.flatnonzero(cand)[flow]
                end = self._integrate(s[flow], sign=1)
                out[idx] = wrap01(self._from_eigen(end))
        return self._shape_out(out, single)

    def apply_inv(self, points):
        p, single = self._shape_in(points)
        out = wrap01(p @ A_INV.T)
        d = self._disp(p)
        cand = self._flow_candidates(d)
        if np.any(cand):
            s = self._to_eigen(d[cand])
            flow = self._arc_enters_disc_backward(s)
            if np.any(flow):
                idx = np.flatnonzero(cand)[flow]
                end = self._integrate(s[flow], sign=-1)
                out[idx] = wrap01(self._from_eigen(end))
        return self._shape_out(out, single)

    def flow_time_one(self, s, direction=1):
        """Raw unit-time integration of the slowed field in eigen coordinates."""
        arr = np.asarray(s, dtype=np.float64)
        single = arr.ndim == 1
        end = self._integrate(arr.reshape(-1, 2), sign=1 if direction >= 0 else -1)
        return self._shape_out(end, single)

    # ------------------------------------------------------------ cocycle

    def jac(self, points):
        """DG as (..., 2, 2), from the variational equation on flow arcs."""
        p, single = self._shape_in(points)
        out = np.broadcast_to(A_MATRIX, (len(p), 2, 2)).copy()
        d = self._disp(p)
        cand = self._flow_candidates(d)
        if np.any(cand):
            s = self._to_eigen(d[cand])
            flow = self._arc_enters_disc(s)
            if np.any(flow):
                idx = np.flatnonzero(cand)[flow]
                _, V = self._integrate(s[flow], sign=1, with_jac=True)
                out[idx] = self.frame @ V @ self.frame.T
        return out[0] if single else out

    def jac_inv(self, points):
        """D(G^{-1}), integrated backward; inverse of jac at the preimage."""
        p, single = self._shape_in(points)
        out = np.broadcast_to(A_INV, (len(p), 2, 2)).copy()
        d = self._disp(p)
        cand = self._flow_candidates(d)
        if np.any(cand):
            s = self._to_eigen(d[cand])
            flow = self._arc_enters_disc_backward(s)
            if np.any(flow):
                idx = np.flatnonzero(cand)[flow]
                _, V = self._integrate(s[flow], sign=-1, with_jac=True)
                out[idx] = self.frame @ V @ self.frame.T
        return out[0] if single else out

    # ------------------------------------------------- density and measure

    def kappa(self, points):
        p, single = self._shape_in(points)
        d = self._disp(p)
        r2 = d[:, 0] ** 2 + d[:, 1] ** 2
        out = np.ones(len(p))
        inside = r2 < self.params.r0 ** 2
        if np.any(inside):
            out[inside] = 1.0 / self.profile.value(r2[inside] / self.params.r0)
        return self._shape_out(out, single)

    def kappa_normalizer(self) -> float:
        """kappa0 = integral of kappa over the torus (closed form via J)."""
        return self.kappa0

    def sample_nu(self, n: int, rng) -> np.ndarray:
        """Exact draws from d(nu) = kappa/kappa0 dm via the radial inverse CDF."""
        r0 = self.params.r0
        inside_mass = math.pi * r0 ** 2 * self.c0 / self.kappa0
        pts = rng.random((n, 2))
        inside = rng.random(n) < inside_mass
        # outside draws are uniform conditioned on avoiding the disc
        redo = ~inside & (np.sum(wrap_half(pts) ** 2, axis=1) < r0 ** 2)
        while np.any(redo):
            pts[redo] = rng.random((int(redo.sum()), 2))
            redo[redo] = np.sum(wrap_half(pts[redo]) ** 2, axis=1) < r0 ** 2
        k = int(inside.sum())
        if k:
            u = rng.random(k)
            rho = np.sqrt(r0 * self.profile.recip_integral_inv(u * self.profile.J_r0))
            theta = 2.0 * math.pi * rng.random(k)
            pts[inside] = wrap01(np.column_stack([rho * np.cos(theta),
                                                  rho * np.sin(theta)]))
        return pts

    # ------------------------------------------------ radial change phi

    def radial_forward(self, rho):
        """R(rho) on [0, r0], with R(r0) = r0 by the choice of c0."""
        rho = np.asarray(rho, dtype=np.float64)
        w = rho ** 2 / self.params.r0
        return np.sqrt(self.params.r0 * self.profile.recip_integral(w) / self.c0)

    def radial_inverse(self, rr):
        rr = np.asarray(rr, dtype=np.float64)
        y = self.c0 * rr ** 2 / self.params.r0
        return np.sqrt(self.params.r0 * self.profile.recip_integral_inv(y))

    def radial_deriv(self, rho):
        """R'(rho) = rho / (c0 * psi(rho^2/r0) * R(rho)) for rho > 0."""
        rho = np.asarray(rho, dtype=np.float64)
        psi = self.profile.value(rho ** 2 / self.params.r0)
        return rho / (self.c0 * psi * self.radial_forward(rho))

    def _radial_map(self, points, radial):
        p, single = self._shape_in(points)
        out = p.copy()
        d = self._disp(p)
        rho = np.hypot(d[:, 0], d[:, 1])
        inside = (rho > 0.0) & (rho < self.params.r0)
        if np.any(inside):
            scale = radial(rho[inside]) / rho[inside]
            out[inside] = wrap01(d[inside] * scale[:, None])
        return self._shape_out(out, single)

    def phi(self, points):
        """Radial conjugating homeomorphism; identity outside the r0-disc."""
        return self._radial_map(points, self.radial_forward)

    def phi_inv(self, points):
        return self._radial_map(points, self.radial_inverse)

    def dphi(self, points):
        """D(phi) as (..., 2, 2); identity outside the disc and at the origin
        (phi is not differentiable at 0; the convention is harmless because
        every consumer works at positive radius)."""
        p, single = self._shape_in(points)
        out = np.broadcast_to(np.eye(2), (len(p), 2, 2)).copy()
        d = self._disp(p)
        rho = np.hypot(d[:, 0], d[:, 1])
        inside = (rho > 0.0) & (rho < self.params.r0)
        if np.any(inside):
            rr = rho[inside]
            ratio = self.radial_forward(rr) / rr
            dr = self.radial_deriv(rr)
            shat = d[inside] / rr[:, None]
            outer = shat[:, :, None] * shat[:, None, :]
            out[inside] = (ratio[:, None, None] * np.eye(2)
                           + (dr - ratio)[:, None, None] * outer)
        return out[0] if single else out

    def det_dphi(self, points):
        """det Dphi = kappa / c0 (exact identity of the radial construction)."""
        return self.kappa(points) / self.c0

    def apply_tilde(self, points):
        return self.phi(self.apply(self.phi_inv(points)))

    def apply_tilde_inv(self, points):
        return self.phi(self.apply_inv(self.phi_inv(points)))

    # ------------------------------------------------------------- linger

    def linger_time(self, rho: float, max_factor: float = 10.0) -> LingerResult:
        """Passage through the disc of radius r1, entering on s1*s2 = rho.

        rho = 0 is the degenerate stable-axis entry: the orbit never exits
        (it converges to the fixed point), flagged rather than simulated.
        """
        r1 = self.params.r1
        if rho < 0.0 or rho >= r1 ** 2 / 4.0:
            raise ValueError(f"rho must lie in [0, r1^2/4) = [0, {r1**2/4.0:.3e})")
        bound = self._linger_bound(rho)
        if rho == 0.0:
            return LingerResult(measured=math.inf, bound=bound, exited=False)
        s2 = math.sqrt((r1 ** 2 + math.sqrt(r1 ** 4 - 4.0 * rho ** 2)) / 2.0)
        s = np.array([[rho / s2, s2]])
        cap = int(max(10.0, math.ceil(max_factor * bound)))
        for k in range(1, cap + 1):
            s = self._integrate(s, sign=1)
            if s[0, 0] ** 2 + s[0, 1] ** 2 > r1 ** 2:
                return LingerResult(measured=float(k), bound=bound, exited=True)
        raise IntegratorError(
            f"no exit from the r1-disc after {cap} steps (rho={rho:.3e})")

    def _linger_bound(self, rho: float) -> float:
        if rho == 0.0:
            return math.inf
        r1 = self.params.r1
        psi_close = self.profile.value(2.0 * rho / self.params.r0)
        return r1 ** 2 / (rho * self.params.lam ** psi_close)
