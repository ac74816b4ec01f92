"""Compiled scalar kernels for bulk dynamics.

The python KatokMap is the reference implementation; its vectorized
integrator is fast for wide batches but pays per-call overhead that makes
long orbit loops (10^5 steps and more) impractical.  These numba kernels
re-implement the same arithmetic point by point: the identical arc test,
the identical adaptive RK4 (same step ladder, same acceptance criteria),
and the blend of psi evaluated from the very piecewise-cubic coefficients
the profile froze at construction, so the two paths agree to rounding.

Everything here is deterministic: no threading inside kernels, no
fastmath, fixed iteration order.  Parallelism belongs to the callers,
who shard work across task-level threads (the kernels release the GIL).
"""

from __future__ import annotations

import dataclasses

import numpy as np
from numba import njit

from .katok_map import IntegratorError, KatokMap

__all__ = ["EngineCtx", "make_ctx", "STRICT_TOL", "BULK_TOL",
           "apply_batch", "orbit_table", "lyapunov_sums",
           "unstable_directions", "stable_directions", "birkhoff_geo"]

# par[] layout
_ALPHA, _R0, _LAM, _LOGLAM, _FLOWR2, _R0SQ, _E00, _E01, _E10, _E11 = range(10)

# tol[] layout: n0, nmax, drift_rtol, end_rtol, tangent_tol
STRICT_TOL = np.array([16.0, 8192.0, 1e-10, 1e-11, 3e-10])
BULK_TOL = np.array([16.0, 8192.0, 1e-8, 1e-8, 1e-7])


@dataclasses.dataclass(frozen=True)
class EngineCtx:
    par: np.ndarray     # packed scalars, layout above
    Cm: np.ndarray      # (4, K) cubic coefficients of the blend integral M


def make_ctx(kmap: KatokMap) -> EngineCtx:
    p = kmap.params
    E = kmap.frame
    M = kmap.profile._blend_M
    x = M.x
    K = len(x) - 1
    # the kernels index the blend table arithmetically; the grid must be uniform
    if not np.allclose(np.diff(x), 1.0 / K, rtol=0.0, atol=1e-15):
        raise ValueError("blend table grid is not uniform")
    par = np.array([
        p.alpha, p.r0, p.lam, np.log(p.lam),
        p.flow_radius ** 2, p.r0 ** 2,
        E[0, 0], E[0, 1], E[1, 0], E[1, 1],
    ])
    return EngineCtx(par=par, Cm=np.ascontiguousarray(M.c))


# --------------------------------------------------------------- scalar core

@njit(cache=True, inline="always")
def _wrap01(x):
    return x % 1.0


@njit(cache=True, inline="always")
def _disp(x):
    return x - np.floor(x + 0.5)


@njit(cache=True, inline="always")
def _m_eval(t, Cm):
    K = Cm.shape[1]
    if t <= 0.0:
        k = 0
    else:
        k = int(t * K)
        if k >= K:
            k = K - 1
    tau = t - k / K
    c0 = Cm[0, k]
    c1 = Cm[1, k]
    c2 = Cm[2, k]
    c3 = Cm[3, k]
    val = ((c0 * tau + c1) * tau + c2) * tau + c3
    der = (3.0 * c0 * tau + 2.0 * c1) * tau + c2
    return val, der


@njit(cache=True, inline="always")
def _psi(u, alpha, r0, Cm):
    if u >= r0:
        return 1.0
    if u < 0.5 * r0:
        return (u / r0) ** alpha
    t = 2.0 * u / r0 - 1.0
    M, _ = _m_eval(t, Cm)
    return 2.0 ** (-alpha) * (1.0 + alpha * M)


@njit(cache=True, inline="always")
def _psi_pair(u, alpha, r0, Cm):
    """(psi, dpsi/du); at u = 0 the derivative slot is 0 because every use
    multiplies it by coordinates that vanish there."""
    if u >= r0:
        return 1.0, 0.0
    if u < 0.5 * r0:
        if u == 0.0:
            return 0.0, 0.0
        p = (u / r0) ** alpha
        return p, alpha * p / u
    t = 2.0 * u / r0 - 1.0
    M, Mp = _m_eval(t, Cm)
    s2a = 2.0 ** (-alpha)
    return s2a * (1.0 + alpha * M), s2a * alpha * Mp * 2.0 / r0


@njit(cache=True)
def _rk4_end(s1, s2, sign, nsteps, loglam, alpha, r0, Cm):
    h = sign / nsteps
    a1 = s1
    a2 = s2
    for _ in range(nsteps):
        p = _psi((a1 * a1 + a2 * a2) / r0, alpha, r0, Cm)
        k11 = loglam * p * a1
        k12 = -loglam * p * a2
        b1 = a1 + 0.5 * h * k11
        b2 = a2 + 0.5 * h * k12
        p = _psi((b1 * b1 + b2 * b2) / r0, alpha, r0, Cm)
        k21 = loglam * p * b1
        k22 = -loglam * p * b2
        b1 = a1 + 0.5 * h * k21
        b2 = a2 + 0.5 * h * k22
        p = _psi((b1 * b1 + b2 * b2) / r0, alpha, r0, Cm)
        k31 = loglam * p * b1
        k32 = -loglam * p * b2
        b1 = a1 + h * k31
        b2 = a2 + h * k32
        p = _psi((b1 * b1 + b2 * b2) / r0, alpha, r0, Cm)
        k41 = loglam * p * b1
        k42 = -loglam * p * b2
        a1 += (h / 6.0) * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
        a2 += (h / 6.0) * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
    return a1, a2


@njit(cache=True)
def _rk4_end_tan(s1, s2, v1, v2, sign, nsteps, loglam, alpha, r0, Cm):
    """Flow plus one tangent vector through the variational equation."""
    h = sign / nsteps
    a1 = s1
    a2 = s2
    w1 = v1
    w2 = v2
    for _ in range(nsteps):
        # stage evaluations: field f and J acting on the tangent stage
        u = (a1 * a1 + a2 * a2) / r0
        p, dp = _psi_pair(u, alpha, r0, Cm)
        g = 2.0 * dp / r0
        f11 = loglam * p * a1
        f12 = -loglam * p * a2
        t11 = loglam * ((p + g * a1 * a1) * w1 + g * a1 * a2 * w2)
        t12 = loglam * (-g * a1 * a2 * w1 - (p + g * a2 * a2) * w2)

        b1 = a1 + 0.5 * h * f11
        b2 = a2 + 0.5 * h * f12
        c1 = w1 + 0.5 * h * t11
        c2 = w2 + 0.5 * h * t12
        u = (b1 * b1 + b2 * b2) / r0
        p, dp = _psi_pair(u, alpha, r0, Cm)
        g = 2.0 * dp / r0
        f21 = loglam * p * b1
        f22 = -loglam * p * b2
        t21 = loglam * ((p + g * b1 * b1) * c1 + g * b1 * b2 * c2)
        t22 = loglam * (-g * b1 * b2 * c1 - (p + g * b2 * b2) * c2)

        b1 = a1 + 0.5 * h * f21
        b2 = a2 + 0.5 * h * f22
        c1 = w1 + 0.5 * h * t21
        c2 = w2 + 0.5 * h * t22
        u = (b1 * b1 + b2 * b2) / r0
        p, dp = _psi_pair(u, alpha, r0, Cm)
        g = 2.0 * dp / r0
        f31 = loglam * p * b1
        f32 = -loglam * p * b2
        t31 = loglam * ((p + g * b1 * b1) * c1 + g * b1 * b2 * c2)
        t32 = loglam * (-g * b1 * b2 * c1 - (p + g * b2 * b2) * c2)

        b1 = a1 + h * f31
        b2 = a2 + h * f32
        c1 = w1 + h * t31
        c2 = w2 + h * t32
        u = (b1 * b1 + b2 * b2) / r0
        p, dp = _psi_pair(u, alpha, r0, Cm)
        g = 2.0 * dp / r0
        f41 = loglam * p * b1
        f42 = -loglam * p * b2
        t41 = loglam * ((p + g * b1 * b1) * c1 + g * b1 * b2 * c2)
        t42 = loglam * (-g * b1 * b2 * c1 - (p + g * b2 * b2) * c2)

        a1 += (h / 6.0) * (f11 + 2.0 * f21 + 2.0 * f31 + f41)
        a2 += (h / 6.0) * (f12 + 2.0 * f22 + 2.0 * f32 + f42)
        w1 += (h / 6.0) * (t11 + 2.0 * t21 + 2.0 * t31 + t41)
        w2 += (h / 6.0) * (t12 + 2.0 * t22 + 2.0 * t32 + t42)
    return a1, a2, w1, w2


@njit(cache=True)
def _flow_end(s1, s2, sign, par, Cm, tol):
    alpha = par[_ALPHA]
    r0 = par[_R0]
    loglam = par[_LOGLAM]
    n = int(tol[0])
    nmax = int(tol[1])
    q0 = s1 * s2
    p1 = 0.0
    p2 = 0.0
    have = False
    while n <= nmax:
        e1, e2 = _rk4_end(s1, s2, sign, n, loglam, alpha, r0, Cm)
        if have:
            okd = abs(e1 * e2 - q0) <= tol[2] * abs(q0) + 1e-300
            m = abs(e1) if abs(e1) > abs(e2) else abs(e2)
            g1 = abs(e1 - p1)
            g2 = abs(e2 - p2)
            g = g1 if g1 > g2 else g2
            if okd and g <= tol[3] * (m + r0):
                return e1, e2, True
        p1 = e1
        p2 = e2
        have = True
        n *= 2
    return p1, p2, False


@njit(cache=True)
def _flow_end_tan(s1, s2, v1, v2, sign, par, Cm, tol):
    alpha = par[_ALPHA]
    r0 = par[_R0]
    loglam = par[_LOGLAM]
    n = int(tol[0])
    nmax = int(tol[1])
    q0 = s1 * s2
    p1 = 0.0
    p2 = 0.0
    pv1 = 0.0
    pv2 = 0.0
    have = False
    while n <= nmax:
        e1, e2, w1, w2 = _rk4_end_tan(s1, s2, v1, v2, sign, n,
                                      loglam, alpha, r0, Cm)
        if have:
            okd = abs(e1 * e2 - q0) <= tol[2] * abs(q0) + 1e-300
            m = abs(e1) if abs(e1) > abs(e2) else abs(e2)
            g1 = abs(e1 - p1)
            g2 = abs(e2 - p2)
            g = g1 if g1 > g2 else g2
            vm = abs(w1) if abs(w1) > abs(w2) else abs(w2)
            vg1 = abs(w1 - pv1)
            vg2 = abs(w2 - pv2)
            vg = vg1 if vg1 > vg2 else vg2
            okv = vg <= tol[4] * (vm if vm > 1.0 else 1.0)
            if okd and g <= tol[3] * (m + r0) and okv:
                return e1, e2, w1, w2, True
        p1 = e1
        p2 = e2
        pv1 = w1
        pv2 = w2
        have = True
        n *= 2
    return p1, p2, pv1, pv2, False


@njit(cache=True, inline="always")
def _arc_enters(s1, s2, lam, loglam, r0sq):
    w0 = s1 * s1 + s2 * s2
    a = s1 * lam
    b = s2 / lam
    w1 = a * a + b * b
    wmin = w0 if w0 < w1 else w1
    if s1 != 0.0 and s2 != 0.0:
        ts = np.log(abs(s2) / abs(s1)) / (2.0 * loglam)
        if 0.0 < ts < 1.0:
            wq = 2.0 * abs(s1 * s2)
            if wq < wmin:
                wmin = wq
    return wmin < r0sq


@njit(cache=True)
def _apply_point(x, y, direction, par, Cm, tol):
    """One application of G (direction=+1) or G^{-1} (-1).  Returns ok=False
    only if the step-control ladder was exhausted."""
    d1 = _disp(x)
    d2 = _disp(y)
    if d1 * d1 + d2 * d2 <= par[_FLOWR2]:
        s1 = d1 * par[_E00] + d2 * par[_E10]
        s2 = d1 * par[_E01] + d2 * par[_E11]
        lam = par[_LAM]
        if direction > 0:
            flow = _arc_enters(s1, s2, lam, par[_LOGLAM], par[_R0SQ])
        else:
            flow = _arc_enters(s1 / lam, s2 * lam, lam, par[_LOGLAM], par[_R0SQ])
        if flow:
            f1, f2, ok = _flow_end(s1, s2, 1.0 if direction > 0 else -1.0,
                                   par, Cm, tol)
            nd1 = f1 * par[_E00] + f2 * par[_E01]
            nd2 = f1 * par[_E10] + f2 * par[_E11]
            return _wrap01(nd1), _wrap01(nd2), ok
    if direction > 0:
        return _wrap01(2.0 * x + y), _wrap01(x + y), True
    return _wrap01(x - y), _wrap01(-x + 2.0 * y), True


@njit(cache=True)
def _push_point(x, y, v1, v2, direction, par, Cm, tol):
    """Apply G^{+-1} and its derivative to (point, tangent vector) jointly."""
    d1 = _disp(x)
    d2 = _disp(y)
    if d1 * d1 + d2 * d2 <= par[_FLOWR2]:
        s1 = d1 * par[_E00] + d2 * par[_E10]
        s2 = d1 * par[_E01] + d2 * par[_E11]
        lam = par[_LAM]
        if direction > 0:
            flow = _arc_enters(s1, s2, lam, par[_LOGLAM], par[_R0SQ])
        else:
            flow = _arc_enters(s1 / lam, s2 * lam, lam, par[_LOGLAM], par[_R0SQ])
        if flow:
            ve1 = v1 * par[_E00] + v2 * par[_E10]
            ve2 = v1 * par[_E01] + v2 * par[_E11]
            f1, f2, w1, w2, ok = _flow_end_tan(
                s1, s2, ve1, ve2, 1.0 if direction > 0 else -1.0, par, Cm, tol)
            nd1 = f1 * par[_E00] + f2 * par[_E01]
            nd2 = f1 * par[_E10] + f2 * par[_E11]
            nv1 = w1 * par[_E00] + w2 * par[_E01]
            nv2 = w1 * par[_E10] + w2 * par[_E11]
            return _wrap01(nd1), _wrap01(nd2), nv1, nv2, ok
    if direction > 0:
        return (_wrap01(2.0 * x + y), _wrap01(x + y),
                2.0 * v1 + v2, v1 + v2, True)
    return (_wrap01(x - y), _wrap01(-x + 2.0 * y),
            v1 - v2, -v1 + 2.0 * v2, True)


# ------------------------------------------------------------------ kernels

@njit(cache=True, nogil=True)
def _apply_kernel(P, direction, par, Cm, tol, out):
    nfail = 0
    for i in range(P.shape[0]):
        gx, gy, ok = _apply_point(P[i, 0], P[i, 1], direction, par, Cm, tol)
        out[i, 0] = gx
        out[i, 1] = gy
        if not ok:
            nfail += 1
    return nfail


@njit(cache=True, nogil=True)
def _orbit_kernel(P, nsteps, par, Cm, tol, out):
    nfail = 0
    for i in range(P.shape[0]):
        x = P[i, 0]
        y = P[i, 1]
        for j in range(nsteps):
            out[i, j, 0] = x
            out[i, j, 1] = y
            if j < nsteps - 1:
                x, y, ok = _apply_point(x, y, 1, par, Cm, tol)
                if not ok:
                    nfail += 1
    return nfail


@njit(cache=True, nogil=True)
def _lyap_kernel(P, V0, nsteps, direction, par, Cm, tol, sums, ends):
    nfail = 0
    for i in range(P.shape[0]):
        x = P[i, 0]
        y = P[i, 1]
        v1 = V0[i, 0]
        v2 = V0[i, 1]
        total = 0.0
        for _ in range(nsteps):
            x, y, v1, v2, ok = _push_point(x, y, v1, v2, direction, par, Cm, tol)
            if not ok:
                nfail += 1
            nrm = np.hypot(v1, v2)
            total += np.log(nrm)
            v1 /= nrm
            v2 /= nrm
        sums[i] = total
        ends[i, 0] = x
        ends[i, 1] = y
    return nfail


@njit(cache=True, nogil=True)
def _orbit_dirs_kernel(P, nsteps, burn, par, Cm, tol, dirs):
    """Unit unstable directions at G^0 x .. G^{nsteps-1} x, one cocycle push
    per step after the usual backward burn-in."""
    nfail = 0
    bx = np.empty(burn)
    by = np.empty(burn)
    for i in range(P.shape[0]):
        x = P[i, 0]
        y = P[i, 1]
        for j in range(burn):
            x, y, ok = _apply_point(x, y, -1, par, Cm, tol)
            if not ok:
                nfail += 1
            bx[j] = x
            by[j] = y
        v1 = par[_E00]
        v2 = par[_E10]
        for j in range(burn - 1, -1, -1):
            _, _, v1, v2, ok = _push_point(bx[j], by[j], v1, v2, 1, par, Cm, tol)
            if not ok:
                nfail += 1
            nrm = np.hypot(v1, v2)
            v1 /= nrm
            v2 /= nrm
        x = P[i, 0]
        y = P[i, 1]
        for j in range(nsteps):
            dirs[i, j, 0] = v1
            dirs[i, j, 1] = v2
            if j < nsteps - 1:
                x, y, v1, v2, ok = _push_point(x, y, v1, v2, 1, par, Cm, tol)
                if not ok:
                    nfail += 1
                nrm = np.hypot(v1, v2)
                v1 /= nrm
                v2 /= nrm
    return nfail


@njit(cache=True, nogil=True)
def _unstable_kernel(P, burn, par, Cm, tol, out):
    nfail = 0
    n = P.shape[0]
    bx = np.empty(burn)
    by = np.empty(burn)
    for i in range(n):
        x = P[i, 0]
        y = P[i, 1]
        for j in range(burn):
            x, y, ok = _apply_point(x, y, -1, par, Cm, tol)
            if not ok:
                nfail += 1
            bx[j] = x
            by[j] = y
        v1 = par[_E00]
        v2 = par[_E10]
        for j in range(burn - 1, -1, -1):
            _, _, v1, v2, ok = _push_point(bx[j], by[j], v1, v2, 1, par, Cm, tol)
            if not ok:
                nfail += 1
            nrm = np.hypot(v1, v2)
            v1 /= nrm
            v2 /= nrm
        out[i, 0] = v1
        out[i, 1] = v2
    return nfail


@njit(cache=True, nogil=True)
def _stable_kernel(P, burn, par, Cm, tol, out):
    nfail = 0
    n = P.shape[0]
    fx = np.empty(burn)
    fy = np.empty(burn)
    for i in range(n):
        x = P[i, 0]
        y = P[i, 1]
        for j in range(burn):
            fx[j] = x
            fy[j] = y
            x, y, ok = _apply_point(x, y, 1, par, Cm, tol)
            if not ok:
                nfail += 1
        # pull the stable unit vector back along the forward orbit
        v1 = -par[_E01]
        v2 = -par[_E11]
        # starting tangent at G^burn(x0); walk indices burn-1 .. 0 applying
        # DG^{-1} at G^{j+1}(x0), whose base point is stored at... the orbit
        # array holds G^j(x0); DG^{-1} must be evaluated at G^{j+1}(x0),
        # which is apply(fx[j], fy[j]) = the next stored point (or (x, y)
        # computed above for j = burn-1).
        cx = x
        cy = y
        for j in range(burn - 1, -1, -1):
            _, _, v1, v2, ok = _push_point(cx, cy, v1, v2, -1, par, Cm, tol)
            if not ok:
                nfail += 1
            nrm = np.hypot(v1, v2)
            v1 /= nrm
            v2 /= nrm
            cx = fx[j]
            cy = fy[j]
        out[i, 0] = v1
        out[i, 1] = v2
    return nfail


@njit(cache=True, nogil=True)
def _birkhoff_kernel(P, nmax, burn, par, Cm, tol, S, orbit32):
    """Birkhoff sums of the geometric potential and the orbit positions.

    S[i, n] = sum_{j < n} -log ||DG(G^j x_i) u(G^j x_i)||, n = 0..nmax,
    with u the unstable direction obtained by a burn-in backward push.
    orbit32[i, j] stores G^j(x_i) for j < nmax.
    """
    nfail = 0
    n = P.shape[0]
    bx = np.empty(burn)
    by = np.empty(burn)
    for i in range(n):
        x = P[i, 0]
        y = P[i, 1]
        for j in range(burn):
            x, y, ok = _apply_point(x, y, -1, par, Cm, tol)
            if not ok:
                nfail += 1
            bx[j] = x
            by[j] = y
        v1 = par[_E00]
        v2 = par[_E10]
        for j in range(burn - 1, -1, -1):
            _, _, v1, v2, ok = _push_point(bx[j], by[j], v1, v2, 1, par, Cm, tol)
            if not ok:
                nfail += 1
            nrm = np.hypot(v1, v2)
            v1 /= nrm
            v2 /= nrm
        x = P[i, 0]
        y = P[i, 1]
        acc = 0.0
        S[i, 0] = 0.0
        for j in range(nmax):
            orbit32[i, j, 0] = x
            orbit32[i, j, 1] = y
            x, y, v1, v2, ok = _push_point(x, y, v1, v2, 1, par, Cm, tol)
            if not ok:
                nfail += 1
            nrm = np.hypot(v1, v2)
            acc -= np.log(nrm)
            v1 /= nrm
            v2 /= nrm
            S[i, j + 1] = acc
    return nfail


# ------------------------------------------------------------------ wrappers

def _check(nfail: int, what: str):
    if nfail:
        raise IntegratorError(f"{nfail} flow events failed step control in {what}")


def get_ctx(kmap: KatokMap) -> EngineCtx:
    """Per-map context, built once and cached on the map instance."""
    ctx = getattr(kmap, "_engine_ctx", None)
    if ctx is None:
        ctx = make_ctx(kmap)
        kmap._engine_ctx = ctx
    return ctx


def apply_batch(ctx: EngineCtx, P, direction=1, tol=None) -> np.ndarray:
    tol = STRICT_TOL if tol is None else tol
    P = np.ascontiguousarray(P, dtype=np.float64)
    out = np.empty_like(P)
    _check(_apply_kernel(P, direction, ctx.par, ctx.Cm, tol, out), "apply")
    return out


def orbit_table(ctx: EngineCtx, P, nsteps: int, tol=None,
                dtype=np.float32) -> np.ndarray:
    """(N, nsteps, 2) array of iterates G^0 .. G^{nsteps-1} per start point."""
    tol = STRICT_TOL if tol is None else tol
    P = np.ascontiguousarray(P, dtype=np.float64)
    out = np.empty((P.shape[0], nsteps, 2), dtype=dtype)
    _check(_orbit_kernel(P, nsteps, ctx.par, ctx.Cm, tol, out), "orbit")
    return out


def lyapunov_sums(ctx: EngineCtx, P, nsteps: int, direction=1, V0=None, tol=None):
    """Accumulated log-expansion of a pushed tangent vector and the orbit end.

    direction=-1 runs the backward cocycle; V0 overrides the seed vector
    (default: expanding eigendirection forward, contracting one backward).
    """
    tol = BULK_TOL if tol is None else tol
    P = np.ascontiguousarray(P, dtype=np.float64)
    if V0 is None:
        e = np.array([ctx.par[_E00], ctx.par[_E10]]) if direction > 0 else \
            np.array([ctx.par[_E01], ctx.par[_E11]])
        V0 = np.broadcast_to(e, P.shape)
    V0 = np.ascontiguousarray(V0, dtype=np.float64)
    sums = np.empty(P.shape[0])
    ends = np.empty_like(P)
    _check(_lyap_kernel(P, V0, nsteps, direction, ctx.par, ctx.Cm, tol,
                        sums, ends), "lyapunov")
    return sums, ends


def orbit_directions(ctx: EngineCtx, P, nsteps: int, burn: int = 48,
                     tol=None) -> np.ndarray:
    """(N, nsteps, 2) unit unstable directions along each forward orbit."""
    tol = STRICT_TOL if tol is None else tol
    P = np.ascontiguousarray(P, dtype=np.float64)
    out = np.empty((P.shape[0], nsteps, 2))
    _check(_orbit_dirs_kernel(P, nsteps, burn, ctx.par, ctx.Cm, tol, out),
           "orbit directions")
    return out


def unstable_directions(ctx: EngineCtx, P, burn: int = 48, tol=None) -> np.ndarray:
    tol = STRICT_TOL if tol is None else tol
    P = np.ascontiguousarray(P, dtype=np.float64)
    out = np.empty_like(P)
    _check(_unstable_kernel(P, burn, ctx.par, ctx.Cm, tol, out), "unstable")
    return out


def stable_directions(ctx: EngineCtx, P, burn: int = 48, tol=None) -> np.ndarray:
    tol = STRICT_TOL if tol is None else tol
    P = np.ascontiguousarray(P, dtype=np.float64)
    out = np.empty_like(P)
    _check(_stable_kernel(P, burn, ctx.par, ctx.Cm, tol, out), "stable")
    return out


def birkhoff_geo(ctx: EngineCtx, P, nmax: int, burn: int = 48, tol=None):
    """Birkhoff sums S_n (n = 0..nmax) of the geometric potential along each
    orbit, plus the float32 orbit table used for separation tests."""
    tol = STRICT_TOL if tol is None else tol
    P = np.ascontiguousarray(P, dtype=np.float64)
    S = np.empty((P.shape[0], nmax + 1))
    orbit32 = np.empty((P.shape[0], nmax, 2), dtype=np.float32)
    _check(_birkhoff_kernel(P, nmax, burn, ctx.par, ctx.Cm, tol, S, orbit32),
           "birkhoff")
    return S, orbit32
