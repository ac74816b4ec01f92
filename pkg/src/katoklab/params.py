"""Construction constants: validation, derived quantities, presets."""

from __future__ import annotations

import dataclasses
import math
import warnings

__all__ = ["MapParams", "make_params", "beta_slope", "PRESETS", "LAMBDA"]

LAMBDA = (3.0 + math.sqrt(5.0)) / 2.0


def beta_slope(alpha: float) -> float:
    """Invariant-cone slope beta = 2a / (2a + 1 + sqrt(4a + 1)) for a in (0, 1)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return 2.0 * alpha / (2.0 * alpha + 1.0 + math.sqrt(4.0 * alpha + 1.0))


@dataclasses.dataclass(frozen=True)
class MapParams:
    """All constants of the construction.

    alpha, r0, epsilon, ode_step, quad_tol are free; the rest are derived:
    r1 = r0*log(lam), beta the cone slope, gamma = (1+beta)/(1-beta),
    blend_lo = r0/2 the start of the profile blend.
    """

    alpha: float
    r0: float
    epsilon: float
    ode_step: float
    quad_tol: float
    lam: float
    r1: float
    beta: float
    gamma: float
    blend_lo: float

    @property
    def log_lam(self) -> float:
        return math.log(self.lam)

    @property
    def chi_radius(self) -> float:
        """Radius of the disc whose complement the indicator chi charges."""
        return 100.0 * self.gamma * self.epsilon + self.r1

    @property
    def flow_radius(self) -> float:
        """Every point the unit-time flow treats nonlinearly lies this close to 0."""
        return 1.05 * self.lam * self.r0

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["chi_radius"] = self.chi_radius
        d["flow_radius"] = self.flow_radius
        return d


def make_params(alpha: float = 0.1, r0: float = 0.01, epsilon: float = 0.01,
                ode_step: float = 1.0 / 16.0, quad_tol: float = 1e-10) -> MapParams:
    alpha = float(alpha)
    r0 = float(r0)
    epsilon = float(epsilon)
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")
    if not 0.0 < r0 < 1.0:
        raise ValueError(f"r0 must lie in (0, 1), got {r0}")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if r0 > epsilon:
        raise ValueError(f"r0 must not exceed epsilon (r0={r0}, epsilon={epsilon})")
    if ode_step <= 0.0 or ode_step > 1.0:
        raise ValueError("ode_step must lie in (0, 1]")
    if quad_tol <= 0.0:
        raise ValueError("quad_tol must be positive")
    if 500.0 * LAMBDA * epsilon >= 1.0:
        # The product-structure scale bookkeeping assumes 500*lam*eps < 1; the
        # pressure-scale preset deliberately runs outside that regime.
        warnings.warn(
            f"500*lambda*epsilon = {500.0 * LAMBDA * epsilon:.3g} >= 1; "
            "product-structure probes need a smaller epsilon",
            stacklevel=2,
        )
    beta = beta_slope(alpha)
    return MapParams(
        alpha=alpha,
        r0=r0,
        epsilon=epsilon,
        ode_step=float(ode_step),
        quad_tol=float(quad_tol),
        lam=LAMBDA,
        r1=r0 * math.log(LAMBDA),
        beta=beta,
        gamma=(1.0 + beta) / (1.0 - beta),
        blend_lo=0.5 * r0,
    )


# Two regimes: "pressure" for thermodynamic sweeps (epsilon at the slow-disc
# scale), "product" for local product-structure and decomposition probes
# (epsilon small enough that 500*lambda*epsilon < 1).
PRESETS = {
    "pressure": dict(alpha=0.1, r0=0.01, epsilon=0.01),
    "product": dict(alpha=0.1, r0=2e-4, epsilon=5e-4),
}


def preset_params(name: str, **overrides) -> MapParams:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return make_params(**kw)
