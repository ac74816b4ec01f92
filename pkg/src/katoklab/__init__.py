"""katoklab: a numerical laboratory for the Katok map.

A nonuniformly hyperbolic area-preserving surface map is built by slowing
the linear automorphism [[2, 1], [1, 1]] of the torus near its fixed point
and conjugating the result back to an area-preserving system.  The package
constructs the map and its derivative cocycle, estimates topological
pressure of the geometric potential family from (n, delta)-separated sets,
and derives equilibrium diagnostics from the pressure curve: Gibbs ratios,
large-deviation rate functions, and the Lyapunov multifractal spectrum.
"""

from .geometry import (
    CHART_RADIUS,
    ChartOverflowError,
    EigenVec2,
    TorusPoint,
    bowen_dist,
    bowen_dist_batch,
    eigenframe,
    from_chart,
    from_eigen,
    to_chart,
    to_eigen,
    torus_dist,
    torus_dist_batch,
    wrap01,
    wrap_half,
)
from .katok_map import A_INV, A_MATRIX, IntegratorError, KatokMap, LingerResult
from .params import LAMBDA, PRESETS, MapParams, beta_slope, make_params, preset_params
from .profiles import SlowProfile

__version__ = "0.1.0"

__all__ = [
    "CHART_RADIUS",
    "ChartOverflowError",
    "EigenVec2",
    "TorusPoint",
    "bowen_dist",
    "bowen_dist_batch",
    "eigenframe",
    "from_chart",
    "from_eigen",
    "to_chart",
    "to_eigen",
    "torus_dist",
    "torus_dist_batch",
    "wrap01",
    "wrap_half",
    "A_INV",
    "A_MATRIX",
    "IntegratorError",
    "KatokMap",
    "LingerResult",
    "LAMBDA",
    "PRESETS",
    "MapParams",
    "beta_slope",
    "make_params",
    "preset_params",
    "SlowProfile",
    "__version__",
]
