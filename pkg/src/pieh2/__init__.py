"""H2 analysis, estimation and control of linear PDEs through Partial Integral Equations."""

from .gpde import GpdeSystem, PieSystem, convert_to_pie, validate_pie
from .piop import PIOperator, pi_add, pi_adjoint, pi_apply, pi_compose, pi_scale
from .polyalg import PolyMatrix
from .sim import discretize, simulate_ic
from .synth import (
    SynthesisResult,
    SynthOptions,
    h2_bound_dual,
    h2_bound_primal,
    h2_controller,
    h2_estimator,
    stability_lpi,
)

__version__ = "0.1.0"

__all__ = [
    "GpdeSystem", "PieSystem", "convert_to_pie", "validate_pie",
    "PIOperator", "pi_add", "pi_adjoint", "pi_apply", "pi_compose", "pi_scale",
    "PolyMatrix", "discretize", "simulate_ic",
    "SynthesisResult", "SynthOptions", "h2_bound_dual", "h2_bound_primal",
    "h2_controller", "h2_estimator", "stability_lpi",
]
