"""Galerkin POD in space x polynomial-chaos product spaces."""

__version__ = "0.1.0"

__all__ = [
    "MassFactor",
    "ParametricModel",
    "PodBasis",
    "QuadratureRule",
    "UniformMeasure",
    "UqResult",
    "analytic_reference",
    "build_reduced_model",
    "convdiff_model",
    "cycle",
    "gauss_rule",
    "kron",
    "lagrange_eval",
    "mass_factor",
    "mass_matrix",
    "matricize_mode1",
    "mode_product",
    "monte_carlo",
    "pce_sweep",
    "pod_basis",
    "project",
    "projection_error_bound",
    "random_snapshot_pod",
    "reduce",
    "solve_reduced",
    "statistics",
    "tensor_grid",
    "toy1d_model",
    "toy2d_model",
    "unvec",
    "vec",
    "weighted_norm",
    "weighted_norm_cycled",
]

from .tensor import cycle, kron, matricize_mode1, mode_product, unvec, vec
from .quadrature import (
    MassFactor,
    QuadratureRule,
    UniformMeasure,
    gauss_rule,
    lagrange_eval,
    mass_factor,
    mass_matrix,
    tensor_grid,
)
from .pod import (
    PodBasis,
    pod_basis,
    project,
    projection_error_bound,
    reduce,
    weighted_norm,
    weighted_norm_cycled,
)
from .models import (
    ParametricModel,
    analytic_reference,
    convdiff_model,
    toy1d_model,
    toy2d_model,
)
from .uq import (
    UqResult,
    build_reduced_model,
    monte_carlo,
    pce_sweep,
    random_snapshot_pod,
    solve_reduced,
    statistics,
)
