"""Equilibria of reaction-diffusion systems constrained to the nonnegative cone.

Pieces: a small expression grammar for piecewise reaction fields, finite
difference diffusion operators with cached resolvents, orthant cone geometry,
set-valued regularization of discontinuous fields, spectral certificates for
degree jumps, and fixed-point degree computations with an existence pipeline
on top.
"""

from .cones import ConstraintCone
from .degree import (
    DegreeReport,
    ExistenceReport,
    Hypothesis,
    Problem,
    SolveReport,
    SolverConfig,
    brouwer_degree_bruteforce,
    degree_at_infinity,
    degree_at_zero,
    degree_eigen_ray,
    degree_linear,
    degree_normalization,
    existence_pipeline,
    ls2_condition_check,
    multistart_solve,
    primitive_solution_check,
    resolvent_fixed_point_solve,
)
from .exprfield import (
    DomainError,
    FieldExpr,
    JumpDescriptor,
    ParseError,
    eval_field,
    eval_field_batch,
    fields_equal,
    format_field,
    jump_points,
    parse_field,
)
from .operators import (
    DiscreteOperator,
    EigenPair,
    GridSpec,
    laplacian_dirichlet,
    principal_eigenpair,
    resolvent,
    shifted_resolvent,
)
from .setvalued import (
    SetValuedField,
    epsilon_tangent_approximation,
    filippov,
    interval_field,
    inverse_map,
    krasowski,
    nemytskii,
    pointwise,
    separating_field,
    tangent_selection,
    weak_tangency_check,
)
from .spectral import (
    ReactionMatrices,
    SpectralCertificate,
    certificate,
    sigma_plus,
    spectral_abscissa,
)

__all__ = [
    "ConstraintCone",
    "DegreeReport",
    "DiscreteOperator",
    "DomainError",
    "EigenPair",
    "ExistenceReport",
    "FieldExpr",
    "GridSpec",
    "Hypothesis",
    "JumpDescriptor",
    "ParseError",
    "Problem",
    "ReactionMatrices",
    "SetValuedField",
    "SolveReport",
    "SolverConfig",
    "SpectralCertificate",
    "brouwer_degree_bruteforce",
    "certificate",
    "degree_at_infinity",
    "degree_at_zero",
    "degree_eigen_ray",
    "degree_linear",
    "degree_normalization",
    "epsilon_tangent_approximation",
    "eval_field",
    "eval_field_batch",
    "existence_pipeline",
    "fields_equal",
    "filippov",
    "format_field",
    "interval_field",
    "inverse_map",
    "jump_points",
    "krasowski",
    "laplacian_dirichlet",
    "ls2_condition_check",
    "multistart_solve",
    "nemytskii",
    "parse_field",
    "pointwise",
    "primitive_solution_check",
    "principal_eigenpair",
    "resolvent",
    "resolvent_fixed_point_solve",
    "separating_field",
    "shifted_resolvent",
    "sigma_plus",
    "spectral_abscissa",
    "tangent_selection",
    "weak_tangency_check",
]

__version__ = "0.1.0"
