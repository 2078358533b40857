"""Numerical laboratory for stationary mean-field-game boundary inverse problems.

Forward solves of the coupled HJB/KFP system, full and partial
Dirichlet-to-Neumann measurement models, higher-order linearization, CGO
probes, and the Fourier-space recovery of the discount fields and
cost-series coefficients.
"""

__version__ = "0.1.0"

from .errors import (
    AmplitudeInvalid, FrequencyUnresolved, MfgLabError, NonConvergence,
    ParameterError, PositivityFloor, PositivityViolation, RankDeficient,
    SingularOperator, SupportViolation,
)
from .field import (
    BoundaryRegion, BoundaryTrace, Grid, ScalarField, boundary_region,
    constant_field, constant_trace, field_from_function, l2_norm,
    load_field_csv, make_grid, normal_derivative, save_field_csv,
    trace_from_function,
)
from .elliptic import (
    DiscreteOperator, LinearEllipticProblem, apply_operator,
    min_eigen_estimate, solve_linear,
)
from .mfg_forward import (
    FSeries, MfgCoefficients, MfgSolution, NewtonOptions, evaluate_F,
    mfg_residual, solve_mfg,
)
from .dn_map import (
    BoundaryBasis, DnMatrix, PartialDataSpec, compress, default_partial_spec,
    evaluate_dn, evaluate_partial_dn, flux_trace, linearized_dn_matrix,
    trig_basis,
)
from .linearize import (
    EpsFamily, LinearizationResult, fd_derivative, first_order,
    linearize_family, positivity_margin, second_order, third_order,
)
from .cgo import (
    CgoParams, CgoSolution, build_cgo, build_vanishing_cgo, min_resolved_h,
    orthogonal_triplet, runge_approximate,
)
from .reconstruct import (
    FourierData, ReconstructionOptions, ReconstructionResult,
    cone_fourier_data, extract_fourier, invert_fourier,
    make_linear_dn_oracle, make_partial_dn_oracle, make_second_order_oracle,
    make_third_order_oracle, reconstruct_F2, reconstruct_F3,
    reconstruct_coefficient,
)
