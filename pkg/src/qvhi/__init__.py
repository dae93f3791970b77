"""Solvers and oracles for elliptic quasi-variational-hemivariational inequalities."""

from .errors import ConvergenceError, ProblemDataError, QVHIError
from .hilbert import (GramSpace, LinearMap, NonlinearOperator, estimate_constants, inner,
                      linear_operator, operator_norm, read_matrix, riesz, write_matrix)
from .convex import (Box, ConstraintSet, ConvexFunction, GroupL1Ball, HalfSpace, Intersection,
                     NormBall, RadialConstraintFamily, SeminormBall, SeparableConvex, WholeSpace,
                     box_set, composite_prox, constraint_set_at, weighted_l1, weighted_quadratic,
                     zero_function)
from .clarke import (LocallyLipschitz1D, SuperpositionFunctional, h0_directional,
                     interval_subdifferential, j0_directional, named_potential,
                     radial_retraction, relaxed_monotonicity_witness, subgradient_select,
                     truncated_F)
from .vi import (VIInstance, VISolution, VISolverConfig, elementary_bound, minty_check,
                 perturbation_experiment, solve_vi, vi_residual)
from .solver import (APrioriBounds, OuterConfig, QVHIProblem, QVHISolution, a_priori_bounds,
                     auxiliary_solve, brute_force_qvhi, check_smallness, qvhi_residual,
                     sample_solution_set, solve_qvhi, verify_inequality, zero_superposition)

__version__ = "0.1.0"
