"""Hermite-Galerkin toolkit for linear SPDEs driven by diffusion operators.

Modules: ``basis`` (Hermite functions, quadrature, ladder algebra),
``sobolev`` (Hermite-Sobolev norms), ``coefficients`` (coefficient family),
``operators`` (L, A and adjoint form), ``monotonicity`` (empirical
monotonicity checks), ``evolution`` (PDE/SPDE time stepping), ``sde_flow``
(stochastic flow representation) and ``harness`` (configs, reports, CLI).
"""
from .basis import (AliasingError, HermiteExpansion, MultiIndex, QuadratureRule, analyze, apply_derivative,
                    apply_monomial_derivative, apply_position, eval_hermite, gauss_hermite, hermite_functions,
                    synthesize)
from .coefficients import CoefficientFunction, DerivativeOrderError, FamilyError, coefficient
from .evolution import (BrownianPath, EnsembleResult, PdeTrajectory, SolverError, SpdeTrajectory, ensemble_mean,
                        solve_pde, solve_spde, step_deterministic, step_stochastic, translation_oracle)
from .harness import ExperimentConfig, ExperimentReport, replay, run, validate
from .monotonicity import (MonotonicityReport, estimate_constant, monotonicity_lhs, monotonicity_ratio,
                           multiindex_order_reduction_check, order_reduction_check)
from .operators import (ConversionError, OperatorMatrix, OperatorSpec, adjoint_equivalence_check,
                        adjoint_to_standard, apply_A, apply_L, assemble, multiply_field)
from .sde_flow import PairingResult, SdeTrajectory, euler_maruyama, flow_pairing, mc_pairing
from .sobolev import (DecaySampler, EquivalenceReport, equivalence_sweep, hs_norm_sq, new_inner, new_norm,
                      old_norm)

__version__ = "0.1.0"
