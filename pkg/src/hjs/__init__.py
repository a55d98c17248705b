"""Variational toolkit for Hamilton-Jacobi fundamental solutions,
Lax-Oleinik sup/inf-convolutions, propagation of singularities along
generalized characteristics, and nonsmooth mountain-pass critical points
of the barrier function."""

__version__ = "0.1.0"

from .action import (ActionResult, Curve, action_derivatives,
                     apriori_velocity_bound, equi_lipschitz_check,
                     localization_radius, minimize_action, verify_convexity)
from .characteristics import (CharacteristicTrace, inclusion_defect,
                              initial_velocity_check, noncriticality_check,
                              propagate_singularity)
from .model import (HamiltonianView, LagrangianModel, check_tonelli,
                    eval_lagrangian, legendre)
from .mountainpass import (BarrierProblem, MountainPassResult, barrier_eval,
                           classify_dichotomy, global_minimizers, mountain_pass)
from .operators import (ConvolutionResult, gradient_limit_p0, inf_convolve,
                        lasry_lions_field, sup_convolve, verify_P3, verify_P5)
from .semiconcave import (SemiconcaveFn, Superdifferential,
                          estimate_superdifferential, is_singular,
                          minimal_energy_covector, semiconcavity_check,
                          viscosity_check)

__all__ = [
    "ActionResult", "BarrierProblem", "CharacteristicTrace",
    "ConvolutionResult", "Curve", "HamiltonianView", "LagrangianModel",
    "MountainPassResult", "SemiconcaveFn", "Superdifferential",
    "action_derivatives", "apriori_velocity_bound", "barrier_eval",
    "check_tonelli", "classify_dichotomy", "equi_lipschitz_check",
    "estimate_superdifferential", "eval_lagrangian", "global_minimizers",
    "gradient_limit_p0", "inclusion_defect", "inf_convolve",
    "initial_velocity_check", "is_singular", "lasry_lions_field", "legendre",
    "localization_radius", "minimal_energy_covector", "minimize_action",
    "mountain_pass", "noncriticality_check", "propagate_singularity",
    "semiconcavity_check", "sup_convolve", "verify_P3", "verify_P5",
    "verify_convexity", "viscosity_check",
]
