"""Concentrating solutions of a weighted, slightly subcritical Lane-Emden problem on annuli."""

__version__ = "0.1.0"

from ._validation import NumericalFailure
from .bubble import AnsatzConfig, Bubble, alpha, critical_exponent, weighted_amplitude
from .energy import (
                     EnergyExpansion,
                     ExpansionFitter,
                     GammaConstants,
                     assembled_coefficients,
                     energy,
                     fit_expansion,
                     gamma_constants,
                     gamma_constants_closed_form,
                     minimize_phi,
                     phi_double,
                     phi_single,
                     verify_lemmas,
)
from .green import project_bubble, regular_part
from .grid import AnnulusGeometry, MeridianField, MeridianGrid
from .solver import BranchSolver, BranchSpec, continue_in_eps, solve_branch
from .transform import BiradialLift, lift, meridian_map, sphere_extract, verify_correspondence

__all__ = [
    "AnnulusGeometry", "AnsatzConfig", "BiradialLift", "BranchSolver", "BranchSpec", "Bubble",
    "EnergyExpansion", "ExpansionFitter", "GammaConstants", "MeridianField", "MeridianGrid",
    "NumericalFailure", "alpha", "assembled_coefficients", "continue_in_eps", "critical_exponent",
    "energy", "fit_expansion", "gamma_constants", "gamma_constants_closed_form", "lift",
    "meridian_map", "minimize_phi", "phi_double", "phi_single", "project_bubble", "regular_part",
    "solve_branch", "sphere_extract", "verify_correspondence",
    "verify_lemmas", "weighted_amplitude",
]
