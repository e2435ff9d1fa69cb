"""Limiting head-right probabilities of a planar two-fold under small perturbations."""
from .core import (EscapeOutcome, Method, Outcome, PerturbationScale, RhoResult, Side,
                   TwoFoldParams, dual_params, rho_hysteresis_closed_form, vector_field)

__version__ = "0.1.0"

__all__ = [
    "EscapeOutcome", "Method", "Outcome", "PerturbationScale", "RhoResult", "Side",
    "TwoFoldParams", "dual_params", "rho_hysteresis_closed_form", "vector_field",
]
