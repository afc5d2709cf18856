"""Statistical model checking of stochastic oscillators with HASL.

Stochastic Petri nets are synchronised with linear hybrid automata, and
HASL target expressions are estimated over the accepted trajectories. The
period and peak automata measure noisy oscillations such as the circadian
clock shipped in :mod:`hasl_osc.models`.
"""

from .desp import DelayLaw, GspnModel, ModelError, Transition, load_model, save_model, simulate
from .expr import ExpressionError
from .hasl import (
    CiPolicy, EstimationFailure, EstimationReport, bin_index, estimate, estimate_joint,
    evaluate_path, parse_expression,
)
from .kernel import CompiledProduct, trajectory_seed
from .lha import AutomatonError, DeterminismFault, Lha, check_determinism, load_lha, save_lha
from .models import CircadianRates, circadian, erlang, gene_expression, transcription_counter
from .oscillation import (
    PeaksParams, PeriodParams, build_Amax, build_Apeaks, build_Aper, classify_events, offline_peaks,
    offline_periods, pilot_peaks, update_fluctuation, update_mean,
)
from .sync import ResourceBudget, SyncOutcome, replay, synchronize

__version__ = "0.1.0"

__all__ = [
    "AutomatonError", "CiPolicy", "CircadianRates", "CompiledProduct", "DelayLaw", "DeterminismFault",
    "EstimationFailure", "EstimationReport", "ExpressionError", "GspnModel", "Lha", "ModelError",
    "PeaksParams", "PeriodParams", "ResourceBudget", "SyncOutcome", "Transition", "bin_index",
    "build_Amax", "build_Apeaks", "build_Aper", "check_determinism", "circadian", "classify_events",
    "erlang", "estimate", "estimate_joint", "evaluate_path", "gene_expression", "load_lha",
    "load_model", "offline_peaks", "offline_periods", "parse_expression", "pilot_peaks", "replay",
    "save_lha", "save_model", "simulate", "synchronize", "trajectory_seed", "transcription_counter",
    "update_fluctuation", "update_mean",
]
