"""
Experiment Harness Package

Steering, phase-diagram, scaling, gradient-relation, recovery and PSD
experiments built on the circuit, simulator, agent and decoder modules.
"""

from .profiles import ProfileManager, profile_manager, ExperimentProfile
from .common import ExperimentContext, build_context, train_agent
from .steering import (
    ScenarioTrace, SteeringAdvantage, run_steering, steering_advantage,
    normalize_by_reference, normalized_improvement, fit_step_response, measure_step_response,
)
from .phase import PhaseDiagram, PhasePoint, run_phase_diagram
from .scaling import GammaFit, ScalingResult, fit_gamma, lambda_estimates, lambda_ratio, run_scaling
from .gradcheck import GradientRelation, ResolutionError, run_gradient_relation_check
from .recovery import RecoveryResult, SpoilingError, run_finetune, run_randomized_recovery
from .psd import PSDResult, analyze_psd

__all__ = [
    'ProfileManager',
    'profile_manager',
    'ExperimentProfile',
    'ExperimentContext',
    'build_context',
    'train_agent',
    'ScenarioTrace',
    'SteeringAdvantage',
    'run_steering',
    'steering_advantage',
    'normalize_by_reference',
    'normalized_improvement',
    'fit_step_response',
    'measure_step_response',
    'PhaseDiagram',
    'PhasePoint',
    'run_phase_diagram',
    'GammaFit',
    'ScalingResult',
    'fit_gamma',
    'lambda_estimates',
    'lambda_ratio',
    'run_scaling',
    'GradientRelation',
    'ResolutionError',
    'run_gradient_relation_check',
    'RecoveryResult',
    'SpoilingError',
    'run_finetune',
    'run_randomized_recovery',
    'PSDResult',
    'analyze_psd',
]
