"""
Recovery from a spoiled policy, and fine-tuning from a slightly miscalibrated one.

Both train on the drift-free model and report when the decoded logical error
probability of mu(t) first comes within ``tolerance`` of the calibrated
reference policy p_opt.
"""

from typing import Dict, List, Optional, Tuple
from dataclasses import dataclass, field
import logging

import numpy as np

# Conditional imports for different execution contexts
try:
    from ..noise_model import optimal_policy
    from ..schema import DriftKind, ExperimentConfig
    from ..simulator import derive_seed
    from .common import ExperimentContext, build_context, dr_quartiles, train_agent
except ImportError:
    from noise_model import optimal_policy
    from schema import DriftKind, ExperimentConfig
    from simulator import derive_seed
    from experiments.common import ExperimentContext, build_context, dr_quartiles, train_agent

logger = logging.getLogger(__name__)


class SpoilingError(ValueError):
    """No offset along the spoiling direction reaches the target logical error probability"""


@dataclass
class RecoveryResult:
    label: str
    initial_p_err: float
    calibrated_p_err: float
    calibrated_quartiles: List[float]
    target_p_err: float
    history: List[Dict[str, object]] = field(default_factory=list)
    epochs_to_target: Optional[int] = None

    @property
    def evaluations(self) -> List[Dict[str, object]]:
        return [e for e in self.history if "p_err" in e]

    @property
    def final_p_err(self) -> float:
        evaluated = self.evaluations
        return float(evaluated[-1]["p_err"]) if evaluated else float("nan")

    @property
    def final_quartiles(self) -> List[float]:
        evaluated = self.evaluations
        return list(evaluated[-1]["dr_quartiles"]) if evaluated else []

    def summary(self) -> Dict[str, object]:
        return {
            "label": self.label,
            "initial_p_err": self.initial_p_err,
            "calibrated_p_err": self.calibrated_p_err,
            "target_p_err": self.target_p_err,
            "final_p_err": self.final_p_err,
            "epochs_to_target": self.epochs_to_target,
            "calibrated_dr_quartiles": self.calibrated_quartiles,
            "final_dr_quartiles": self.final_quartiles,
        }


def spoil_policy(
    ctx: ExperimentContext,
    reference: np.ndarray,
    seed: int,
    shots: int,
    low: float = 0.45,
    high: float = 0.5,
    max_steps: int = 40,
) -> Tuple[np.ndarray, float]:
    """Scale a random offset from ``reference`` until P_err lands in [low, high].

    The offset grows geometrically until P_err reaches ``low`` and is then
    bisected; every evaluation reuses one sampling seed so P_err is a
    deterministic function of the scale.
    """
    direction = np.random.default_rng(derive_seed(seed, "spoil-direction")).standard_normal(reference.size)
    direction /= np.sqrt(np.mean(direction ** 2))
    eval_seed = derive_seed(seed, "spoil-evaluation")

    def p_err(scale: float) -> float:
        return ctx.evaluate(reference + scale * direction, 0.0, shots, eval_seed).p_err

    lo, hi = 0.0, None
    scale = 0.1
    for step in range(max_steps):
        value = p_err(scale)
        logger.debug(f"Spoiling step {step}: scale={scale:.4g} P_err={value:.4f}")
        if low <= value <= high:
            logger.info(f"Spoiled policy at scale {scale:.4g}: P_err={value:.4f}")
            return reference + scale * direction, value
        if value < low:
            lo = scale
        else:
            hi = scale
        scale = scale * 2.0 if hi is None else 0.5 * (lo + hi)
    raise SpoilingError(f"could not reach P_err in [{low}, {high}] within {max_steps} evaluations")


def _reference(ctx: ExperimentContext, cfg: ExperimentConfig, label: str):
    p_ref = optimal_policy(ctx.model, 0.0)
    calibrated, rates = ctx.assess(p_ref, 0.0, cfg.evaluation.shots, derive_seed(cfg.seed, label, "reference"))
    return p_ref, calibrated.p_err, dr_quartiles(rates)


def _train(ctx: ExperimentContext, cfg: ExperimentConfig, label: str, start: np.ndarray,
           initial_p_err: float, calibrated: float, quartiles: List[float], quiet: bool) -> RecoveryResult:
    target = cfg.recovery.tolerance * calibrated
    _, history = train_agent(ctx, start, label=label, quiet=quiet)
    result = RecoveryResult(label, initial_p_err, calibrated, quartiles, target, history)
    for entry in result.evaluations:
        if entry["p_err"] <= target:
            result.epochs_to_target = int(entry["epoch"]) + 1
            break
    logger.info(f"{label}: P_err {initial_p_err:.4f} -> {result.final_p_err:.4f} "
                f"(calibrated {calibrated:.4f}), epochs to target: {result.epochs_to_target}")
    return result


def _drift_free(cfg: ExperimentConfig) -> ExperimentConfig:
    return cfg.with_overrides(**{"noise.drift.kind": DriftKind.NONE.value, "evaluation.decode": True})


def run_randomized_recovery(
    cfg: ExperimentConfig,
    quiet: bool = False,
    context: Optional[ExperimentContext] = None,
) -> RecoveryResult:
    cfg = _drift_free(cfg)
    ctx = context or build_context(cfg)
    p_ref, calibrated, quartiles = _reference(ctx, cfg, "recover")
    spec = cfg.recovery
    spoiled, initial = spoil_policy(
        ctx, p_ref, cfg.seed, cfg.evaluation.shots, spec.target_low, spec.target_high, spec.max_search_steps
    )
    return _train(ctx, cfg, "recover", spoiled, initial, calibrated, quartiles, quiet)


def run_finetune(
    cfg: ExperimentConfig,
    quiet: bool = False,
    context: Optional[ExperimentContext] = None,
) -> RecoveryResult:
    """RL from the calibrated policy plus a small residual miscalibration"""
    cfg = _drift_free(cfg)
    ctx = context or build_context(cfg)
    p_ref, calibrated, quartiles = _reference(ctx, cfg, "finetune")
    rng = np.random.default_rng(derive_seed(cfg.seed, "finetune-start"))
    start = p_ref + cfg.recovery.calibration_error * rng.standard_normal(p_ref.size)
    initial = ctx.evaluate(start, 0.0, cfg.evaluation.shots, derive_seed(cfg.seed, "finetune", "initial")).p_err
    return _train(ctx, cfg, "finetune", start, initial, calibrated, quartiles, quiet)
