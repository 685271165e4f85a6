from typing import List, Optional
from dataclasses import dataclass
import logging
import math

import numpy as np
from tqdm import tqdm

# Conditional imports for different execution contexts
try:
    from ..noise_model import optimal_policy
    from ..schema import DriftKind, ExperimentConfig
    from ..simulator import derive_seed
    from .common import ExperimentContext, build_context
except ImportError:
    from noise_model import optimal_policy
    from schema import DriftKind, ExperimentConfig
    from simulator import derive_seed
    from experiments.common import ExperimentContext, build_context

logger = logging.getLogger(__name__)


class ResolutionError(ValueError):
    """Logical error rate too small to resolve at the configured shot count"""


@dataclass
class GradientRelation:
    d_log_c: np.ndarray
    d_log_eps: np.ndarray
    slope: float
    slope_stderr: float
    expected: float

    @property
    def num_points(self) -> int:
        return int(self.d_log_c.size)


def slope_through_origin(x: np.ndarray, y: np.ndarray):
    """Least-squares slope of y = a x and its standard error"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sxx = float(np.sum(x * x))
    if sxx == 0:
        return math.nan, math.nan
    slope = float(np.sum(x * y) / sxx)
    dof = x.size - 1
    if dof < 1:
        return slope, math.nan
    residual = y - slope * x
    return slope, float(math.sqrt(np.sum(residual ** 2) / dof / sxx))


def run_gradient_relation_check(
    cfg: ExperimentConfig,
    quiet: bool = False,
    context: Optional[ExperimentContext] = None,
) -> GradientRelation:
    """Finite differences of log C and log eps_L along random directions around a near-optimal policy"""
    spec = cfg.gradcheck
    if context is None:
        cfg = cfg.with_overrides(**{"noise.drift.kind": DriftKind.NONE.value})
        context = build_context(cfg)
    ctx = context
    n = ctx.model.num_params

    rng = np.random.default_rng(derive_seed(cfg.seed, "gradcheck-base"))
    base = optimal_policy(ctx.model, 0.0) + spec.base_offset * rng.standard_normal(n)

    xs: List[float] = []
    ys: List[float] = []
    for k in tqdm(range(spec.directions), desc="gradcheck", disable=quiet):
        direction = spec.delta * np.random.default_rng(derive_seed(cfg.seed, "gradcheck-direction", k)).standard_normal(n)
        if not np.any(direction):
            continue
        seed = derive_seed(cfg.seed, "gradcheck", k)
        plus, rates_plus = ctx.assess(base + direction, 0.0, spec.shots, seed)
        minus, rates_minus = ctx.assess(base - direction, 0.0, spec.shots, seed)
        fewest = min(plus.errors, minus.errors)
        if fewest < spec.min_logical_errors:
            raise ResolutionError(
                f"only {fewest} logical errors at {spec.shots} shots; increase gradcheck.shots "
                f"to resolve eps_L (need >= {spec.min_logical_errors})"
            )
        xs.append(math.log(rates_plus.mean()) - math.log(rates_minus.mean()))
        ys.append(math.log(plus.eps_L) - math.log(minus.eps_L))
        logger.debug(f"Direction {k}: dlogC={xs[-1]:.4g} dlogeps={ys[-1]:.4g}")

    x, y = np.array(xs), np.array(ys)
    slope, stderr = slope_through_origin(x, y)
    expected = (cfg.d + 1) / 2.0
    logger.info(f"Gradient relation: slope={slope:.4g} +/- {stderr:.2g} (expected {expected})")
    return GradientRelation(x, y, slope, stderr, expected)
