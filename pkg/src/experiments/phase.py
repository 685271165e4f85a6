from typing import Dict, List, Optional, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging

from tqdm import tqdm

# Conditional imports for different execution contexts
try:
    from ..schema import DriftKind, ExperimentConfig
    from ..simulator import derive_seed
    from .steering import run_steering, steering_advantage
except ImportError:
    from schema import DriftKind, ExperimentConfig
    from simulator import derive_seed
    from experiments.steering import run_steering, steering_advantage

logger = logging.getLogger(__name__)


@dataclass
class PhasePoint:
    frequency: float
    entropy_coef: float
    r_stochastic: Optional[float] = None
    r_learned: Optional[float] = None
    cumulative_events: Dict[str, int] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class PhaseDiagram:
    frequencies: List[float]
    entropy_coefs: List[float]
    points: List[PhasePoint]

    def point(self, frequency: float, entropy_coef: float) -> Optional[PhasePoint]:
        for p in self.points:
            if p.frequency == frequency and p.entropy_coef == entropy_coef:
                return p
        return None

    def rows(self) -> List[Dict[str, object]]:
        return [
            {"f": p.frequency, "lambda_H": p.entropy_coef, "r_stochastic": p.r_stochastic,
             "r_learned": p.r_learned, "error": p.error or ""}
            for p in self.points
        ]


def point_config(cfg: ExperimentConfig, frequency: float, entropy_coef: float, index: int) -> ExperimentConfig:
    """Sinusoidal drift at ``frequency``, the given lambda_H, and a seed derived from the grid index"""
    return cfg.with_overrides(**{
        "seed": derive_seed(cfg.seed, "phase", index) >> 1,
        "noise.drift.kind": DriftKind.SINUSOID.value,
        "noise.drift.frequency": frequency,
        "agent.entropy_coef": entropy_coef,
        "threads": 1,
    })


def run_phase_diagram(
    cfg: ExperimentConfig,
    f_list: Sequence[float],
    lambda_list: Sequence[float],
    quiet: bool = False,
) -> PhaseDiagram:
    if not f_list or not lambda_list:
        raise ValueError("frequency and entropy-coefficient lists must be non-empty")
    grid = [(float(f), float(lam)) for f in f_list for lam in lambda_list]

    def one(job) -> PhasePoint:
        index, (f, lam) = job
        point = PhasePoint(f, lam)
        try:
            trace = run_steering(point_config(cfg, f, lam, index), quiet=True)
            advantage = steering_advantage(trace)
            point.r_stochastic = advantage.r_stochastic
            point.r_learned = advantage.r_learned
            point.cumulative_events = {
                "fixed": advantage.n_fixed, "optimal": advantage.n_optimal,
                "stochastic": advantage.n_stochastic, "learned": advantage.n_learned,
            }
        except Exception as e:
            logger.error(f"Phase point f={f} lambda_H={lam} failed: {e}")
            point.error = str(e)
        return point

    jobs = list(enumerate(grid))
    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        points = list(tqdm(pool.map(one, jobs), total=len(jobs), desc="phase diagram", disable=quiet))
    logger.info(f"Phase diagram: {len(points)} points, {sum(p.error is not None for p in points)} failed")
    return PhaseDiagram([float(f) for f in f_list], [float(lam) for lam in lambda_list], points)
