"""
Scaling study: train from a random above-threshold start on the drift-free
model for every (d, P), track the per-cycle LER of mu(t), and turn it into
Lambda(t) point estimates against a fitted (Lambda*, eps_L*) reference.
"""

from typing import Dict, List, Optional, Sequence
from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy import stats

# Conditional imports for different execution contexts
try:
    from ..decoder import average_physical_error_rate, fit_lambda_reference, lambda_point_estimate
    from ..noise_model import ErrorModel, optimal_policy, random_policy
    from ..schema import DriftKind, ExperimentConfig, ScalingSpec
    from ..simulator import derive_seed
    from .common import build_context, train_agent
except ImportError:
    from decoder import average_physical_error_rate, fit_lambda_reference, lambda_point_estimate
    from noise_model import ErrorModel, optimal_policy, random_policy
    from schema import DriftKind, ExperimentConfig, ScalingSpec
    from simulator import derive_seed
    from experiments.common import build_context, train_agent

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GammaFit:
    gamma_fd: float
    gamma_exp: float
    ci_low: float
    ci_high: float
    r_squared: float
    flagged: bool = False


_UNDEFINED_GAMMA = GammaFit(math.nan, math.nan, math.nan, math.nan, math.nan, flagged=True)


def fit_gamma(
    times: Sequence[float],
    lambdas: Sequence[float],
    lambda_star: float,
    skip: int = 0,
    confidence: float = 0.95,
) -> GammaFit:
    """Convergence rate of d(Lambda/Lambda*)/dt = gamma (1 - Lambda/Lambda*).

    Reports the finite-difference regression through the origin and the
    log-linear fit of (Lambda* - Lambda)/Lambda* ~ exp(-gamma t), with the
    confidence interval and R^2 of the latter.
    """
    t = np.asarray(times, dtype=np.float64)[skip:]
    x = np.asarray(lambdas, dtype=np.float64)[skip:] / lambda_star
    keep = np.isfinite(x)
    t, x = t[keep], x[keep]
    if t.size < 3:
        logger.warning("gamma fit needs at least 3 finite points")
        return _UNDEFINED_GAMMA

    y = 1.0 - x
    dx = np.gradient(x, t)
    denom = float(np.sum(y * y))
    gamma_fd = float(np.sum(y * dx) / denom) if denom > 0 else math.nan

    positive = y > 0
    if positive.sum() < 3 or np.ptp(t[positive]) == 0:
        logger.warning("gamma fit: trace has no gap to Lambda*; flagged")
        return GammaFit(gamma_fd, math.nan, math.nan, math.nan, math.nan, flagged=True)
    fit = stats.linregress(t[positive], np.log(y[positive]))
    gamma = -float(fit.slope)
    n = int(positive.sum())
    if n > 2:
        half = float(stats.t.ppf(0.5 + confidence / 2.0, n - 2) * fit.stderr)
    else:
        half = math.inf
    flagged = not gamma > 0
    if flagged:
        logger.warning(f"gamma fit slope is non-positive ({gamma:.3g}); flagged")
    return GammaFit(gamma_fd, gamma, gamma - half, gamma + half, float(fit.rvalue ** 2), flagged)


def init_halfwidth(model: ErrorModel, spec: ScalingSpec) -> float:
    """Uniform half-width h giving mean excess P * mean(Omega) * h^2 / 3 = init_excess"""
    if spec.init_halfwidth is not None:
        return spec.init_halfwidth
    per_site = model.params_per_site * float(model.omega.mean())
    return math.sqrt(3.0 * spec.init_excess / per_site) if per_site > 0 else 1.0


@dataclass
class ScalingRun:
    d: int
    P: int
    P_tot: int
    halfwidth: float
    eps_L_star: float
    physical_error_rate: float
    epochs: List[int] = field(default_factory=list)
    eps_L: List[float] = field(default_factory=list)
    lambda_ratio: List[float] = field(default_factory=list)
    lambdas: List[float] = field(default_factory=list)
    gamma: Optional[GammaFit] = None


@dataclass
class ScalingResult:
    runs: List[ScalingRun]
    lambda_star: Dict[int, float]

    def rows(self) -> List[Dict[str, object]]:
        return [
            {"d": run.d, "P": run.P, "epoch": epoch, "eps_L": eps, "lambda": lam}
            for run in self.runs
            for epoch, eps, lam in zip(run.epochs, run.eps_L, run.lambdas)
        ]

    def summary(self) -> Dict[str, object]:
        return {
            "lambda_star": {str(P): v for P, v in self.lambda_star.items()},
            "runs": [
                {
                    "d": run.d, "P": run.P, "P_tot": run.P_tot, "eps_L_star": run.eps_L_star,
                    "physical_error_rate": run.physical_error_rate, "init_halfwidth": run.halfwidth,
                    "gamma": run.gamma.__dict__ if run.gamma else None,
                }
                for run in self.runs
            ],
        }


def lambda_ratio(eps_L: float, eps_L_star: float, d: int) -> float:
    """Lambda / Lambda* = (eps_L* / eps_L)^(2 / (d + 1)); nan when either rate is unresolved"""
    if eps_L <= 0 or eps_L_star <= 0:
        return math.nan
    return (eps_L_star / eps_L) ** (2.0 / (d + 1))


def lambda_estimates(run: ScalingRun, lambda_star: float) -> List[float]:
    """Lambda point estimate of every evaluation; nan where the run has no resolved logical error rate"""
    if run.eps_L_star <= 0:
        return [math.nan] * len(run.eps_L)
    return [
        lambda_point_estimate(eps, run.d, lambda_star, run.eps_L_star) if eps > 0 else math.nan
        for eps in run.eps_L
    ]


def run_scaling(
    cfg: ExperimentConfig,
    d_list: Optional[Sequence[int]] = None,
    P_list: Optional[Sequence[int]] = None,
    quiet: bool = False,
) -> ScalingResult:
    d_list = sorted(d_list or cfg.scaling.distances)
    P_list = list(P_list or cfg.scaling.params_per_site)
    if any(d < 3 or d % 2 == 0 for d in d_list):
        raise ValueError(f"distances must be odd and >= 3, got {d_list}")

    runs: List[ScalingRun] = []
    lambda_star: Dict[int, float] = {}
    for P in P_list:
        batch: List[ScalingRun] = []
        for d in d_list:
            cfg_dp = cfg.with_overrides(**{"d": d, "noise.params_per_site": P, "noise.drift.kind": DriftKind.NONE.value})
            ctx = build_context(cfg_dp)
            reference = ctx.evaluate(
                optimal_policy(ctx.model, 0.0), 0.0, cfg.scaling.reference_shots, derive_seed(cfg.seed, "scaling-reference", d, P)
            )
            h = init_halfwidth(ctx.model, cfg.scaling)
            mu0 = random_policy(ctx.model, h, derive_seed(cfg.seed, "scaling-init", d, P))
            logger.info(f"Scaling d={d} P={P}: P_tot={ctx.model.num_params}, h={h:.4g}, eps_L*={reference.eps_L:.4g}")
            _, history = train_agent(ctx, mu0, label=f"scale-d{d}-P{P}", quiet=quiet)
            evaluated = [e for e in history if "eps_L" in e]
            batch.append(ScalingRun(
                d=d, P=P, P_tot=ctx.model.num_params, halfwidth=h,
                eps_L_star=reference.eps_L,
                physical_error_rate=average_physical_error_rate(ctx.decoding_graph()),
                epochs=[int(e["epoch"]) for e in evaluated],
                eps_L=[float(e["eps_L"]) for e in evaluated],
            ))

        top = batch[-2:] if len(batch) >= 2 else batch
        star, _ = fit_lambda_reference([r.d for r in top], [r.eps_L_star for r in top])
        lambda_star[P] = star
        for run in batch:
            run.lambda_ratio = [lambda_ratio(eps, run.eps_L_star, run.d) for eps in run.eps_L]
            if math.isfinite(star):
                run.lambdas = lambda_estimates(run, star)
                run.gamma = fit_gamma(run.epochs, run.lambdas, star, skip=_skip(run, cfg))
            else:
                run.lambdas = [math.nan] * len(run.lambda_ratio)
                run.gamma = fit_gamma(run.epochs, run.lambda_ratio, 1.0, skip=_skip(run, cfg))
            logger.info(f"Scaling d={run.d} P={run.P}: gamma={run.gamma.gamma_exp:.4g} (R^2={run.gamma.r_squared:.3g})")
        runs += batch
    return ScalingResult(runs, lambda_star)


def _skip(run: ScalingRun, cfg: ExperimentConfig) -> int:
    """Evaluation points inside the initial transient"""
    return sum(1 for epoch in run.epochs if epoch < cfg.scaling.transient_epochs)
