"""
Real-time steering runs.

Every epoch the agent's candidates are simulated for training (the stochastic
scenario), and the same cycle budget is spent on three reference policies
that share one sampling seed per epoch:

    fixed       mu(0), the t=0 optimum, never updated
    optimal     p_opt(t), tracks the drift exactly
    stochastic  the candidates themselves
    learned     mu(t) as it stood before this epoch's update
"""

from typing import Dict, List, Optional, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import json
import logging
import math

import numpy as np
from scipy.optimize import curve_fit
from tqdm import tqdm

# Conditional imports for different execution contexts
try:
    from ..agent import PolicyGradientAgent
    from ..noise_model import optimal_policy, physical_offsets, site_epsilons
    from ..results_store import ResultStore
    from ..schema import DriftKind, ExperimentConfig
    from ..simulator import count_events, derive_seed
    from .common import ExperimentContext, build_context
except ImportError:
    from agent import PolicyGradientAgent
    from noise_model import optimal_policy, physical_offsets, site_epsilons
    from results_store import ResultStore
    from schema import DriftKind, ExperimentConfig
    from simulator import count_events, derive_seed
    from experiments.common import ExperimentContext, build_context

logger = logging.getLogger(__name__)

SCENARIOS = ("fixed", "optimal", "stochastic", "learned")
REFERENCE = "reference"


@dataclass
class ScenarioTrace:
    """Per-epoch scenario metrics plus periodic decoded evaluations and cycle budgets"""
    records: List[Dict[str, object]] = field(default_factory=list)
    evaluations: List[Dict[str, float]] = field(default_factory=list)
    training_cycles: int = 0
    scenario_cycles: int = 0
    evaluation_cycles: int = 0
    step_t0: Optional[float] = None

    @property
    def epochs(self) -> List[int]:
        return [int(r["epoch"]) for r in self.records]

    def mean_dr(self, scenario: str) -> np.ndarray:
        return np.array([r["scenarios"][scenario]["mean_dr"] for r in self.records], dtype=np.float64)

    def events(self, scenario: str) -> np.ndarray:
        return np.array([r["scenarios"][scenario]["events"] for r in self.records], dtype=np.int64)

    def cumulative(self, scenario: str) -> int:
        return int(self.events(scenario).sum())

    def has(self, scenario: str) -> bool:
        return bool(self.records) and scenario in self.records[0]["scenarios"]

    def ler_series(self, scenario: str) -> np.ndarray:
        return np.array([e[f"eps_L_{scenario}"] for e in self.evaluations], dtype=np.float64)

    def mu_drift(self) -> np.ndarray:
        return np.array([r["mu_drift"] for r in self.records], dtype=np.float64)

    def to_dict(self) -> Dict[str, object]:
        return {
            "records": self.records,
            "evaluations": self.evaluations,
            "training_cycles": self.training_cycles,
            "scenario_cycles": self.scenario_cycles,
            "evaluation_cycles": self.evaluation_cycles,
            "step_t0": self.step_t0,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "ScenarioTrace":
        return cls(
            records=list(data["records"]),
            evaluations=list(data["evaluations"]),
            training_cycles=int(data["training_cycles"]),
            scenario_cycles=int(data["scenario_cycles"]),
            evaluation_cycles=int(data["evaluation_cycles"]),
            step_t0=data.get("step_t0"),
        )

    @classmethod
    def from_records(cls, records: Sequence[Dict[str, object]]) -> "ScenarioTrace":
        """Rebuild a trace from trace.jsonl lines; cycle budgets are not stored per line"""
        return cls(
            records=list(records),
            evaluations=[r["evaluation"] for r in records if "evaluation" in r],
        )


@dataclass(frozen=True)
class SteeringAdvantage:
    r_stochastic: Optional[float]
    r_learned: Optional[float]
    n_fixed: int
    n_optimal: int
    n_stochastic: int
    n_learned: int

    @property
    def defined(self) -> bool:
        return self.r_stochastic is not None


def normalized_improvement(n_fixed: float, n_optimal: float, n_other: float) -> Optional[float]:
    """(N_other - N_fixed) / (N_optimal - N_fixed); None when the denominator vanishes"""
    denominator = n_optimal - n_fixed
    if denominator == 0:
        return None
    return (n_other - n_fixed) / denominator


def steering_advantage(trace: ScenarioTrace) -> SteeringAdvantage:
    n = {s: trace.cumulative(s) for s in SCENARIOS}
    r_stochastic = normalized_improvement(n["fixed"], n["optimal"], n["stochastic"])
    r_learned = normalized_improvement(n["fixed"], n["optimal"], n["learned"])
    if r_stochastic is None:
        logger.warning("Fixed and optimal policies produced equal event counts; steering advantage undefined")
    return SteeringAdvantage(r_stochastic, r_learned, n["fixed"], n["optimal"], n["stochastic"], n["learned"])


def normalize_by_reference(trace: ScenarioTrace) -> Dict[str, np.ndarray]:
    """Scenario DR traces divided epoch-wise by the no-drift fixed-policy reference"""
    if not trace.has(REFERENCE):
        raise ValueError("trace has no reference scenario; run with normalize_by_reference enabled")
    reference = trace.mean_dr(REFERENCE)
    safe = np.where(reference > 0, reference, np.nan)
    return {s: trace.mean_dr(s) / safe for s in SCENARIOS}


@dataclass(frozen=True)
class StepResponse:
    tau: float
    amplitude: float
    baseline: float
    flagged: bool = False


def _step_model(t, amplitude, tau, baseline):
    return baseline + amplitude * (1.0 - np.exp(-t / tau))


def fit_step_response(epochs: Sequence[float], values: Sequence[float], t0: float) -> StepResponse:
    """Fit v(t) = b + a * (1 - exp(-(t - t0) / tau)) to the samples at t >= t0"""
    epochs = np.asarray(epochs, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    after = epochs >= t0
    if after.sum() < 3:
        raise ValueError("need at least 3 samples after the step to fit a response")
    t, v = epochs[after] - t0, values[after]
    before = values[~after]
    baseline = float(before.mean()) if before.size else float(v[0])
    p0 = (float(v[-1] - baseline) or 1e-6, max(float(t[-1]) / 4.0, 1.0), baseline)
    try:
        (amplitude, tau, base), _ = curve_fit(
            _step_model, t, v, p0=p0,
            bounds=([-np.inf, 1e-9, -np.inf], [np.inf, np.inf, np.inf]),
            maxfev=10_000,
        )
    except (RuntimeError, ValueError) as e:
        logger.warning(f"Step-response fit failed: {e}")
        return StepResponse(float("nan"), float("nan"), baseline, flagged=True)
    return StepResponse(float(tau), float(amplitude), float(base))


def measure_step_response(trace: ScenarioTrace) -> Optional[StepResponse]:
    """Response time of mu(t) on the drifting parameters; None unless the run used a STEP drift"""
    if trace.step_t0 is None:
        return None
    try:
        return fit_step_response(trace.epochs, trace.mu_drift(), trace.step_t0)
    except ValueError as e:
        logger.warning(f"No step response for this run: {e}")
        return StepResponse(math.nan, math.nan, math.nan, flagged=True)


def _drift_mean(ctx: ExperimentContext, mu: np.ndarray) -> float:
    mask = ctx.model.drifting_params()
    physical = physical_offsets(ctx.model, mu)
    return float(physical[mask].mean() if mask.any() else physical.mean())


def _restore(ctx: ExperimentContext, cfg: ExperimentConfig, store: Optional[ResultStore]):
    state = store.load_checkpoint() if store else None
    if state is None:
        return None, None
    agent = PolicyGradientAgent.from_checkpoint(ctx.graph, cfg.agent, state)
    trace = ScenarioTrace.from_dict(json.loads(str(state["trace"])))
    logger.info(f"Resuming from checkpoint at epoch {agent.epoch}")
    return agent, trace


def run_steering(
    cfg: ExperimentConfig,
    store: Optional[ResultStore] = None,
    resume: bool = False,
    quiet: bool = False,
    context: Optional[ExperimentContext] = None,
) -> ScenarioTrace:
    ctx = context or build_context(cfg)
    model = ctx.model
    B = cfg.agent.batch
    shots = cfg.shots_per_candidate
    T = cfg.cycles
    fixed = optimal_policy(model, 0.0)
    still = model.without_drift()

    agent, trace = _restore(ctx, cfg, store) if resume else (None, None)
    if agent is None:
        agent = PolicyGradientAgent(ctx.graph, cfg.agent, derive_seed(cfg.seed, "agent"), fixed)
        trace = ScenarioTrace()
        if cfg.noise.drift.kind == DriftKind.STEP:
            trace.step_t0 = float(cfg.noise.drift.t0)
        if store:
            store.reset_trace()
    elif store:
        store.rewrite_trace(trace.records)

    n_det = ctx.circuit.num_detectors
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in tqdm(range(agent.epoch, cfg.epochs), desc="steering", disable=quiet):
            t = float(epoch)
            thetas = agent.ask()
            mu_before = agent.learned_policy()
            seeds = [derive_seed(cfg.seed, "candidate", epoch, b) for b in range(B)]
            rewards, n_stochastic = ctx.candidate_rewards(thetas, t, seeds, pool)

            scenarios = {"stochastic": n_stochastic}
            seed = derive_seed(cfg.seed, "scenario", epoch)
            policies = [("fixed", model, fixed), ("optimal", model, optimal_policy(model, t)), ("learned", model, mu_before)]
            if cfg.normalize_by_reference:
                policies.append((REFERENCE, still, fixed))
            for name, m, p in policies:
                rec = ctx.simulator.run(B * shots, seed, site_eps=site_epsilons(m, t, p), flip_probs=ctx.flips, threads=cfg.threads)
                scenarios[name] = count_events(rec)

            stats = agent.tell(thetas, rewards)
            trace.training_cycles += B * shots * T
            trace.scenario_cycles += len(policies) * B * shots * T

            record = {
                "epoch": epoch,
                "mean_dr": float(-rewards.mean()),
                "entropy": stats["entropy"],
                "mu_norm": stats["mu_norm"],
                "sigma_mean": stats["sigma_mean"],
                "drift_t": t,
                "mu_drift": _drift_mean(ctx, agent.learned_policy()),
                "scenarios": {
                    name: {"events": n, "mean_dr": n / (B * shots * n_det)} for name, n in scenarios.items()
                },
            }

            spec = cfg.evaluation
            if spec.decode and (epoch + 1) % spec.every == 0:
                eval_seed = derive_seed(cfg.seed, "evaluation", epoch)
                learned = ctx.evaluate(agent.learned_policy(), t, spec.shots, eval_seed)
                reference = ctx.evaluate(fixed, t, spec.shots, eval_seed)
                trace.evaluation_cycles += 2 * spec.shots * T
                evaluation = {
                    "epoch": epoch,
                    "eps_L_learned": learned.eps_L,
                    "p_err_learned": learned.p_err,
                    "eps_L_fixed": reference.eps_L,
                    "p_err_fixed": reference.p_err,
                }
                trace.evaluations.append(evaluation)
                record["evaluation"] = evaluation

            trace.records.append(record)
            if store:
                store.append_trace(record)
                every = cfg.output.checkpoint_every
                if every and (epoch + 1) % every == 0:
                    checkpoint = agent.checkpoint_state()
                    checkpoint["trace"] = np.array(json.dumps(trace.to_dict()))
                    store.save_checkpoint(checkpoint)
            logger.debug(f"Epoch {epoch}: {record['scenarios']}")
    finally:
        if pool:
            pool.shutdown()

    advantage = steering_advantage(trace)
    logger.info(
        f"Steering finished: r_stochastic={advantage.r_stochastic}, r_learned={advantage.r_learned}, "
        f"training cycles={trace.training_cycles}"
    )
    if store:
        summary = summarize(trace)
        store.write_summary(summary)
        if "step_response" in summary:
            store.write_response_csv([{"t0": trace.step_t0, **summary["step_response"]}])
    return trace


def summarize(trace: ScenarioTrace) -> Dict[str, object]:
    advantage = steering_advantage(trace)
    summary: Dict[str, object] = {
        "r_stochastic": advantage.r_stochastic,
        "r_learned": advantage.r_learned,
        "cumulative_events": {s: trace.cumulative(s) for s in SCENARIOS},
        "training_cycles": trace.training_cycles,
        "scenario_cycles": trace.scenario_cycles,
        "evaluation_cycles": trace.evaluation_cycles,
        "epochs": len(trace.records),
    }
    response = measure_step_response(trace)
    if response is not None:
        summary["response_tau"] = response.tau
        summary["step_response"] = asdict(response)
    if trace.has(REFERENCE):
        normalized = normalize_by_reference(trace)
        summary["normalized_mean_dr"] = {s: float(np.nanmean(v)) for s, v in normalized.items()}
    return summary
