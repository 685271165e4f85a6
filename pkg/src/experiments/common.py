"""
Shared setup for every experiment: circuit, error model, regions, factor graph,
and the simulate / evaluate helpers the runners call per policy.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging

import numpy as np
from tqdm import tqdm

# Conditional imports for different execution contexts
try:
    from ..agent import PolicyGradientAgent, reward_from_record
    from ..circuit import Circuit, DetectingRegionMap, build_memory_circuit, compute_detecting_regions
    from ..decoder import DecodingGraph, LogicalStats, build_decoding_graph, evaluate_logical
    from ..detgraph import (
        FactorGraph, SensitivityScale, apply_sensitivities, build_factor_graph,
        calibrate_sensitivities, default_type_groups, fold_detectors,
    )
    from ..noise_model import ErrorModel, instantiate_noisy_circuit, optimal_policy, sample_error_model, site_epsilons
    from ..schema import DriftSpec, ExperimentConfig, PriorKind
    from ..simulator import DetectionRecord, FrameSimulator, count_events, derive_seed, detection_fractions
except ImportError:
    from agent import PolicyGradientAgent, reward_from_record
    from circuit import Circuit, DetectingRegionMap, build_memory_circuit, compute_detecting_regions
    from decoder import DecodingGraph, LogicalStats, build_decoding_graph, evaluate_logical
    from detgraph import (
        FactorGraph, SensitivityScale, apply_sensitivities, build_factor_graph,
        calibrate_sensitivities, default_type_groups, fold_detectors,
    )
    from noise_model import ErrorModel, instantiate_noisy_circuit, optimal_policy, sample_error_model, site_epsilons
    from schema import DriftSpec, ExperimentConfig, PriorKind
    from simulator import DetectionRecord, FrameSimulator, count_events, derive_seed, detection_fractions

logger = logging.getLogger(__name__)


@dataclass
class ExperimentContext:
    cfg: ExperimentConfig
    circuit: Circuit
    simulator: FrameSimulator
    model: ErrorModel
    regions: DetectingRegionMap
    classes: list
    graph: FactorGraph
    flips: np.ndarray
    sensitivities: Dict[str, SensitivityScale] = field(default_factory=dict)
    _decoding_graph: Optional[DecodingGraph] = field(default=None, repr=False)

    def epsilons(self, t: float, p: np.ndarray) -> np.ndarray:
        return site_epsilons(self.model, t, p)

    def simulate(self, p: np.ndarray, t: float, shots: int, seed: int) -> DetectionRecord:
        return self.simulator.run(shots, seed, site_eps=self.epsilons(t, p), flip_probs=self.flips, threads=self.cfg.threads)

    def mean_dr(self, p: np.ndarray, t: float, shots: int, seed: int) -> float:
        return detection_fractions(self.simulate(p, t, shots, seed))[1]

    def decoding_graph(self) -> DecodingGraph:
        """Decoding graph from the configured prior, built once per context"""
        if self._decoding_graph is None:
            spec = self.cfg.evaluation
            if spec.prior == PriorKind.TRUE_MODEL:
                reference = instantiate_noisy_circuit(self.circuit, self.model, optimal_policy(self.model, 0.0), 0.0)
                self._decoding_graph = build_decoding_graph(reference, PriorKind.TRUE_MODEL)
            else:
                self._decoding_graph = build_decoding_graph(self.circuit, PriorKind.UNIFORM, spec.prior_q0)
        return self._decoding_graph

    def evaluate(self, p: np.ndarray, t: float, shots: int, seed: int) -> LogicalStats:
        return self.assess(p, t, shots, seed)[0]

    def assess(self, p: np.ndarray, t: float, shots: int, seed: int) -> Tuple[LogicalStats, np.ndarray]:
        """Decoded logical statistics and per-detector rates of one evaluation run"""
        rec = self.simulate(p, t, shots, seed)
        stats = evaluate_logical(self.decoding_graph(), rec, self.cfg.evaluation.decoder)
        return stats, detection_fractions(rec)[0]

    def candidate_rewards(
        self,
        thetas: np.ndarray,
        t: float,
        seeds: Sequence[int],
        pool: Optional[ThreadPoolExecutor] = None,
    ) -> Tuple[np.ndarray, int]:
        """Per-class rewards of every candidate and the total event count"""
        eps = site_epsilons(self.model, t, thetas)
        shots = self.cfg.shots_per_candidate

        def one(b: int):
            rec = self.simulator.run(shots, seeds[b], site_eps=eps[b], flip_probs=self.flips)
            return reward_from_record(rec, self.classes), count_events(rec)

        jobs = range(len(thetas))
        results = list(pool.map(one, jobs)) if pool else [one(b) for b in jobs]
        return np.array([r for r, _ in results]), int(sum(n for _, n in results))


def build_context(
    cfg: ExperimentConfig,
    drift: Optional[DriftSpec] = None,
    model: Optional[ErrorModel] = None,
) -> ExperimentContext:
    """Circuit, sampled error model (optionally calibrated), regions and factor graph for ``cfg``"""
    circuit = build_memory_circuit(cfg.code, cfg.d, cfg.cycles, cfg.basis)
    simulator = FrameSimulator(circuit)
    noise = cfg.noise
    if model is None:
        model = sample_error_model(
            cfg.seed, circuit,
            P=noise.params_per_site,
            omega_range=noise.omega_range,
            eps_tilde_range=noise.eps_tilde_range,
            drift=drift if drift is not None else noise.drift,
            eps_max_1q=noise.eps_max_1q,
            eps_max_2q=noise.eps_max_2q,
            readout_error=noise.readout_error,
        )

    sensitivities: Dict[str, SensitivityScale] = {}
    if cfg.calibration.enabled:
        groups = default_type_groups(model)
        sensitivities = calibrate_sensitivities(
            circuit, model, optimal_policy(model, 0.0), groups,
            sigma_grid=cfg.calibration.sigma_grid,
            shots=cfg.calibration.shots,
            seed=derive_seed(cfg.seed, "calibration"),
            draws=cfg.calibration.draws,
            threads=cfg.threads,
            simulator=simulator,
        )
        model = apply_sensitivities(model, sensitivities, groups)

    regions = compute_detecting_regions(circuit)
    classes = fold_detectors(circuit)
    graph = build_factor_graph(circuit, regions, model.parameters(), classes)
    logger.info(f"Experiment context: {circuit.summary()}, {graph.num_params} parameters, {graph.num_classes} classes")
    return ExperimentContext(
        cfg=cfg,
        circuit=circuit,
        simulator=simulator,
        model=model,
        regions=regions,
        classes=classes,
        graph=graph,
        flips=model.flip_probabilities(),
        sensitivities=sensitivities,
    )


def dr_quartiles(rates: np.ndarray) -> List[float]:
    return [float(q) for q in np.percentile(rates, [25, 50, 75])]


def train_agent(
    ctx: ExperimentContext,
    mu_init: np.ndarray,
    label: str,
    epochs: Optional[int] = None,
    evaluate_every: Optional[int] = None,
    stop: Optional[Callable[[Dict[str, object]], bool]] = None,
    quiet: bool = False,
) -> Tuple[PolicyGradientAgent, List[Dict[str, object]]]:
    """Drift-time training loop with periodic decoded evaluation of mu(t).

    ``stop`` sees every evaluated history entry and ends training early when
    it returns True.
    """
    cfg = ctx.cfg
    epochs = cfg.epochs if epochs is None else epochs
    every = evaluate_every or cfg.evaluation.every
    agent = PolicyGradientAgent(ctx.graph, cfg.agent, derive_seed(cfg.seed, label, "agent"), mu_init)
    history: List[Dict[str, object]] = []
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in tqdm(range(epochs), desc=label, disable=quiet):
            t = float(epoch)
            thetas = agent.ask()
            seeds = [derive_seed(cfg.seed, label, "candidate", epoch, b) for b in range(len(thetas))]
            rewards, _ = ctx.candidate_rewards(thetas, t, seeds, pool)
            stats = agent.tell(thetas, rewards)
            entry: Dict[str, object] = {"epoch": epoch, "mean_dr": float(-rewards.mean()), "sigma_mean": stats["sigma_mean"]}
            if (epoch + 1) % every == 0 or epoch == epochs - 1:
                logical, rates = ctx.assess(
                    agent.learned_policy(), t, cfg.evaluation.shots, derive_seed(cfg.seed, label, "evaluation", epoch)
                )
                entry.update(eps_L=logical.eps_L, p_err=logical.p_err, dr_quartiles=dr_quartiles(rates))
                history.append(entry)
                if stop and stop(entry):
                    logger.info(f"{label}: stopping criterion met at epoch {epoch}")
                    break
            else:
                history.append(entry)
    finally:
        if pool:
            pool.shutdown()
    return agent, history
