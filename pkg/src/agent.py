"""
Masked parameter-exploring policy gradients over a factorized Gaussian policy.

Rewards are per detector class (r_c = -DR_c). Each parameter only sees the
standardized advantages of the classes adjacent to it in the factor graph.
Past batches are reused through per-coordinate importance ratios clipped to
[1 - kappa, 1 + kappa], and an entropy bonus lambda_H pushes log sigma up.
"""

from typing import Dict, Optional, Sequence
from collections import deque
from dataclasses import dataclass, field
import logging
import math

import numpy as np

# Conditional imports for different execution contexts
try:
    from .detgraph import DetectorClass, FactorGraph, class_index
    from .schema import AgentHyperparams
    from .simulator import DetectionRecord, derive_seed, popcount_rows
except ImportError:
    from detgraph import DetectorClass, FactorGraph, class_index
    from schema import AgentHyperparams
    from simulator import DetectionRecord, derive_seed, popcount_rows

logger = logging.getLogger(__name__)

ADVANTAGE_EPS = 1e-8
_HALF_LOG_2PI_E = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass
class PolicyDistribution:
    mu: np.ndarray
    log_sigma: np.ndarray
    epoch: int = 0

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def entropy(self) -> float:
        return float(np.sum(self.log_sigma + _HALF_LOG_2PI_E))

    def copy(self) -> "PolicyDistribution":
        return PolicyDistribution(self.mu.copy(), self.log_sigma.copy(), self.epoch)

    @classmethod
    def initial(cls, mu: np.ndarray, sigma: float) -> "PolicyDistribution":
        mu = np.asarray(mu, dtype=np.float64).copy()
        return cls(mu, np.full(mu.shape, math.log(sigma)), 0)


@dataclass
class CandidateBatch:
    """One epoch of candidates with the policy snapshot they were drawn from"""
    thetas: np.ndarray          # (B, P_tot)
    rewards: np.ndarray         # (B, classes)
    epoch: int
    mu: np.ndarray
    log_sigma: np.ndarray


@dataclass
class ReplayBuffer:
    capacity: int
    batches: deque = field(init=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("replay capacity must be >= 1")
        self.batches = deque(maxlen=self.capacity)

    def push(self, batch: CandidateBatch) -> None:
        self.batches.append(batch)

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def sample_candidates(policy: PolicyDistribution, B: int, seed: int) -> np.ndarray:
    """Mirrored draws: rows 2k and 2k+1 are mu + sigma*z and mu - sigma*z"""
    if B < 2 or B % 2:
        raise ValueError(f"batch size must be even and >= 2, got {B}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((B // 2, policy.mu.size))
    mirrored = np.empty((B, policy.mu.size))
    mirrored[0::2] = z
    mirrored[1::2] = -z
    return policy.mu + policy.sigma * mirrored


def reward_from_record(rec: DetectionRecord, classes: Sequence[DetectorClass]) -> np.ndarray:
    """r_c = -(events in class c) / (shots * members of c)"""
    counts = popcount_rows(rec.events)
    index = class_index(classes, rec.num_detectors)
    covered = index >= 0
    events = np.bincount(index[covered], weights=counts[covered], minlength=len(classes))
    members = np.bincount(index[covered], minlength=len(classes))
    return -events / (rec.shots * members)


def _masked_advantages(rewards: np.ndarray, graph: FactorGraph, masked: bool) -> np.ndarray:
    std = rewards.std(axis=0)
    adv = (rewards - rewards.mean(axis=0)) / (std + ADVANTAGE_EPS)
    adv[:, std == 0] = 0.0
    if not masked:
        return np.repeat(adv.mean(axis=1, keepdims=True), graph.num_params, axis=1)
    total = np.asarray(graph.adjacency.T.dot(adv.T)).T      # (B, P_tot) sums over adjacent classes
    deg = graph.param_degrees()
    return np.where(deg > 0, total / np.where(deg > 0, deg, 1), 0.0)


def importance_ratios(batch: CandidateBatch, policy: PolicyDistribution, clip: float) -> np.ndarray:
    """Per-coordinate N(theta; current) / N(theta; sampling-time), clipped to [1 - clip, 1 + clip]"""
    sig_now, sig_then = policy.sigma, np.exp(batch.log_sigma)
    log_now = -0.5 * ((batch.thetas - policy.mu) / sig_now) ** 2 - policy.log_sigma
    log_then = -0.5 * ((batch.thetas - batch.mu) / sig_then) ** 2 - batch.log_sigma
    ratio = np.exp(np.clip(log_now - log_then, -50.0, 50.0))
    return np.clip(ratio, 1.0 - clip, 1.0 + clip)


def policy_gradients(
    policy: PolicyDistribution,
    buffer: ReplayBuffer,
    graph: FactorGraph,
    hp: AgentHyperparams,
) -> Dict[str, np.ndarray]:
    """g_mu and g_log_sigma (entropy bonus included) over every buffered batch"""
    if len(buffer) == 0:
        raise ValueError("replay buffer is empty")
    sigma2 = policy.sigma ** 2
    g_mu = np.zeros_like(policy.mu)
    g_ls = np.zeros_like(policy.mu)
    n = 0
    for batch in buffer:
        adv = _masked_advantages(batch.rewards, graph, hp.masked)
        rho = importance_ratios(batch, policy, hp.clip_ratio)
        diff = batch.thetas - policy.mu
        weighted = rho * adv
        g_mu += np.sum(weighted * diff / sigma2, axis=0)
        g_ls += np.sum(weighted * (diff ** 2 / sigma2 - 1.0), axis=0)
        n += batch.thetas.shape[0]
    g_mu /= n
    g_ls = g_ls / n + hp.entropy_coef
    return {"mu": g_mu, "log_sigma": g_ls}


def update(
    policy: PolicyDistribution,
    buffer: ReplayBuffer,
    graph: FactorGraph,
    hp: AgentHyperparams,
) -> PolicyDistribution:
    grads = policy_gradients(policy, buffer, graph, hp)
    lo, hi = math.log(hp.sigma_min), math.log(hp.sigma_max)
    return PolicyDistribution(
        mu=policy.mu + hp.learning_rate * grads["mu"],
        log_sigma=np.clip(policy.log_sigma + hp.learning_rate * grads["log_sigma"], lo, hi),
        epoch=policy.epoch + 1,
    )


def learned_policy(policy: PolicyDistribution) -> np.ndarray:
    return policy.mu.copy()


class PolicyGradientAgent:
    """Ask/tell loop around the policy, its replay buffer and candidate seeds"""

    def __init__(
        self,
        graph: FactorGraph,
        hp: AgentHyperparams,
        seed: int,
        mu_init: np.ndarray,
        policy: Optional[PolicyDistribution] = None,
    ):
        self.graph = graph
        self.hp = hp
        self.seed = int(seed)
        self.policy = policy or PolicyDistribution.initial(mu_init, hp.sigma_init)
        self.buffer = ReplayBuffer(hp.buffer_epochs)
        self._pending: Optional[np.ndarray] = None

    @property
    def epoch(self) -> int:
        return self.policy.epoch

    def ask(self) -> np.ndarray:
        self._pending = sample_candidates(self.policy, self.hp.batch, derive_seed(self.seed, "candidates", self.epoch))
        return self._pending

    def tell(self, thetas: np.ndarray, rewards: np.ndarray) -> Dict[str, float]:
        batch = CandidateBatch(
            thetas=np.asarray(thetas, dtype=np.float64),
            rewards=np.asarray(rewards, dtype=np.float64),
            epoch=self.epoch,
            mu=self.policy.mu.copy(),
            log_sigma=self.policy.log_sigma.copy(),
        )
        self.buffer.push(batch)
        self.policy = update(self.policy, self.buffer, self.graph, self.hp)
        self._pending = None
        stats = {
            "epoch": self.epoch,
            "mean_dr": float(-batch.rewards.mean()),
            "entropy": self.policy.entropy(),
            "mu_norm": float(np.linalg.norm(self.policy.mu)),
            "sigma_mean": float(self.policy.sigma.mean()),
        }
        logger.debug(f"Agent update: {stats}")
        return stats

    def learned_policy(self) -> np.ndarray:
        return learned_policy(self.policy)

    def checkpoint_state(self) -> Dict[str, np.ndarray]:
        state = {
            "mu": self.policy.mu,
            "log_sigma": self.policy.log_sigma,
            "epoch": np.array(self.policy.epoch),
            "seed": np.array(self.seed, dtype=np.uint64),
            "buffer_size": np.array(len(self.buffer)),
        }
        for i, batch in enumerate(self.buffer):
            state[f"buffer_{i}_thetas"] = batch.thetas
            state[f"buffer_{i}_rewards"] = batch.rewards
            state[f"buffer_{i}_mu"] = batch.mu
            state[f"buffer_{i}_log_sigma"] = batch.log_sigma
            state[f"buffer_{i}_epoch"] = np.array(batch.epoch)
        return state

    @classmethod
    def from_checkpoint(cls, graph: FactorGraph, hp: AgentHyperparams, state: Dict[str, np.ndarray]) -> "PolicyGradientAgent":
        policy = PolicyDistribution(np.array(state["mu"]), np.array(state["log_sigma"]), int(state["epoch"]))
        agent = cls(graph, hp, int(state["seed"]), policy.mu, policy=policy)
        for i in range(int(state["buffer_size"])):
            agent.buffer.push(CandidateBatch(
                thetas=np.array(state[f"buffer_{i}_thetas"]),
                rewards=np.array(state[f"buffer_{i}_rewards"]),
                epoch=int(state[f"buffer_{i}_epoch"]),
                mu=np.array(state[f"buffer_{i}_mu"]),
                log_sigma=np.array(state[f"buffer_{i}_log_sigma"]),
            ))
        return agent
