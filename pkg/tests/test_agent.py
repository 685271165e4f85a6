import math

import numpy as np
import pytest
from scipy import sparse

from agent import (
    CandidateBatch, PolicyDistribution, PolicyGradientAgent, ReplayBuffer,
    importance_ratios, learned_policy, policy_gradients, reward_from_record, sample_candidates,
    update,
)
from circuit import DetectorPhase, QubitId
from detgraph import DetectorClass, FactorGraph
from noise_model import ControlParameter
from schema import AgentHyperparams
from simulator import DetectionRecord, pack_bits


def make_graph(adjacency):
    adjacency = np.asarray(adjacency, dtype=float)
    n_classes, n_params = adjacency.shape
    classes = [DetectorClass(c, (c,), QubitId(c, (0, c)), DetectorPhase.BULK) for c in range(n_classes)]
    params = [ControlParameter(k, k, 0) for k in range(n_params)]
    return FactorGraph(classes, params, sparse.csr_matrix(adjacency))


class TestSampling:
    def test_mirrored_pairs(self):
        policy = PolicyDistribution.initial(np.array([0.5, -1.0, 2.0]), 0.3)
        thetas = sample_candidates(policy, 6, seed=1)
        np.testing.assert_allclose(thetas[0::2] + thetas[1::2], 2 * policy.mu)

    @pytest.mark.parametrize("B", [0, 3])
    def test_batch_must_be_even(self, B):
        with pytest.raises(ValueError, match="even"):
            sample_candidates(PolicyDistribution.initial(np.zeros(2), 0.1), B, seed=0)


class TestRewards:
    def test_per_class_detection_rates(self):
        events = np.zeros((3, 64), dtype=bool)
        events[0, :16] = True
        events[2, :32] = True
        rec = DetectionRecord(pack_bits(events), pack_bits(np.zeros(64, dtype=bool)), 64, 1)
        classes = [
            DetectorClass(0, (0, 1), QubitId(0, (0, 0)), DetectorPhase.BULK),
            DetectorClass(1, (2,), QubitId(1, (0, 1)), DetectorPhase.BULK),
        ]
        np.testing.assert_allclose(reward_from_record(rec, classes), [-0.125, -0.5])


class TestGradients:
    def test_disconnected_parameter_gets_no_gradient(self, rng):
        graph = make_graph([[1, 0, 0], [1, 1, 0]])
        hp = AgentHyperparams(batch=8, entropy_coef=0.0)
        policy = PolicyDistribution.initial(np.zeros(3), 0.2)
        buffer = ReplayBuffer(2)
        thetas = sample_candidates(policy, 8, seed=2)
        buffer.push(CandidateBatch(thetas, rng.standard_normal((8, 2)), 0, policy.mu.copy(), policy.log_sigma.copy()))
        grads = policy_gradients(policy, buffer, graph, hp)
        assert grads["mu"][2] == 0.0
        assert grads["log_sigma"][2] == 0.0
        assert np.any(grads["mu"][:2] != 0.0)

    def test_entropy_bonus_on_disconnected_parameter(self, rng):
        graph = make_graph([[1, 0]])
        hp = AgentHyperparams(batch=4, entropy_coef=0.05)
        policy = PolicyDistribution.initial(np.zeros(2), 0.2)
        buffer = ReplayBuffer(1)
        buffer.push(CandidateBatch(sample_candidates(policy, 4, 3), rng.standard_normal((4, 1)), 0,
                                   policy.mu.copy(), policy.log_sigma.copy()))
        assert policy_gradients(policy, buffer, graph, hp)["log_sigma"][1] == pytest.approx(0.05)

    def test_importance_ratios_are_clipped(self):
        then = PolicyDistribution.initial(np.zeros(4), 0.1)
        thetas = sample_candidates(then, 10, seed=4)
        batch = CandidateBatch(thetas, np.zeros((10, 1)), 0, then.mu.copy(), then.log_sigma.copy())
        now = PolicyDistribution(np.full(4, 0.3), np.full(4, math.log(0.05)), 5)
        rho = importance_ratios(batch, now, clip=0.2)
        assert rho.min() >= 0.8 - 1e-12
        assert rho.max() <= 1.2 + 1e-12

    def test_empty_buffer(self):
        graph = make_graph([[1]])
        with pytest.raises(ValueError, match="empty"):
            policy_gradients(PolicyDistribution.initial(np.zeros(1), 0.1), ReplayBuffer(1), graph, AgentHyperparams())


class TestAgent:
    def test_log_sigma_stays_in_bounds(self, rng):
        graph = make_graph([[1, 1]])
        hp = AgentHyperparams(batch=4, entropy_coef=50.0, learning_rate=1.0, sigma_max=0.5)
        agent = PolicyGradientAgent(graph, hp, seed=0, mu_init=np.zeros(2))
        for _ in range(10):
            thetas = agent.ask()
            agent.tell(thetas, rng.standard_normal((4, 1)))
        assert np.all(agent.policy.log_sigma <= math.log(0.5) + 1e-12)
        assert np.all(agent.policy.log_sigma >= math.log(hp.sigma_min) - 1e-12)

    def test_climbs_a_quadratic_reward(self):
        graph = make_graph([[1, 1]])
        hp = AgentHyperparams(batch=20, learning_rate=0.02, entropy_coef=0.0, sigma_min=0.1)
        agent = PolicyGradientAgent(graph, hp, seed=5, mu_init=np.array([1.0, -1.0]))
        for _ in range(100):
            thetas = agent.ask()
            agent.tell(thetas, -np.sum(thetas ** 2, axis=1, keepdims=True))
        assert np.linalg.norm(agent.learned_policy()) < 0.5
        assert agent.epoch == 100

    def test_replay_capacity(self, rng):
        graph = make_graph([[1]])
        hp = AgentHyperparams(batch=2, buffer_epochs=3)
        agent = PolicyGradientAgent(graph, hp, seed=0, mu_init=np.zeros(1))
        for _ in range(5):
            agent.tell(agent.ask(), rng.standard_normal((2, 1)))
        assert len(agent.buffer) == 3
        assert [b.epoch for b in agent.buffer] == [2, 3, 4]

    def test_checkpoint_restores_state(self, rng):
        graph = make_graph([[1, 0], [1, 1]])
        hp = AgentHyperparams(batch=4)
        agent = PolicyGradientAgent(graph, hp, seed=9, mu_init=np.array([0.2, -0.1]))
        for _ in range(3):
            agent.tell(agent.ask(), rng.standard_normal((4, 2)))
        restored = PolicyGradientAgent.from_checkpoint(graph, hp, agent.checkpoint_state())
        assert restored.epoch == agent.epoch
        np.testing.assert_array_equal(restored.ask(), agent.ask())
        rewards = rng.standard_normal((4, 2))
        thetas = agent.ask()
        agent.tell(thetas, rewards)
        restored.tell(thetas, rewards)
        np.testing.assert_array_equal(restored.policy.mu, agent.policy.mu)
        np.testing.assert_array_equal(restored.policy.log_sigma, agent.policy.log_sigma)

    def test_update_steps_along_gradient(self, rng):
        graph = make_graph([[1, 1, 0], [0, 1, 1]])
        hp = AgentHyperparams(batch=6, learning_rate=0.1)
        policy = PolicyDistribution.initial(np.array([0.1, 0.0, -0.2]), 0.2)
        buffer = ReplayBuffer(2)
        buffer.push(CandidateBatch(sample_candidates(policy, 6, seed=7), rng.standard_normal((6, 2)), 0,
                                   policy.mu.copy(), policy.log_sigma.copy()))
        grads = policy_gradients(policy, buffer, graph, hp)
        new = update(policy, buffer, graph, hp)
        np.testing.assert_allclose(new.mu, policy.mu + 0.1 * grads["mu"])
        assert new.epoch == policy.epoch + 1
        mu = learned_policy(new)
        np.testing.assert_array_equal(mu, new.mu)
        mu[0] = 99.0
        assert new.mu[0] != 99.0


def one_batch(policy, thetas, rewards):
    buffer = ReplayBuffer(1)
    buffer.push(CandidateBatch(thetas, rewards, policy.epoch, policy.mu.copy(), policy.log_sigma.copy()))
    return buffer


class TestGradientStatistics:
    def test_masking_improves_noise_to_signal(self, rng):
        graph = make_graph(np.eye(10))
        policy = PolicyDistribution.initial(np.zeros(10), 0.2)
        masked, unmasked = [], []
        for trial in range(200):
            thetas = sample_candidates(policy, 20, seed=trial)
            rewards = -(thetas - 1.0) ** 2 + 0.05 * rng.standard_normal(thetas.shape)
            buffer = one_batch(policy, thetas, rewards)
            masked.append(policy_gradients(policy, buffer, graph, AgentHyperparams(masked=True))["mu"])
            unmasked.append(policy_gradients(policy, buffer, graph, AgentHyperparams(masked=False))["mu"])
        masked, unmasked = np.array(masked), np.array(unmasked)
        nsr_masked = masked.var(axis=0) / masked.mean(axis=0) ** 2
        nsr_unmasked = unmasked.var(axis=0) / unmasked.mean(axis=0) ** 2
        assert np.all(masked.mean(axis=0) > 0)
        assert np.mean(nsr_masked < nsr_unmasked) >= 0.9

    def test_no_drift_at_the_optimum(self, rng):
        graph = make_graph(np.eye(4))
        hp = AgentHyperparams(batch=10, learning_rate=0.05, entropy_coef=0.0)
        policy = PolicyDistribution.initial(np.zeros(4), 0.2)
        steps = []
        for trial in range(500):
            thetas = sample_candidates(policy, 10, seed=trial)
            rewards = -thetas ** 2 + 0.01 * rng.standard_normal(thetas.shape)
            steps.append(update(policy, one_batch(policy, thetas, rewards), graph, hp).mu - policy.mu)
        steps = np.array(steps)
        stderr = steps.std(axis=0, ddof=1) / math.sqrt(len(steps))
        assert np.linalg.norm(steps.mean(axis=0)) < 3 * math.sqrt(np.sum(stderr ** 2))

    def test_zero_rewards_open_sigma_to_its_maximum(self):
        graph = make_graph(np.eye(3))
        hp = AgentHyperparams(batch=4, learning_rate=0.5, entropy_coef=1.0, sigma_max=0.5)
        mu0 = np.array([0.3, -0.2, 0.1])
        agent = PolicyGradientAgent(graph, hp, seed=2, mu_init=mu0)
        for _ in range(10):
            agent.tell(agent.ask(), np.zeros((4, 3)))
        np.testing.assert_allclose(agent.policy.sigma, 0.5)
        np.testing.assert_array_equal(agent.policy.mu, mu0)

    def test_single_update_moves_toward_the_optimum(self):
        graph = make_graph(np.eye(5))
        hp = AgentHyperparams(batch=10, learning_rate=0.05)
        improved = 0
        for seed in range(100):
            local = np.random.default_rng(seed)
            target = local.uniform(-1.0, 1.0, size=5)
            policy = PolicyDistribution.initial(target + 0.3 * local.standard_normal(5), 0.15)
            thetas = sample_candidates(policy, 10, seed=seed)
            rewards = -(thetas - target) ** 2
            new = update(policy, one_batch(policy, thetas, rewards), graph, hp)
            improved += float(np.dot(new.mu - policy.mu, target - policy.mu)) > 0
        assert improved >= 95
