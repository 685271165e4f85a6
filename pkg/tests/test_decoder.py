import math

import numpy as np
import pytest

from circuit import build_repetition_code_memory, build_surface_code_memory
from decoder import (
    WEIGHT_CAP, DecoderError, DecodingGraph, ExhaustiveDecoder, UnionFindDecoder,
    build_decoding_graph, decode, edge_weight, evaluate_logical, fit_lambda_reference,
    invert_per_cycle, lambda_point_estimate, logical_error_rate, match_syndrome,
    xor_probability,
)
from noise_model import instantiate_noisy_circuit, optimal_policy, sample_error_model
from schema import DecoderMethod, PriorKind
from simulator import FrameSimulator, sample


def ring_graph(rng, n=6):
    """Detectors on a ring, each also joined to the boundary node n"""
    edges = [(i, (i + 1) % n) for i in range(n)] + [(i, n) for i in range(n)]
    edges = [tuple(sorted(e)) for e in edges]
    return DecodingGraph(
        num_detectors=n,
        edges=np.array(edges, dtype=np.int64),
        probabilities=rng.uniform(0.01, 0.2, size=len(edges)),
        observables=rng.random(len(edges)) < 0.5,
        mechanism_probabilities=np.zeros(0),
    )


@pytest.fixture(scope="module")
def noisy_surface():
    circuit = build_surface_code_memory(3, 2)
    model = sample_error_model(0, circuit, eps_tilde_range=(3e-3, 3e-3))
    return circuit, model, instantiate_noisy_circuit(circuit, model, optimal_policy(model, 0.0), 0.0)


@pytest.fixture(scope="module")
def repetition_graph():
    return build_decoding_graph(build_repetition_code_memory(7, 1), PriorKind.UNIFORM, q0=1e-3)


class TestWeights:
    def test_xor_composition(self):
        assert xor_probability(0.1, 0.1) == pytest.approx(0.18)

    def test_weight_bounds(self):
        assert edge_weight(0.0) == WEIGHT_CAP
        assert edge_weight(1e-30) == WEIGHT_CAP
        assert edge_weight(0.1) == pytest.approx(math.log(9.0))
        assert edge_weight(0.5) > 0


class TestMatching:
    def test_weight_equals_brute_force_minimum(self, rng):
        graph = ring_graph(rng)
        brute = ExhaustiveDecoder(graph)
        for _ in range(100):
            fired = np.flatnonzero(rng.random(graph.num_detectors) < 0.5).tolist()
            _, weight = match_syndrome(graph, fired)
            assert weight == pytest.approx(brute.minimum_weight(fired), abs=1e-9)

    def test_empty_syndrome(self, rng):
        assert match_syndrome(ring_graph(rng), []) == (False, 0.0)

    def test_single_edge_errors_are_corrected(self, repetition_graph):
        uf = UnionFindDecoder(repetition_graph)
        B = repetition_graph.boundary
        for (a, b), obs in zip(repetition_graph.edges, repetition_graph.observables):
            fired = [int(v) for v in (a, b) if v != B]
            assert match_syndrome(repetition_graph, fired)[0] == bool(obs)
            assert uf.decode(fired) == bool(obs)


class TestDecodingGraph:
    def test_true_model_needs_bound_circuit(self):
        with pytest.raises(DecoderError, match="bound"):
            build_decoding_graph(build_surface_code_memory(3, 1), PriorKind.TRUE_MODEL)

    def test_graphlike(self, noisy_surface):
        _, _, noisy = noisy_surface
        graph = build_decoding_graph(noisy)
        assert graph.num_edges > 0
        assert np.all(graph.edges[:, 0] < graph.edges[:, 1])
        assert np.all((graph.probabilities > 0) & (graph.probabilities < 0.5))
        assert graph.decomposed > 0

    def test_paths_are_symmetric(self, noisy_surface):
        graph = build_decoding_graph(noisy_surface[2])
        dist, parity = graph.paths()
        np.testing.assert_allclose(dist, dist.T)
        np.testing.assert_array_equal(parity, parity.T)


class TestDecoders:
    def test_noiseless_has_no_logical_errors(self, noisy_surface):
        circuit, _, noisy = noisy_surface
        graph = build_decoding_graph(noisy)
        zeros = np.zeros(len(circuit.sites))
        rec = FrameSimulator(circuit).run(1024, seed=0, site_eps=zeros, flip_probs=zeros)
        for method in DecoderMethod:
            if method == DecoderMethod.EXHAUSTIVE:
                continue
            stats = evaluate_logical(graph, rec, method)
            assert stats.errors == 0
            assert stats.p_err == 0.0

    @pytest.mark.parametrize("method", [DecoderMethod.MWPM, DecoderMethod.UNION_FIND])
    def test_decoding_beats_raw_flips(self, noisy_surface, method):
        _, _, noisy = noisy_surface
        graph = build_decoding_graph(noisy)
        rec = sample(noisy, 8192, seed=21)
        stats = evaluate_logical(graph, rec, method)
        assert stats.errors < rec.logical_count

    def test_exhaustive_size_limit(self, noisy_surface):
        with pytest.raises(DecoderError, match="limited"):
            ExhaustiveDecoder(build_decoding_graph(noisy_surface[2]))

    def test_detector_count_mismatch(self, noisy_surface, repetition_graph):
        rec = sample(noisy_surface[2], 64, seed=1)
        with pytest.raises(DecoderError, match="detectors"):
            decode(repetition_graph, rec)


class TestLogicalStats:
    def test_per_cycle_inversion(self):
        p_err, T = 0.1, 5
        eps = invert_per_cycle(p_err, T)
        assert 0.5 * (1 - (1 - 2 * eps) ** T) == pytest.approx(p_err)
        assert invert_per_cycle(0.1, 1) == pytest.approx(0.1)

    def test_rate_from_predictions(self):
        actual = np.array([True, False, False, False] * 25)
        stats = logical_error_rate(np.zeros(100, dtype=bool), actual, T=1)
        assert stats.errors == 25
        assert stats.eps_L == pytest.approx(0.25)
        assert not stats.saturated

    def test_saturation_above_half(self):
        stats = logical_error_rate(np.ones(10, dtype=bool), np.array([False] * 8 + [True] * 2), T=3)
        assert stats.saturated
        assert stats.eps_L == 0.5

    def test_empty_predictions(self):
        with pytest.raises(ValueError, match="non-empty"):
            logical_error_rate(np.zeros(0, dtype=bool), np.zeros(0, dtype=bool), T=1)


class TestLambda:
    def test_point_estimate(self):
        assert lambda_point_estimate(2.5e-4, d=3, lambda_star=1.0, eps_L_star=1e-3) == pytest.approx(2.0)

    def test_point_estimate_rejects_zero(self):
        with pytest.raises(ValueError):
            lambda_point_estimate(0.0, 3, 2.0, 1e-3)

    def test_reference_fit(self):
        distances = [3, 5, 7]
        eps = [0.1 * 2.0 ** (-(d + 1) / 2) for d in distances]
        lam, scale = fit_lambda_reference(distances, eps)
        assert lam == pytest.approx(2.0)
        assert scale == pytest.approx(0.1)

    def test_reference_fit_needs_two_points(self):
        lam, _ = fit_lambda_reference([3], [1e-3])
        assert math.isnan(lam)


class TestDecoderAgreement:
    def test_matching_tracks_maximum_likelihood_on_repetition_code(self):
        circuit = build_repetition_code_memory(3, 1)
        model = sample_error_model(2, circuit, eps_tilde_range=(0.01, 0.03))
        noisy = instantiate_noisy_circuit(circuit, model, optimal_policy(model, 0.0), 0.0)
        graph = build_decoding_graph(noisy)
        assert graph.num_edges <= 20
        rec = sample(noisy, 16384, seed=4)
        mwpm = evaluate_logical(graph, rec, DecoderMethod.MWPM).errors
        exact = evaluate_logical(graph, rec, DecoderMethod.EXHAUSTIVE).errors
        assert exact > 0
        assert mwpm == pytest.approx(exact, rel=0.1, abs=3)

    def test_union_find_within_twice_matching(self, noisy_surface):
        noisy = noisy_surface[2]
        graph = build_decoding_graph(noisy)
        rec = sample(noisy, 16384, seed=8)
        mwpm = evaluate_logical(graph, rec, DecoderMethod.MWPM).errors
        uf = evaluate_logical(graph, rec, DecoderMethod.UNION_FIND).errors
        assert mwpm > 0
        assert uf <= 2 * mwpm

    def test_repetition_code_is_graphlike(self, repetition_graph):
        assert repetition_graph.decomposed == 0
        assert repetition_graph.undetectable == 0

    def test_larger_distance_suppresses_errors(self):
        rates = {}
        for d in (3, 5):
            circuit = build_surface_code_memory(d, 2)
            model = sample_error_model(0, circuit, eps_tilde_range=(3e-3, 3e-3))
            noisy = instantiate_noisy_circuit(circuit, model, optimal_policy(model, 0.0), 0.0)
            rates[d] = evaluate_logical(build_decoding_graph(noisy), sample(noisy, 4096, seed=13)).p_err
        assert rates[5] < rates[3]
