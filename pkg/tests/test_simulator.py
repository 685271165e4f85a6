import numpy as np
import pytest

from circuit import DetectorPhase, OpCode, SiteKind, build_repetition_code_memory, build_surface_code_memory
from noise_model import instantiate_noisy_circuit, sample_error_model
from simulator import (
    BLOCK_SHOTS, FrameSimulator, Injection, UnboundNoiseError, count_events, derive_seed,
    detection_fractions, inject_errors, pack_bits, popcount_rows, read_records, sample,
    unpack_bits, write_records,
)


def _channel_paulis(ins):
    """(probability, paulis) of every non-identity Pauli a noise instruction applies"""
    if ins.op == OpCode.X_FLIP:
        return [(ins.prob, ((ins.targets[0], "X"),))]
    if ins.op == OpCode.DEPOLARIZE1:
        return [(ins.prob / 3.0, ((ins.targets[0], p),)) for p in "XYZ"]
    a, b = ins.targets
    out = []
    for pa in "IXYZ":
        for pb in "IXYZ":
            if pa == pb == "I":
                continue
            paulis = tuple((q, p) for q, p in ((a, pa), (b, pb)) if p != "I")
            out.append((ins.prob / 15.0, paulis))
    return out


def exact_detection_probabilities(circuit):
    """Per-detector event probability from independent channels and their exclusive Paulis"""
    keep = np.ones(circuit.num_detectors)
    for pos, ins in circuit.noise_instructions():
        paulis = _channel_paulis(ins)
        flips, _ = inject_errors(circuit, [Injection(pos, p) for _, p in paulis])
        probs = np.array([q for q, _ in paulis])
        p_channel = flips.astype(float) @ probs
        keep *= 1.0 - 2.0 * p_channel
    return (1.0 - keep) / 2.0


class TestBitPacking:
    def test_pack_unpack(self, rng):
        bits = rng.random((3, 130)) < 0.5
        np.testing.assert_array_equal(unpack_bits(pack_bits(bits), 130), bits)

    def test_popcount(self, rng):
        bits = rng.random((4, 200)) < 0.3
        np.testing.assert_array_equal(popcount_rows(pack_bits(bits)), bits.sum(axis=1))


class TestDeriveSeed:
    def test_stable_and_label_sensitive(self):
        assert derive_seed(5, "candidate", 3) == derive_seed(5, "candidate", 3)
        assert derive_seed(5, "candidate", 3) != derive_seed(5, "candidate", 4)
        assert derive_seed(5, "candidate") != derive_seed(6, "candidate")


class TestSampling:
    def test_noiseless_circuit_has_no_detections(self, surface_d3):
        sim = FrameSimulator(surface_d3)
        n_sites = len(surface_d3.sites)
        rec = sim.run(3000, seed=1, site_eps=np.zeros(n_sites), flip_probs=np.zeros(n_sites))
        assert count_events(rec) == 0
        assert rec.logical_count == 0

    def test_x_basis_noiseless(self):
        circuit = build_surface_code_memory(3, 3, "X")
        n_sites = len(circuit.sites)
        rec = FrameSimulator(circuit).run(2048, seed=2, site_eps=np.zeros(n_sites), flip_probs=np.zeros(n_sites))
        assert count_events(rec) == 0
        assert rec.logical_count == 0

    def test_seed_reproducibility(self, surface_d3):
        sim = FrameSimulator(surface_d3)
        eps = np.full(len(surface_d3.sites), 0.01)
        a = sim.run(2500, seed=9, site_eps=eps, flip_probs=eps)
        b = sim.run(2500, seed=9, site_eps=eps, flip_probs=eps)
        c = sim.run(2500, seed=10, site_eps=eps, flip_probs=eps)
        np.testing.assert_array_equal(a.events, b.events)
        np.testing.assert_array_equal(a.logical_flips, b.logical_flips)
        assert not np.array_equal(a.events, c.events)

    def test_parallel_equals_serial(self, surface_d3):
        sim = FrameSimulator(surface_d3)
        eps = np.full(len(surface_d3.sites), 0.01)
        serial = sim.run(4 * BLOCK_SHOTS, seed=3, site_eps=eps, flip_probs=eps, threads=1)
        parallel = sim.run(4 * BLOCK_SHOTS, seed=3, site_eps=eps, flip_probs=eps, threads=4)
        np.testing.assert_array_equal(serial.events, parallel.events)
        np.testing.assert_array_equal(serial.logical_flips, parallel.logical_flips)

    def test_blocks_are_independent_of_run_length(self, surface_d3):
        sim = FrameSimulator(surface_d3)
        eps = np.full(len(surface_d3.sites), 0.02)
        long = sim.run(2 * BLOCK_SHOTS, seed=6, site_eps=eps, flip_probs=eps)
        first = sim.run(BLOCK_SHOTS, seed=6, site_eps=eps, flip_probs=eps)
        second = sim.run(BLOCK_SHOTS, seed=6, site_eps=eps, flip_probs=eps, first_block=1)
        np.testing.assert_array_equal(long.events, np.hstack([first.events, second.events]))
        np.testing.assert_array_equal(long.logical_flips, np.concatenate([first.logical_flips, second.logical_flips]))

    def test_full_depolarization_randomizes_bulk_detectors(self, surface_d3):
        site_eps = np.array([0.75 if site.kind == SiteKind.SQ else 0.9375 for site in surface_d3.sites])
        rec = FrameSimulator(surface_d3).run(
            100 * BLOCK_SHOTS, seed=11, site_eps=site_eps, flip_probs=np.full(len(surface_d3.sites), 0.5)
        )
        rates, _ = detection_fractions(rec)
        bulk = [det.det_id for det in surface_d3.detectors if det.phase == DetectorPhase.BULK]
        assert np.all((rates[bulk] >= 0.4) & (rates[bulk] <= 0.6))

    def test_tail_bits_are_cleared(self, repetition_d3):
        eps = np.full(len(repetition_d3.sites), 0.3)
        rec = FrameSimulator(repetition_d3).run(100, seed=4, site_eps=eps, flip_probs=eps)
        assert rec.events.shape == (repetition_d3.num_detectors, 2)
        assert rec.events_bool().shape == (repetition_d3.num_detectors, 100)
        assert np.all(rec.events[:, 1] >> np.uint64(36) == 0)

    def test_unbound_noise(self, surface_d3):
        with pytest.raises(UnboundNoiseError):
            FrameSimulator(surface_d3).run(10, seed=0)

    def test_invalid_shots(self, surface_d3):
        with pytest.raises(ValueError, match="shots"):
            FrameSimulator(surface_d3).run(0, seed=0, site_eps=np.zeros(len(surface_d3.sites)))

    def test_bound_circuit_matches_site_arrays(self, surface_d3, surface_model):
        p = np.full(surface_model.num_params, 0.5)
        bound = instantiate_noisy_circuit(surface_d3, surface_model, p, 0.0)
        from noise_model import site_epsilons
        direct = FrameSimulator(surface_d3).run(
            2048, seed=5, site_eps=site_epsilons(surface_model, 0.0, p), flip_probs=surface_model.flip_probabilities()
        )
        np.testing.assert_array_equal(sample(bound, 2048, seed=5).events, direct.events)


class TestDetectionOracle:
    def test_matches_exhaustive_enumeration(self):
        circuit = build_repetition_code_memory(3, 2)
        model = sample_error_model(0, circuit, eps_tilde_range=(0.01, 0.03), readout_error=0.02)
        noisy = instantiate_noisy_circuit(circuit, model, np.zeros(model.num_params), 0.0)
        exact = exact_detection_probabilities(noisy)

        shots = 1000 * BLOCK_SHOTS
        rates, _ = detection_fractions(sample(noisy, shots, seed=17))
        stderr = np.sqrt(exact * (1 - exact) / shots)
        assert np.all(np.abs(rates - exact) <= 3 * stderr)


class TestInjection:
    def _final_flip(self, circuit, qubit):
        return max(pos for pos, ins in circuit.noise_instructions()
                   if ins.op == OpCode.X_FLIP and ins.targets == (qubit,))

    def test_x_before_final_measurement(self, surface_d3):
        pos = self._final_flip(surface_d3, 0)
        dets, obs = inject_errors(surface_d3, [Injection(pos, ((0, "X"),))])
        assert obs[0]
        flipped = np.flatnonzero(dets[:, 0])
        assert flipped.size >= 1
        assert all(surface_d3.detectors[k].phase == DetectorPhase.FINAL for k in flipped)

    def test_z_before_z_measurement_is_harmless(self, surface_d3):
        pos = self._final_flip(surface_d3, 0)
        dets, obs = inject_errors(surface_d3, [Injection(pos, ((0, "Z"),))])
        assert not dets.any()
        assert not obs.any()

    def test_bad_position(self, surface_d3):
        with pytest.raises(ValueError, match="outside"):
            inject_errors(surface_d3, [Injection(-1, ((0, "X"),))])


class TestRecordDump:
    def test_write_and_read(self, tmp_path, repetition_d3):
        eps = np.full(len(repetition_d3.sites), 0.05)
        rec = FrameSimulator(repetition_d3).run(300, seed=8, site_eps=eps, flip_probs=eps)
        path = write_records(tmp_path / "rec.qsdr", rec)
        assert path.read_bytes()[:5] == b"QSDR1"
        back = read_records(path, cycles_per_shot=rec.cycles_per_shot)
        np.testing.assert_array_equal(back.events, rec.events)
        np.testing.assert_array_equal(back.logical_flips, rec.logical_flips)
        assert back.shots == 300
