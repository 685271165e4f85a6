import json
import math

import numpy as np
import pytest

from experiments import (
    ResolutionError, ScenarioTrace, SpoilingError, analyze_psd, fit_gamma, fit_step_response,
    lambda_estimates, lambda_ratio, measure_step_response, normalized_improvement, profile_manager,
    run_finetune, run_gradient_relation_check, run_phase_diagram, run_randomized_recovery, run_scaling,
    run_steering,
)
from decoder import lambda_point_estimate
from experiments.scaling import ScalingRun
from experiments.steering import SCENARIOS, summarize
from noise_model import total_parameter_count
from results_store import ResultStore


class TestSteeringAdvantage:
    def test_normalized_improvement(self):
        assert normalized_improvement(100, 50, 75) == pytest.approx(0.5)
        assert normalized_improvement(100, 50, 50) == pytest.approx(1.0)
        assert normalized_improvement(100, 50, 120) == pytest.approx(-0.4)

    def test_undefined_when_fixed_equals_optimal(self):
        assert normalized_improvement(80, 80, 70) is None

    def test_step_response_fit(self):
        epochs = np.arange(60, dtype=float)
        values = np.where(epochs < 10, 1.0, 1.0 + 0.5 * (1.0 - np.exp(-(epochs - 10) / 8.0)))
        fit = fit_step_response(epochs, values, t0=10)
        assert not fit.flagged
        assert fit.tau == pytest.approx(8.0, rel=1e-3)
        assert fit.amplitude == pytest.approx(0.5, rel=1e-3)
        assert fit.baseline == pytest.approx(1.0, abs=1e-4)

    def test_step_response_needs_samples_after_step(self):
        with pytest.raises(ValueError, match="at least 3"):
            fit_step_response([0, 1, 2, 3], [1, 1, 1, 1], t0=3)

    def test_step_response_from_trace(self):
        values = [0.0 if e < 10 else 0.3 * (1.0 - math.exp(-(e - 10) / 8.0)) for e in range(60)]
        trace = ScenarioTrace(records=[{"epoch": e, "mu_drift": v} for e, v in enumerate(values)], step_t0=10.0)
        response = measure_step_response(trace)
        assert response.tau == pytest.approx(8.0, rel=1e-3)
        assert response.amplitude == pytest.approx(0.3, rel=1e-3)

    def test_no_step_response_without_step_drift(self):
        assert measure_step_response(ScenarioTrace(records=[{"epoch": 0, "mu_drift": 0.0}])) is None

    def test_step_response_flagged_when_too_short(self):
        trace = ScenarioTrace(records=[{"epoch": e, "mu_drift": 0.0} for e in range(3)], step_t0=2.0)
        response = measure_step_response(trace)
        assert response.flagged
        assert math.isnan(response.tau)


class TestScalingFits:
    def test_gamma_from_exponential_approach(self):
        t = np.arange(0, 100, dtype=float)
        lambdas = 2.0 * (1.0 - 0.8 * np.exp(-0.05 * t))
        fit = fit_gamma(t, lambdas, lambda_star=2.0)
        assert not fit.flagged
        assert fit.gamma_exp == pytest.approx(0.05, rel=1e-6)
        assert fit.gamma_fd == pytest.approx(0.05, rel=1e-2)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.ci_low <= fit.gamma_exp <= fit.ci_high

    def test_gamma_needs_three_points(self):
        fit = fit_gamma([0, 1], [0.5, 0.6], lambda_star=1.0)
        assert fit.flagged
        assert math.isnan(fit.gamma_exp)

    def test_transient_is_skipped(self):
        t = np.arange(0, 50, dtype=float)
        lambdas = 1.0 - 0.5 * np.exp(-0.1 * t)
        lambdas[:5] = np.nan
        fit = fit_gamma(t, lambdas, lambda_star=1.0, skip=5)
        assert fit.gamma_exp == pytest.approx(0.1, rel=1e-6)

    def test_lambda_ratio(self):
        assert lambda_ratio(1e-3, 1e-3, 3) == pytest.approx(1.0)
        assert lambda_ratio(4e-3, 1e-3, 3) == pytest.approx(0.5)
        assert math.isnan(lambda_ratio(0.0, 1e-3, 3))
        assert math.isnan(lambda_ratio(1e-3, 0.0, 5))

    def test_lambda_estimates(self):
        run = ScalingRun(d=5, P=1, P_tot=total_parameter_count(5, 1), halfwidth=0.1, eps_L_star=1e-3,
                         physical_error_rate=0.0, epochs=[0, 5, 10], eps_L=[8e-3, 0.0, 1e-3])
        lambdas = lambda_estimates(run, lambda_star=2.0)
        assert lambdas[0] == pytest.approx(lambda_point_estimate(8e-3, 5, 2.0, 1e-3))
        assert lambdas[0] == pytest.approx(1.0)
        assert math.isnan(lambdas[1])
        assert lambdas[2] == pytest.approx(2.0)

    def test_lambda_estimates_without_reference_rate(self):
        run = ScalingRun(d=3, P=1, P_tot=total_parameter_count(3, 1), halfwidth=0.1, eps_L_star=0.0,
                         physical_error_rate=0.0, epochs=[0], eps_L=[1e-3])
        assert math.isnan(lambda_estimates(run, lambda_star=2.0)[0])


class TestPSD:
    def _white(self, rng, count, length=256):
        return [1.0 + 0.1 * rng.standard_normal(length) for _ in range(count)]

    def test_identical_traces_give_unit_filter(self, rng):
        traces = self._white(rng, 4)
        result = analyze_psd(traces, traces)
        np.testing.assert_allclose(result.filter_db, 0.0, atol=1e-9)
        assert len(result.rows()) == 64

    def test_grid_spans_lowest_frequency_to_nyquist(self, rng):
        result = analyze_psd(self._white(rng, 2, 100), self._white(rng, 2, 128), grid_points=16)
        assert result.freqs[0] == pytest.approx(1.0 / 100)
        assert result.freqs[-1] == pytest.approx(0.5)
        assert result.freqs.size == 16

    def test_white_noise_is_flat(self, rng):
        result = analyze_psd(self._white(rng, 200), self._white(rng, 200))
        assert np.all(np.abs(result.filter_db) < 3.0)

    def test_low_band_attenuation(self, rng):
        fixed = self._white(rng, 8)
        steered = []
        for x in fixed:
            spectrum = np.fft.rfft(x)
            spectrum[1:64] *= 0.5
            steered.append(np.fft.irfft(spectrum, n=x.size))
        result = analyze_psd(fixed, steered)
        low = result.freqs < 0.2
        high = result.freqs > 0.26
        np.testing.assert_allclose(result.filter_db[low], 10 * np.log10(0.25), atol=1e-6)
        np.testing.assert_allclose(result.filter_db[high], 0.0, atol=1e-6)

    def test_smoothing_keeps_constant_filter(self, rng):
        traces = self._white(rng, 3)
        result = analyze_psd(traces, traces, smoothing_sigma=2.0)
        np.testing.assert_allclose(result.filter_db, 0.0, atol=1e-9)

    def test_short_trace_rejected(self, rng):
        with pytest.raises(ValueError, match="too short"):
            analyze_psd([np.ones(5)], self._white(rng, 1))


class TestProfiles:
    def test_supported_profiles(self):
        assert set(profile_manager.get_supported_profiles()) == {"desk", "full", "smoke"}
        assert profile_manager.get_config("nope") is None

    def test_full_budget(self):
        cfg = profile_manager.get_config("full")
        assert cfg.cycles_per_candidate == 36_000
        assert cfg.shots_per_candidate == 3_600
        assert cfg.training_cycles == 1000 * 50 * 36_000

    def test_profile_applies_over_base(self):
        base = profile_manager.get_config("desk").with_overrides(seed=42)
        assert profile_manager.get_config("smoke", base).seed == 42


class TestRunSteering:
    def test_records_and_budget(self, smoke_config):
        trace = run_steering(smoke_config, quiet=True)
        assert trace.epochs == [0, 1, 2]
        assert set(trace.records[0]["scenarios"]) == set(SCENARIOS)
        assert trace.training_cycles == smoke_config.training_cycles
        assert trace.scenario_cycles == 3 * trace.training_cycles
        assert all(trace.events(s).min() >= 0 for s in SCENARIOS)

    def test_deterministic(self, smoke_config):
        a = run_steering(smoke_config, quiet=True)
        b = run_steering(smoke_config, quiet=True)
        for s in SCENARIOS:
            np.testing.assert_array_equal(a.events(s), b.events(s))
        np.testing.assert_array_equal(a.mu_drift(), b.mu_drift())

    def test_parallel_candidates_match_serial(self, smoke_config):
        serial = run_steering(smoke_config, quiet=True)
        parallel = run_steering(smoke_config.with_overrides(threads=3), quiet=True)
        for s in SCENARIOS:
            np.testing.assert_array_equal(serial.events(s), parallel.events(s))

    def test_store_outputs(self, smoke_config, tmp_path):
        store = ResultStore(smoke_config.output.out_dir)
        trace = run_steering(smoke_config, store=store, quiet=True)
        lines = ResultStore.read_trace(store.path(ResultStore.TRACE))
        assert len(lines) == 3
        restored = ScenarioTrace.from_records(lines)
        np.testing.assert_array_equal(restored.events("fixed"), trace.events("fixed"))
        assert store.path(ResultStore.SUMMARY).exists()

    def test_step_drift_reports_response_time(self, smoke_config):
        cfg = smoke_config.with_overrides(**{
            "noise.drift.kind": "step",
            "noise.drift.t0": 0.0,
            "noise.drift.delta": 0.2,
        })
        store = ResultStore(cfg.output.out_dir)
        trace = run_steering(cfg, store=store, quiet=True)
        assert trace.step_t0 == 0.0
        summary = json.loads(store.path(ResultStore.SUMMARY).read_text(encoding="utf-8"))
        assert "response_tau" in summary
        assert set(summary["step_response"]) == {"tau", "amplitude", "baseline", "flagged"}
        lines = store.path("response.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t0,tau,amplitude,baseline,flagged"
        assert len(lines) == 2

    def test_no_response_time_without_step(self, smoke_config):
        summary = summarize(run_steering(smoke_config, quiet=True))
        assert "response_tau" not in summary

    def test_reference_scenario(self, smoke_config):
        cfg = smoke_config.with_overrides(normalize_by_reference=True)
        trace = run_steering(cfg, quiet=True)
        assert trace.has("reference")
        summary = summarize(trace)
        assert set(summary["normalized_mean_dr"]) == set(SCENARIOS)

    def test_resume_matches_uninterrupted_run(self, smoke_config, tmp_path):
        fresh = run_steering(smoke_config, quiet=True)

        cfg = smoke_config.with_overrides(**{
            "output.out_dir": str(tmp_path / "resumed"),
            "output.checkpoint_every": 2,
        })
        store = ResultStore(cfg.output.out_dir)
        run_steering(cfg.with_overrides(epochs=2), store=store, quiet=True)
        assert store.load_checkpoint() is not None
        resumed = run_steering(cfg, store=store, resume=True, quiet=True)

        assert resumed.epochs == fresh.epochs
        for s in SCENARIOS:
            np.testing.assert_array_equal(resumed.events(s), fresh.events(s))
        assert resumed.training_cycles == fresh.training_cycles
        assert len(ResultStore.read_trace(store.path(ResultStore.TRACE))) == 3


class TestPhaseDiagram:
    def test_single_point(self, smoke_config):
        diagram = run_phase_diagram(smoke_config, [0.05], [0.01], quiet=True)
        assert len(diagram.points) == 1
        point = diagram.point(0.05, 0.01)
        assert point is not None
        assert point.error is None
        assert set(point.cumulative_events) == set(SCENARIOS)
        assert diagram.rows()[0]["lambda_H"] == 0.01

    def test_empty_grid(self, smoke_config):
        with pytest.raises(ValueError, match="non-empty"):
            run_phase_diagram(smoke_config, [], [0.01])


class TestGradientRelation:
    def test_unresolved_rate(self, smoke_config):
        cfg = smoke_config.with_overrides(**{
            "gradcheck.shots": 64,
            "gradcheck.min_logical_errors": 1_000_000,
        })
        with pytest.raises(ResolutionError, match="increase gradcheck.shots"):
            run_gradient_relation_check(cfg, quiet=True)


class TestScalingRun:
    def test_smoke_run(self, smoke_config):
        result = run_scaling(smoke_config, quiet=True)
        assert len(result.runs) == 1
        run = result.runs[0]
        assert (run.d, run.P) == (3, 1)
        assert run.P_tot == total_parameter_count(3, 1)
        assert run.epochs == [0, 1, 2]
        assert len(run.lambda_ratio) == 3
        assert run.gamma is not None
        assert len(result.rows()) == 3
        assert result.summary()["runs"][0]["P_tot"] == run.P_tot

    def test_even_distance_rejected(self, smoke_config):
        with pytest.raises(ValueError, match="odd"):
            run_scaling(smoke_config, d_list=[4], quiet=True)


class TestRecovery:
    def test_finetune_smoke(self, smoke_config):
        result = run_finetune(smoke_config, quiet=True)
        assert result.label == "finetune"
        assert len(result.evaluations) == 3
        assert result.target_p_err == pytest.approx(1.1 * result.calibrated_p_err)
        assert 0.0 <= result.final_p_err <= 1.0
        assert len(result.final_quartiles) == 3
        assert set(result.summary()) >= {"initial_p_err", "final_p_err", "epochs_to_target"}

    def test_spoiling_budget_exhausted(self, smoke_config):
        cfg = smoke_config.with_overrides(**{"recovery.max_search_steps": 1})
        with pytest.raises(SpoilingError, match="could not reach"):
            run_randomized_recovery(cfg, quiet=True)
