import pytest
from pydantic import ValidationError

from schema import (
    CodeFamily, DecoderMethod, DriftKind, ExperimentConfig, dump_config, load_config, parse_config,
)


class TestExperimentConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.d == 3
        assert cfg.shots_per_candidate == 360
        assert cfg.training_cycles == 300 * 50 * 3_600
        assert cfg.noise.drift.kind == DriftKind.NONE

    def test_json_round_trip(self):
        cfg = ExperimentConfig().with_overrides(**{
            "seed": 17,
            "noise.drift.kind": "sinusoid",
            "noise.drift.frequency": 0.02,
            "evaluation.decoder": "uf",
        })
        text = dump_config(cfg)
        assert '"schema": 1' in text
        assert parse_config(text) == cfg

    def test_yaml(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text(
            "d: 5\n"
            "cycles: 4\n"
            "cycles_per_candidate: 400\n"
            "noise:\n"
            "  params_per_site: 3\n"
            "  drift:\n"
            "    kind: step\n"
            "    t0: 20\n"
            "    delta: 0.1\n"
            "agent:\n"
            "  batch: 10\n",
            encoding="utf-8",
        )
        cfg = load_config(path)
        assert cfg.d == 5
        assert cfg.shots_per_candidate == 100
        assert cfg.noise.params_per_site == 3
        assert cfg.noise.drift.kind == DriftKind.STEP
        assert cfg.agent.batch == 10

    def test_empty_yaml_gives_defaults(self):
        assert parse_config("") == ExperimentConfig()

    def test_overrides_skip_none(self):
        cfg = ExperimentConfig().with_overrides(seed=None, threads=4)
        assert cfg.seed == 0
        assert cfg.threads == 4

    def test_overrides_are_validated(self):
        with pytest.raises(ValidationError):
            ExperimentConfig().with_overrides(**{"agent.batch": 7})

    @pytest.mark.parametrize("data, message", [
        ({"d": 4}, "odd"),
        ({"agent": {"batch": 5}}, "even"),
        ({"cycles": 7}, "multiple of cycles"),
        ({"schema": 2}, "schema"),
        ({"code": "repetition", "basis": "X"}, "Z-basis"),
        ({"noise": {"omega_range": [0.2, 0.1]}}, "lo <= hi"),
        ({"calibration": {"sigma_grid": [0.0, 0.1]}}, "at least 3"),
        ({"scaling": {"distances": [3, 4]}}, "odd"),
        ({"agent": {"sigma_init": 5.0}}, "sigma_init"),
    ])
    def test_invalid(self, data, message):
        with pytest.raises(ValidationError, match=message):
            ExperimentConfig.model_validate(data)

    def test_enums_parse_from_strings(self):
        cfg = ExperimentConfig.model_validate({"code": "repetition", "evaluation": {"decoder": "exhaustive"}})
        assert cfg.code == CodeFamily.REPETITION
        assert cfg.evaluation.decoder == DecoderMethod.EXHAUSTIVE
