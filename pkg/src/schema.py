from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional, Tuple
from enum import Enum
from pathlib import Path

import yaml


CONFIG_SCHEMA_VERSION = 1


class CodeFamily(str, Enum):
    """Memory-experiment code families"""
    REPETITION = "repetition"
    SURFACE = "surface"


class MemoryBasis(str, Enum):
    """Basis the logical qubit is prepared and measured in"""
    X = "X"
    Z = "Z"


class DriftKind(str, Enum):
    """Time dependence of the optimal control parameters"""
    NONE = "none"
    SINUSOID = "sinusoid"
    STEP = "step"
    STROBOSCOPIC = "stroboscopic"


class DecoderMethod(str, Enum):
    """Decoders available to the evaluation passes"""
    MWPM = "mwpm"
    UNION_FIND = "uf"
    EXHAUSTIVE = "exhaustive"


class PriorKind(str, Enum):
    """Where decoding-graph mechanism probabilities come from"""
    TRUE_MODEL = "true-model"
    UNIFORM = "uniform"


class DriftSpec(BaseModel):
    """Drift profile of the optimal policy, in epoch units"""
    model_config = ConfigDict(frozen=True)

    kind: DriftKind = Field(DriftKind.NONE, description="Drift profile kind")
    frequency: float = Field(0.0, ge=0.0, description="SINUSOID frequency in 1/epochs")
    amplitude: float = Field(1.0, description="SINUSOID amplitude A")
    t0: float = Field(0.0, ge=0.0, description="STEP onset epoch")
    delta: float = Field(0.0, description="STEP / STROBOSCOPIC offset")
    period: float = Field(1.0, gt=0.0, description="STROBOSCOPIC period in epochs")
    duty: float = Field(0.5, ge=0.0, le=1.0, description="STROBOSCOPIC fraction of the period spent displaced")
    sites: Optional[List[int]] = Field(None, description="Restrict drift to these site ids (localized injection)")


class NoiseSpec(BaseModel):
    """Quadratic error-model parameters"""
    model_config = ConfigDict(frozen=True)

    params_per_site: int = Field(1, ge=1, description="Control parameters per gate site (P)")
    omega_range: Tuple[float, float] = Field((0.01, 0.1), description="Uniform range of sensitivities")
    eps_tilde_range: Tuple[float, float] = Field((5e-4, 2e-3), description="Uniform range of irreducible rates")
    eps_max_1q: float = Field(0.75, gt=0.0, le=0.75, description="Clamp for single-qubit sites")
    eps_max_2q: float = Field(0.9375, gt=0.0, le=0.9375, description="Clamp for CZ sites")
    readout_error: Optional[float] = Field(None, ge=0.0, le=1.0, description="X_FLIP probability; defaults to the site's irreducible rate")
    drift: DriftSpec = Field(default_factory=DriftSpec, description="Drift of the optimal policy")

    @field_validator("omega_range", "eps_tilde_range")
    @classmethod
    def _check_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if lo < 0 or hi < 0:
            raise ValueError(f"range endpoints must be non-negative, got {value}")
        if lo > hi:
            raise ValueError(f"range must satisfy lo <= hi, got {value}")
        return value


class AgentHyperparams(BaseModel):
    """Policy-gradient agent settings"""
    model_config = ConfigDict(frozen=True)

    batch: int = Field(50, ge=2, description="Candidates per epoch (B), even")
    learning_rate: float = Field(0.05, gt=0.0, description="Step size (eta)")
    clip_ratio: float = Field(0.2, gt=0.0, le=1.0, description="Importance-ratio clip (kappa)")
    entropy_coef: float = Field(0.01, ge=0.0, description="Entropy regularization (lambda_H)")
    buffer_epochs: int = Field(4, ge=1, description="Replay buffer capacity in epochs (K)")
    sigma_min: float = Field(1e-3, gt=0.0, description="Lower bound on sigma")
    sigma_max: float = Field(1.0, gt=0.0, description="Upper bound on sigma")
    sigma_init: float = Field(0.15, gt=0.0, description="Initial sigma in rescaled units")
    masked: bool = Field(True, description="Restrict advantages to adjacent detector classes")

    @field_validator("batch")
    @classmethod
    def _even_batch(cls, value: int) -> int:
        if value % 2:
            raise ValueError(f"batch must be even for mirrored sampling, got {value}")
        return value

    @model_validator(mode="after")
    def _sigma_bounds(self) -> "AgentHyperparams":
        if not self.sigma_min <= self.sigma_init <= self.sigma_max:
            raise ValueError("sigma_init must lie within [sigma_min, sigma_max]")
        return self


class EvaluationSpec(BaseModel):
    """Periodic decoded evaluation of the learned policy"""
    model_config = ConfigDict(frozen=True)

    every: int = Field(5, ge=1, description="Evaluate every this many epochs")
    shots: int = Field(20_000, ge=1, description="Shots per evaluation")
    decode: bool = Field(False, description="Decode evaluation records into LER")
    decoder: DecoderMethod = Field(DecoderMethod.MWPM, description="Decoder used for evaluation")
    prior: PriorKind = Field(PriorKind.TRUE_MODEL, description="Decoding-graph prior")
    prior_q0: float = Field(1e-3, gt=0.0, lt=0.5, description="Mechanism probability for the uniform prior")


class CalibrationSpec(BaseModel):
    """Sensitivity-rescaling sweep"""
    model_config = ConfigDict(frozen=True)

    enabled: bool = Field(False, description="Run calibration before steering")
    sigma_grid: List[float] = Field([0.0, 0.05, 0.1, 0.2, 0.4], description="Physical perturbation widths")
    shots: int = Field(100_000, ge=1, description="Shots per grid point")
    draws: int = Field(4, ge=1, description="Perturbation draws averaged per grid point")

    @field_validator("sigma_grid")
    @classmethod
    def _grid(cls, value: List[float]) -> List[float]:
        if len(value) < 3:
            raise ValueError("sigma_grid needs at least 3 points")
        if any(s < 0 for s in value):
            raise ValueError("sigma_grid entries must be non-negative")
        return value


class ScalingSpec(BaseModel):
    """Scaling study over code distances and parameters per gate"""
    model_config = ConfigDict(frozen=True)

    distances: List[int] = Field([3, 5, 7], description="Odd code distances")
    params_per_site: List[int] = Field([1, 10], description="P values")
    init_halfwidth: Optional[float] = Field(None, gt=0.0, description="Uniform init half-width; None sizes it from init_excess")
    init_excess: float = Field(4e-3, gt=0.0, description="Target mean excess error rate at initialization")
    reference_shots: int = Field(100_000, ge=1, description="Shots for the optimal-policy reference LER")
    transient_epochs: int = Field(10, ge=0, description="Epochs skipped before fitting gamma")

    @field_validator("distances")
    @classmethod
    def _odd(cls, value: List[int]) -> List[int]:
        if any(d < 3 or d % 2 == 0 for d in value):
            raise ValueError(f"distances must be odd and >= 3, got {value}")
        return value


class RecoverySpec(BaseModel):
    """Randomized-recovery and fine-tune runs"""
    model_config = ConfigDict(frozen=True)

    target_low: float = Field(0.45, gt=0.0, lt=0.5, description="Lower edge of the spoiled logical error probability")
    target_high: float = Field(0.5, gt=0.0, le=0.5, description="Upper edge of the spoiled logical error probability")
    calibration_error: float = Field(0.05, ge=0.0, description="Residual miscalibration of the fine-tune start (rescaled)")
    tolerance: float = Field(1.1, ge=1.0, description="Recovered when P_err <= tolerance * calibrated P_err")
    max_search_steps: int = Field(40, ge=1, description="Spoiling search budget")


class GradcheckSpec(BaseModel):
    """Gradient-relation check"""
    model_config = ConfigDict(frozen=True)

    directions: int = Field(40, ge=1, description="Random directions")
    delta: float = Field(0.1, gt=0.0, description="Per-coordinate std of each direction (rescaled)")
    base_offset: float = Field(0.1, ge=0.0, description="Std of the random offset of the base policy from optimum")
    shots: int = Field(1_000_000, ge=1, description="Shots per evaluation")
    min_logical_errors: int = Field(20, ge=1, description="Fewer logical errors than this is unresolved")


class OutputSpec(BaseModel):
    """Output locations and debug dumps"""
    model_config = ConfigDict(frozen=True)

    out_dir: str = Field("runs/default", description="Output directory")
    dump_model: bool = Field(False, description="Write model.json")
    dump_graph: bool = Field(False, description="Write graph.json")
    dump_records: bool = Field(False, description="Write QSDR1 record dumps")
    checkpoint_every: int = Field(0, ge=0, description="Checkpoint cadence in epochs (0 disables)")


class ExperimentConfig(BaseModel):
    """Complete, serializable description of one experiment"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    schema_version: int = Field(CONFIG_SCHEMA_VERSION, alias="schema", description="Config schema version")
    code: CodeFamily = Field(CodeFamily.SURFACE, description="Code family")
    d: int = Field(3, ge=3, description="Code distance (odd)")
    cycles: int = Field(10, ge=1, description="QEC cycles per shot (T)")
    basis: MemoryBasis = Field(MemoryBasis.Z, description="Memory basis")
    cycles_per_candidate: int = Field(3_600, ge=1, description="QEC cycles simulated per candidate; shots = this / T")
    epochs: int = Field(300, ge=1, description="Training epochs")
    seed: int = Field(0, ge=0, description="Root seed")
    threads: int = Field(1, ge=1, description="Worker threads")
    normalize_by_reference: bool = Field(False, description="Divide steering traces by a no-drift reference run")
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    agent: AgentHyperparams = Field(default_factory=AgentHyperparams)
    evaluation: EvaluationSpec = Field(default_factory=EvaluationSpec)
    calibration: CalibrationSpec = Field(default_factory=CalibrationSpec)
    scaling: ScalingSpec = Field(default_factory=ScalingSpec)
    recovery: RecoverySpec = Field(default_factory=RecoverySpec)
    gradcheck: GradcheckSpec = Field(default_factory=GradcheckSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @field_validator("schema_version")
    @classmethod
    def _known_schema(cls, value: int) -> int:
        if value != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema {value}")
        return value

    @field_validator("d")
    @classmethod
    def _odd_distance(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"code distance must be odd, got {value}")
        return value

    @model_validator(mode="after")
    def _consistent_budget(self) -> "ExperimentConfig":
        if self.cycles_per_candidate % self.cycles:
            raise ValueError(
                f"cycles_per_candidate ({self.cycles_per_candidate}) must be a multiple of cycles ({self.cycles})"
            )
        if self.code == CodeFamily.REPETITION and self.basis != MemoryBasis.Z:
            raise ValueError("the repetition code supports Z-basis memory only")
        return self

    @property
    def shots_per_candidate(self) -> int:
        return self.cycles_per_candidate // self.cycles

    @property
    def training_cycles(self) -> int:
        """Cycles consumed by the training candidates of a full run"""
        return self.epochs * self.agent.batch * self.cycles_per_candidate

    def with_overrides(self, **updates) -> "ExperimentConfig":
        """Copy with top-level and dotted nested updates, re-validated"""
        data = self.model_dump(by_alias=True)
        for key, value in updates.items():
            if value is None:
                continue
            target = data
            parts = key.split(".")
            for part in parts[:-1]:
                target = target[part]
            target[parts[-1]] = value
        return ExperimentConfig.model_validate(data)


def dump_config(cfg: ExperimentConfig) -> str:
    """JSON text that ``parse_config`` turns back into an equal config"""
    return cfg.model_dump_json(by_alias=True, indent=2)


def parse_config(text: str) -> ExperimentConfig:
    """Parse a JSON or YAML config document"""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return ExperimentConfig.model_validate_json(text)
    return ExperimentConfig.model_validate(yaml.safe_load(text) or {})


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
