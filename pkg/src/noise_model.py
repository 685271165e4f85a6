"""
Quadratic, time-dependent error model over learnable per-site parameters.

A site's depolarizing rate is

    eps_i(t, p) = eps_tilde_i + sum_j Omega_ij * (sigma0_ij * p_ij - p_opt_ij(t))**2

clamped to [0, eps_max]. Policies live in rescaled units; ``sigma0`` converts
them to physical offsets. ``p_opt`` follows each parameter's drift profile.
"""

from typing import Dict, List, Optional, Sequence
from dataclasses import dataclass, replace
import logging
import math

import numpy as np

# Conditional imports for different execution contexts
try:
    from .circuit import Circuit, OpCode, SiteKind, bind_probabilities
    from .schema import DriftKind, DriftSpec
    from .simulator import derive_seed
except ImportError:
    from circuit import Circuit, OpCode, SiteKind, bind_probabilities
    from schema import DriftKind, DriftSpec
    from simulator import derive_seed

logger = logging.getLogger(__name__)


class NoiseModelError(ValueError):
    """Invalid error-model inputs"""


@dataclass(frozen=True)
class ControlParameter:
    param_id: int
    site_id: int
    slot: int
    scale: float = 1.0


@dataclass(frozen=True)
class DriftProfile:
    kind: DriftKind = DriftKind.NONE
    frequency: float = 0.0
    amplitude: float = 1.0
    t0: float = 0.0
    delta: float = 0.0
    period: float = 1.0
    duty: float = 0.5

    @classmethod
    def from_spec(cls, spec: DriftSpec) -> "DriftProfile":
        return cls(spec.kind, spec.frequency, spec.amplitude, spec.t0, spec.delta, spec.period, spec.duty)

    def value(self, t: float) -> float:
        if self.kind == DriftKind.SINUSOID:
            return self.amplitude * math.sin(2.0 * math.pi * self.frequency * t)
        if self.kind == DriftKind.STEP:
            return self.delta if t >= self.t0 else 0.0
        if self.kind == DriftKind.STROBOSCOPIC:
            return self.delta if (t % self.period) < self.duty * self.period else 0.0
        return 0.0

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {"kind": self.kind.value}
        if self.kind == DriftKind.SINUSOID:
            out.update(frequency=self.frequency, amplitude=self.amplitude)
        elif self.kind == DriftKind.STEP:
            out.update(t0=self.t0, delta=self.delta)
        elif self.kind == DriftKind.STROBOSCOPIC:
            out.update(period=self.period, duty=self.duty, delta=self.delta)
        return out


_STILL = DriftProfile()


@dataclass(frozen=True)
class ErrorModel:
    """Per-site irreducible rates and per-(site, slot) sensitivities, drifts and scales"""
    eps_tilde: np.ndarray          # (sites,)
    omega: np.ndarray              # (sites, P)
    eps_max: np.ndarray            # (sites,)
    drift_index: np.ndarray        # (sites, P) index into profiles, -1 = still
    profiles: tuple                # of DriftProfile
    scales: np.ndarray             # (sites * P,)
    site_kinds: tuple              # SiteKind per site
    readout_error: Optional[float] = None

    @property
    def num_sites(self) -> int:
        return self.omega.shape[0]

    @property
    def params_per_site(self) -> int:
        return self.omega.shape[1]

    @property
    def num_params(self) -> int:
        return self.omega.size

    def param_id(self, site: int, slot: int) -> int:
        return site * self.params_per_site + slot

    def parameters(self) -> List[ControlParameter]:
        P = self.params_per_site
        return [
            ControlParameter(site * P + j, site, j, float(self.scales[site * P + j]))
            for site in range(self.num_sites)
            for j in range(P)
        ]

    def with_scales(self, scales: np.ndarray) -> "ErrorModel":
        scales = np.asarray(scales, dtype=np.float64)
        if scales.shape != (self.num_params,) or not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise NoiseModelError("scales must be finite, positive and one per parameter")
        return replace(self, scales=scales.copy())

    def without_drift(self) -> "ErrorModel":
        return replace(self, drift_index=np.full_like(self.drift_index, -1), profiles=())

    def drifting_params(self) -> np.ndarray:
        """Boolean mask over parameters whose optimum moves"""
        return (self.drift_index >= 0).reshape(-1)

    def flip_probabilities(self) -> np.ndarray:
        """X_FLIP probability per site; policy independent"""
        if self.readout_error is not None:
            return np.full(self.num_sites, float(self.readout_error))
        return self.eps_tilde.copy()

    def to_json(self) -> Dict[str, object]:
        sites = []
        for i in range(self.num_sites):
            slots = []
            for j in range(self.params_per_site):
                k = self.drift_index[i, j]
                profile = self.profiles[k] if k >= 0 else _STILL
                slots.append({"omega": float(self.omega[i, j]), "drift": profile.to_dict()})
            sites.append({"site_id": i, "kind": self.site_kinds[i].value, "eps_tilde": float(self.eps_tilde[i]), "slots": slots})
        return {"sites": sites, "scales": [float(s) for s in self.scales]}


def sample_error_model(
    seed: int,
    circuit: Circuit,
    P: int = 1,
    omega_range: Sequence[float] = (0.01, 0.1),
    eps_tilde_range: Sequence[float] = (5e-4, 2e-3),
    drift: Optional[DriftSpec] = None,
    eps_max_1q: float = 0.75,
    eps_max_2q: float = 0.9375,
    readout_error: Optional[float] = None,
) -> ErrorModel:
    """Draw Omega and eps_tilde uniformly from their ranges; reproducible from ``seed``"""
    for name, (lo, hi) in (("omega_range", omega_range), ("eps_tilde_range", eps_tilde_range)):
        if lo < 0 or hi < 0:
            raise NoiseModelError(f"{name} endpoints must be non-negative, got {(lo, hi)}")
        if lo > hi:
            raise NoiseModelError(f"{name} must satisfy lo <= hi, got {(lo, hi)}")
    if P < 1:
        raise NoiseModelError(f"params per site must be >= 1, got {P}")

    drift = drift or DriftSpec()
    n_sites = len(circuit.sites)
    rng = np.random.default_rng(derive_seed(seed, "error-model"))
    eps_tilde = rng.uniform(eps_tilde_range[0], eps_tilde_range[1], size=n_sites)
    omega = rng.uniform(omega_range[0], omega_range[1], size=(n_sites, P))

    kinds = tuple(s.kind for s in circuit.sites)
    eps_max = np.array([eps_max_1q if k == SiteKind.SQ else eps_max_2q for k in kinds])

    drift_index = np.full((n_sites, P), -1, dtype=np.int64)
    profiles: tuple = ()
    if drift.kind != DriftKind.NONE:
        profiles = (DriftProfile.from_spec(drift),)
        if drift.sites is None:
            drift_index[:] = 0
        else:
            bad = [s for s in drift.sites if not 0 <= s < n_sites]
            if bad:
                raise NoiseModelError(f"drift sites {bad} are not in the circuit")
            drift_index[list(drift.sites)] = 0

    model = ErrorModel(
        eps_tilde=eps_tilde,
        omega=omega,
        eps_max=eps_max,
        drift_index=drift_index,
        profiles=profiles,
        scales=np.ones(n_sites * P),
        site_kinds=kinds,
        readout_error=readout_error,
    )
    logger.info(f"Sampled error model: {n_sites} sites x {P} params, drift={drift.kind.value}")
    return model


def total_parameter_count(d: int, P: int) -> int:
    """P_tot of the rotated surface code: one slot set per 1q and per CZ gate site"""
    return (2 * d * d - 1) * P + (4 * d * d - 4 * d) * P


def physical_optimum(model: ErrorModel, t: float) -> np.ndarray:
    """p_opt(t) in physical units, flattened to one entry per parameter"""
    values = np.array([p.value(t) for p in model.profiles] + [0.0])
    return values[model.drift_index].reshape(-1)


def optimal_policy(model: ErrorModel, t: float) -> np.ndarray:
    """p_opt(t) in rescaled policy units"""
    if t < 0:
        raise NoiseModelError(f"epoch time must be >= 0, got {t}")
    return physical_optimum(model, t) / model.scales


def physical_offsets(model: ErrorModel, p: np.ndarray) -> np.ndarray:
    """Rescaled policy units to physical offsets; works on batches (..., P_tot)"""
    return np.asarray(p, dtype=np.float64) * model.scales


def site_epsilons(model: ErrorModel, t: float, p: np.ndarray) -> np.ndarray:
    """Clamped depolarizing rate of every site; ``p`` may be a batch (..., P_tot)"""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != model.num_params:
        raise NoiseModelError(f"policy has {p.shape[-1]} entries, model expects {model.num_params}")
    offset = physical_offsets(model, p) - physical_optimum(model, t)
    offset = offset.reshape(p.shape[:-1] + model.omega.shape)
    eps = model.eps_tilde + np.sum(model.omega * offset ** 2, axis=-1)
    return np.minimum(eps, model.eps_max)


def epsilon_at(model: ErrorModel, site: int, t: float, p: np.ndarray) -> float:
    if not 0 <= site < model.num_sites:
        raise NoiseModelError(f"site {site} out of range")
    return float(site_epsilons(model, t, p)[site])


def instantiate_noisy_circuit(circuit: Circuit, model: ErrorModel, p: np.ndarray, t: float) -> Circuit:
    """Bind every noise slot of ``circuit`` to the model's rates under policy ``p`` at time ``t``"""
    eps = site_epsilons(model, t, p)
    flips = model.flip_probabilities()
    probs = {}
    for pos, ins in circuit.noise_instructions():
        probs[pos] = flips[ins.site] if ins.op == OpCode.X_FLIP else eps[ins.site]
    return bind_probabilities(circuit, probs)


def random_policy(model: ErrorModel, halfwidth: float, seed: int) -> np.ndarray:
    """Uniform physical offsets in [-halfwidth, halfwidth] around the t=0 optimum, in rescaled units"""
    rng = np.random.default_rng(derive_seed(seed, "random-policy"))
    physical = physical_optimum(model, 0.0) + rng.uniform(-halfwidth, halfwidth, size=model.num_params)
    return physical / model.scales
