"""
Detector classes, the class <-> parameter factor graph, and sensitivity calibration.
"""

from typing import Dict, List, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging

import numpy as np
from scipy import sparse

# Conditional imports for different execution contexts
try:
    from .circuit import Circuit, DetectingRegionMap, DetectorPhase, QubitId, SiteKind
    from .noise_model import ControlParameter, ErrorModel, physical_offsets, site_epsilons
    from .simulator import FrameSimulator, derive_seed, detection_fractions
except ImportError:
    from circuit import Circuit, DetectingRegionMap, DetectorPhase, QubitId, SiteKind
    from noise_model import ControlParameter, ErrorModel, physical_offsets, site_epsilons
    from simulator import FrameSimulator, derive_seed, detection_fractions

logger = logging.getLogger(__name__)

_PHASE_ORDER = {DetectorPhase.FIRST: 0, DetectorPhase.BULK: 1, DetectorPhase.FINAL: 2}


@dataclass(frozen=True)
class DetectorClass:
    class_id: int
    members: Tuple[int, ...]
    space_coord: QubitId
    phase: DetectorPhase


def fold_detectors(circuit: Circuit) -> List[DetectorClass]:
    """Group detectors equivalent under time translation: key = (measure qubit, phase)"""
    groups: Dict[Tuple[int, DetectorPhase], List[int]] = {}
    coords: Dict[int, QubitId] = {}
    for det in circuit.detectors:
        groups.setdefault((det.space_coord.index, det.phase), []).append(det.det_id)
        coords[det.space_coord.index] = det.space_coord
    keys = sorted(groups, key=lambda k: (_PHASE_ORDER[k[1]], k[0]))
    return [
        DetectorClass(class_id, tuple(groups[key]), coords[key[0]], key[1])
        for class_id, key in enumerate(keys)
    ]


def class_index(classes: Sequence[DetectorClass], num_detectors: int) -> np.ndarray:
    """Class id of every detector"""
    out = np.full(num_detectors, -1, dtype=np.int64)
    for c in classes:
        out[list(c.members)] = c.class_id
    return out


@dataclass
class FactorGraph:
    classes: List[DetectorClass]
    params: List[ControlParameter]
    adjacency: sparse.csr_matrix    # (classes, params), 1 where the param's site is in the class region

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_params(self) -> int:
        return len(self.params)

    def class_degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    def param_degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=0)).ravel().astype(np.int64)

    def degree_stats(self) -> Dict[str, float]:
        cd, pd = self.class_degrees(), self.param_degrees()
        return {
            "mean_params_per_class": float(cd.mean()) if cd.size else 0.0,
            "mean_classes_per_param": float(pd.mean()) if pd.size else 0.0,
            "max_params_per_class": int(cd.max()) if cd.size else 0,
            "isolated_params": int((pd == 0).sum()),
        }

    def to_json(self) -> Dict[str, object]:
        coo = self.adjacency.tocoo()
        return {
            "classes": [
                {"id": c.class_id, "space": list(c.space_coord.coord), "qubit": c.space_coord.index,
                 "phase": c.phase.value, "dets": list(c.members)}
                for c in self.classes
            ],
            "edges": [[int(r), int(k)] for r, k in zip(coo.row, coo.col)],
            "degrees": self.degree_stats(),
        }


def build_factor_graph(
    circuit: Circuit,
    regions: DetectingRegionMap,
    params: Sequence[ControlParameter],
    classes: Optional[List[DetectorClass]] = None,
) -> FactorGraph:
    classes = classes if classes is not None else fold_detectors(circuit)
    params = list(params)
    by_site: Dict[int, List[int]] = {}
    for param in params:
        by_site.setdefault(param.site_id, []).append(param.param_id)

    rows, cols = [], []
    for c in classes:
        sites = set()
        for det in c.members:
            sites |= regions.region(det)
        for site in sorted(sites):
            for k in by_site.get(site, ()):
                rows.append(c.class_id)
                cols.append(k)
    data = np.ones(len(rows), dtype=np.float64)
    adjacency = sparse.csr_matrix((data, (rows, cols)), shape=(len(classes), len(params)))
    adjacency.sum_duplicates()
    adjacency.data[:] = 1.0

    graph = FactorGraph(classes, params, adjacency)
    logger.info(f"Factor graph: {graph.num_classes} classes x {graph.num_params} params, {graph.degree_stats()}")
    return graph


@dataclass(frozen=True)
class SensitivityScale:
    group: str
    sigma0: float
    dr0: float
    residual: float
    flagged: bool = False


def default_type_groups(model: ErrorModel) -> Dict[str, np.ndarray]:
    """One group per (site kind, slot index)"""
    P = model.params_per_site
    groups: Dict[str, List[int]] = {}
    for site, kind in enumerate(model.site_kinds):
        for j in range(P):
            groups.setdefault(f"{kind.value}:{j}", []).append(site * P + j)
    return {name: np.array(ids, dtype=np.int64) for name, ids in groups.items()}


def calibrate_sensitivities(
    circuit: Circuit,
    model: ErrorModel,
    base_policy: np.ndarray,
    type_groups: Dict[str, np.ndarray],
    sigma_grid: Sequence[float],
    shots: int,
    seed: int,
    draws: int = 4,
    threads: int = 1,
    simulator: Optional[FrameSimulator] = None,
) -> Dict[str, SensitivityScale]:
    """Fit DR = DR0 + (sigma / sigma0)**2 per parameter group.

    Only the group's parameters are perturbed, by N(0, sigma**2) in physical
    units. Every grid point of a group reuses the same sampling seeds so the
    fit sees the perturbation, not shot noise differences.
    """
    sigma_grid = np.asarray(sigma_grid, dtype=np.float64)
    if sigma_grid.size < 3:
        raise ValueError("sigma_grid needs at least 3 points")
    sim = simulator or FrameSimulator(circuit)
    flips = model.flip_probabilities()
    physical_base = physical_offsets(model, base_policy)
    unit = model.with_scales(np.ones(model.num_params))

    def mean_dr(name: str, ids: np.ndarray, sigma: float) -> float:
        values = []
        for draw in range(draws):
            rng = np.random.default_rng(derive_seed(seed, "calibrate", name, draw))
            p = physical_base.copy()
            p[ids] += sigma * rng.standard_normal(ids.size)
            eps = site_epsilons(unit, 0.0, p)
            rec = sim.run(shots, derive_seed(seed, "calibrate-shots", name, draw), site_eps=eps, flip_probs=flips)
            values.append(detection_fractions(rec)[1])
        return float(np.mean(values))

    jobs = [(name, ids, float(s)) for name, ids in type_groups.items() for s in sigma_grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: mean_dr(*job), jobs))
    else:
        results = [mean_dr(*job) for job in jobs]

    out: Dict[str, SensitivityScale] = {}
    n = sigma_grid.size
    for index, name in enumerate(type_groups):
        dr = np.array(results[index * n:(index + 1) * n])
        design = np.column_stack([np.ones(n), sigma_grid ** 2])
        (dr0, curvature), *_ = np.linalg.lstsq(design, dr, rcond=None)
        residual = float(np.sqrt(np.mean((design @ np.array([dr0, curvature]) - dr) ** 2)))
        if curvature <= 1e-12 * max(1.0, abs(dr0)):
            logger.warning(f"Calibration group {name}: non-positive curvature {curvature:.3g}, flagged")
            out[name] = SensitivityScale(name, float("inf"), float(dr0), residual, flagged=True)
        else:
            out[name] = SensitivityScale(name, float(1.0 / np.sqrt(curvature)), float(dr0), residual)
        logger.info(f"Calibration group {name}: sigma0={out[name].sigma0:.4g} DR0={dr0:.4g}")
    return out


def apply_sensitivities(
    model: ErrorModel,
    scales: Dict[str, SensitivityScale],
    type_groups: Dict[str, np.ndarray],
) -> ErrorModel:
    """Model whose policy units are rescaled by the fitted sigma0; flagged groups keep unit scale"""
    values = model.scales.copy()
    for name, ids in type_groups.items():
        scale = scales.get(name)
        if scale is None:
            continue
        if scale.flagged or not np.isfinite(scale.sigma0):
            logger.warning(f"Group {name} has no finite sigma0; keeping scale 1.0")
            values[ids] = 1.0
        else:
            values[ids] = scale.sigma0
    return model.with_scales(values)
