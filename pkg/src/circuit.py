"""
Memory-experiment circuits for the repetition and rotated surface codes.

Circuits are flat lists of Clifford and noise-slot instructions over
RESET_Z / H / CZ / MEASURE_Z plus DEPOLARIZE1 / DEPOLARIZE2 / X_FLIP.
Noise instructions are emitted one per target group and carry the
GateSite they model together with the cycle they belong to; their
probabilities stay unbound (``None``) until a policy is applied.
"""

from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field, replace
from enum import Enum
import logging

import numpy as np

# Conditional imports for different execution contexts
try:
    from .schema import CodeFamily, MemoryBasis
except ImportError:
    from schema import CodeFamily, MemoryBasis

logger = logging.getLogger(__name__)


class CircuitError(ValueError):
    """Raised for invalid circuit parameters or inconsistent circuits"""


class OpCode(str, Enum):
    RESET_Z = "R"
    H = "H"
    CZ = "CZ"
    MEASURE_Z = "M"
    DEPOLARIZE1 = "DEPOLARIZE1"
    DEPOLARIZE2 = "DEPOLARIZE2"
    X_FLIP = "X_FLIP"


NOISE_OPS = (OpCode.DEPOLARIZE1, OpCode.DEPOLARIZE2, OpCode.X_FLIP)
MAX_PROBABILITY = {
    OpCode.DEPOLARIZE1: 0.75,
    OpCode.DEPOLARIZE2: 0.9375,
    OpCode.X_FLIP: 1.0,
}


class SiteKind(str, Enum):
    SQ = "SQ"
    CZ = "CZ"


class DetectorPhase(str, Enum):
    FIRST = "first"
    BULK = "bulk"
    FINAL = "final"


# Within-cycle order of CZ partners, by check type. The X order is the N-shaped
# and the Z order the Z-shaped staircase, so hook errors run perpendicular to
# the logical operator of the same type.
X_SCHEDULE = ("SE", "SW", "NE", "NW")
Z_SCHEDULE = ("SE", "NE", "SW", "NW")
_CORNER_OFFSETS = {"NW": (-1, -1), "NE": (-1, 0), "SW": (0, -1), "SE": (0, 0)}


@dataclass(frozen=True)
class QubitId:
    index: int
    coord: Tuple[int, int]


@dataclass(frozen=True)
class GateSite:
    """A spatial gate location reused every cycle; owns the control parameters"""
    site_id: int
    kind: SiteKind
    targets: Tuple[int, ...]
    layer_tag: str


@dataclass(frozen=True)
class Instruction:
    op: OpCode
    targets: Tuple[int, ...]
    prob: Optional[float] = None
    site: Optional[int] = None
    cycle: Optional[int] = None

    @property
    def is_noise(self) -> bool:
        return self.op in NOISE_OPS


@dataclass(frozen=True)
class Detector:
    det_id: int
    measurements: Tuple[int, ...]
    space_coord: QubitId
    time_coord: int
    phase: DetectorPhase


@dataclass(frozen=True)
class Circuit:
    """Layered memory circuit; immutable and shareable across workers"""
    instructions: Tuple[Instruction, ...]
    num_cycles: int
    detectors: Tuple[Detector, ...]
    logical_observable: Tuple[int, ...]
    sites: Tuple[GateSite, ...]
    basis: MemoryBasis
    qubits: Tuple[QubitId, ...]
    code: CodeFamily
    distance: int
    schedule: str = ""

    @property
    def num_qubits(self) -> int:
        return len(self.qubits)

    @property
    def num_detectors(self) -> int:
        return len(self.detectors)

    @property
    def num_measurements(self) -> int:
        return sum(len(ins.targets) for ins in self.instructions if ins.op == OpCode.MEASURE_Z)

    def sites_of_kind(self, kind: SiteKind) -> List[GateSite]:
        return [s for s in self.sites if s.kind == kind]

    def noise_instructions(self) -> List[Tuple[int, Instruction]]:
        return [(i, ins) for i, ins in enumerate(self.instructions) if ins.is_noise]

    @property
    def is_bound(self) -> bool:
        return all(ins.prob is not None for ins in self.instructions if ins.is_noise)

    def summary(self) -> Dict[str, object]:
        return {
            "code": self.code.value,
            "distance": self.distance,
            "cycles": self.num_cycles,
            "basis": self.basis.value,
            "qubits": self.num_qubits,
            "sq_sites": len(self.sites_of_kind(SiteKind.SQ)),
            "cz_sites": len(self.sites_of_kind(SiteKind.CZ)),
            "detectors": self.num_detectors,
            "measurements": self.num_measurements,
            "schedule": self.schedule,
        }

    def validate(self) -> None:
        """Check measurement references and noise probabilities"""
        n_meas = self.num_measurements
        for det in self.detectors:
            if not det.measurements or min(det.measurements) < 0 or max(det.measurements) >= n_meas:
                raise CircuitError(f"detector {det.det_id} references a measurement out of range")
        if any(m < 0 or m >= n_meas for m in self.logical_observable):
            raise CircuitError("logical observable references a measurement out of range")
        for ins in self.instructions:
            if ins.is_noise and ins.prob is not None:
                if not 0.0 <= ins.prob <= MAX_PROBABILITY[ins.op]:
                    raise CircuitError(f"{ins.op.value} probability {ins.prob} out of range")
            if ins.is_noise and (ins.site is None or not 0 <= ins.site < len(self.sites)):
                raise CircuitError(f"noise instruction {ins} carries no valid site")


@dataclass
class _Builder:
    """Accumulates instructions and the measurement record while a circuit is laid out"""
    instructions: List[Instruction] = field(default_factory=list)
    n_meas: int = 0

    def gate(self, op: OpCode, targets: Sequence[int]) -> None:
        if len(targets):
            self.instructions.append(Instruction(op, tuple(int(t) for t in targets)))

    def noise(self, op: OpCode, targets: Sequence[int], site: int, cycle: int) -> None:
        self.instructions.append(Instruction(op, tuple(int(t) for t in targets), None, site, cycle))

    def measure(self, targets: Sequence[int]) -> Dict[int, int]:
        self.gate(OpCode.MEASURE_Z, targets)
        out = {}
        for q in targets:
            out[q] = self.n_meas
            self.n_meas += 1
        return out


def _check_distance(d: int, T: int) -> None:
    if d < 3 or d % 2 == 0:
        raise CircuitError(f"code distance must be odd and >= 3, got {d}")
    if T < 1:
        raise CircuitError(f"number of cycles must be >= 1, got {T}")


def _memory_circuit(
    d: int,
    T: int,
    basis: MemoryBasis,
    code: CodeFamily,
    qubits: List[QubitId],
    data: List[int],
    checks: List[Tuple[int, str, Dict[str, int]]],
    layers: List[List[Tuple[int, int, str]]],
    logical: List[int],
    schedule: str,
) -> Circuit:
    """Lay out a memory experiment.

    ``checks`` holds (measure qubit, check type 'X'|'Z', partner map) and
    ``layers`` the CZ pairs (measure, data, check type) of each layer.
    """
    measure = [m for m, _, _ in checks]

    sites: List[GateSite] = []
    sq_site: Dict[int, int] = {}
    for q in data + measure:
        sq_site[q] = len(sites)
        sites.append(GateSite(len(sites), SiteKind.SQ, (q,), "data" if q in data else "measure"))
    cz_site: Dict[Tuple[int, int], int] = {}
    for k, layer in enumerate(layers):
        for m, q, _ in layer:
            cz_site[(m, q)] = len(sites)
            sites.append(GateSite(len(sites), SiteKind.CZ, (m, q), f"cz{k}"))

    b = _Builder()
    b.gate(OpCode.RESET_Z, data)
    for q in data:
        b.noise(OpCode.X_FLIP, (q,), sq_site[q], 0)
    if basis == MemoryBasis.X:
        b.gate(OpCode.H, data)

    check_type = {m: kind for m, kind, _ in checks}
    rounds: List[Dict[int, int]] = []
    for t in range(T):
        b.gate(OpCode.RESET_Z, measure)
        for m in measure:
            b.noise(OpCode.X_FLIP, (m,), sq_site[m], t)
        b.gate(OpCode.H, measure)
        for m in measure:
            b.noise(OpCode.DEPOLARIZE1, (m,), sq_site[m], t)
        for layer in layers:
            # CZ conjugated by H on the data qubit acts as CNOT measure -> data
            toggled = [q for m, q, kind in layer if kind == "X"]
            b.gate(OpCode.H, toggled)
            b.gate(OpCode.CZ, [x for m, q, _ in layer for x in (m, q)])
            b.gate(OpCode.H, toggled)
            for m, q, _ in layer:
                b.noise(OpCode.DEPOLARIZE2, (m, q), cz_site[(m, q)], t)
        b.gate(OpCode.H, measure)
        for m in measure:
            b.noise(OpCode.X_FLIP, (m,), sq_site[m], t)
        rounds.append(b.measure(measure))
        for q in data:
            b.noise(OpCode.DEPOLARIZE1, (q,), sq_site[q], t)

    if basis == MemoryBasis.X:
        b.gate(OpCode.H, data)
    for q in data:
        b.noise(OpCode.X_FLIP, (q,), sq_site[q], T)
    final = b.measure(data)

    by_index = {q.index: q for q in qubits}
    detectors: List[Detector] = []

    def add(m: int, recs: Iterable[int], t: int, phase: DetectorPhase) -> None:
        detectors.append(Detector(len(detectors), tuple(sorted(recs)), by_index[m], t, phase))

    memory_checks = [(m, partners) for m, kind, partners in checks if kind == basis.value]
    for m, _ in memory_checks:
        add(m, [rounds[0][m]], 0, DetectorPhase.FIRST)
    for t in range(1, T):
        for m in measure:
            add(m, [rounds[t - 1][m], rounds[t][m]], t, DetectorPhase.BULK)
    for m, partners in memory_checks:
        add(m, [rounds[T - 1][m]] + [final[q] for q in partners.values()], T, DetectorPhase.FINAL)

    circuit = Circuit(
        instructions=tuple(b.instructions),
        num_cycles=T,
        detectors=tuple(detectors),
        logical_observable=tuple(sorted(final[q] for q in logical)),
        sites=tuple(sites),
        basis=basis,
        qubits=tuple(qubits),
        code=code,
        distance=d,
        schedule=schedule,
    )
    circuit.validate()
    logger.debug(f"Built {code.value} circuit: {circuit.summary()}")
    return circuit


def build_repetition_code_memory(d: int, T: int) -> Circuit:
    """Bit-flip repetition code; ZZ checks measured with H-CZ-CZ-H gadgets"""
    _check_distance(d, T)
    qubits = [QubitId(k, (0, 2 * k)) for k in range(d)]
    qubits += [QubitId(d + k, (0, 2 * k + 1)) for k in range(d - 1)]
    data = list(range(d))
    checks = [(d + k, "Z", {"W": k, "E": k + 1}) for k in range(d - 1)]
    layers = [
        [(d + k, k, "Z") for k in range(d - 1)],
        [(d + k, k + 1, "Z") for k in range(d - 1)],
    ]
    return _memory_circuit(
        d, T, MemoryBasis.Z, CodeFamily.REPETITION, qubits, data, checks, layers,
        logical=[0], schedule="Z: W E",
    )


def _surface_plaquettes(d: int) -> List[Tuple[int, int]]:
    plaquettes = []
    for i in range(d + 1):
        for j in range(d + 1):
            if 1 <= i <= d - 1 and 1 <= j <= d - 1:
                plaquettes.append((i, j))
            elif i == 0 and 1 <= j <= d - 1 and j % 2 == 0:
                plaquettes.append((i, j))
            elif i == d and 1 <= j <= d - 1 and j % 2 == 1:
                plaquettes.append((i, j))
            elif j == 0 and 1 <= i <= d - 1 and i % 2 == 1:
                plaquettes.append((i, j))
            elif j == d and 1 <= i <= d - 1 and i % 2 == 0:
                plaquettes.append((i, j))
    return plaquettes


def build_surface_code_memory(d: int, T: int, basis: MemoryBasis = MemoryBasis.Z) -> Circuit:
    """Rotated surface code memory.

    Data qubit (r, c) has index r*d + c; plaquette (i, j) is X-type when i + j
    is even. X boundaries run along the top and bottom rows, so Z_L is data
    row 0 and X_L is data column 0.
    """
    _check_distance(d, T)
    basis = MemoryBasis(basis)
    qubits = [QubitId(r * d + c, (2 * r + 1, 2 * c + 1)) for r in range(d) for c in range(d)]
    data = [q.index for q in qubits]

    checks: List[Tuple[int, str, Dict[str, int]]] = []
    for i, j in _surface_plaquettes(d):
        index = len(qubits)
        qubits.append(QubitId(index, (2 * i, 2 * j)))
        partners = {}
        for corner, (di, dj) in _CORNER_OFFSETS.items():
            r, c = i + di, j + dj
            if 0 <= r < d and 0 <= c < d:
                partners[corner] = r * d + c
        checks.append((index, "X" if (i + j) % 2 == 0 else "Z", partners))

    layers: List[List[Tuple[int, int, str]]] = []
    for k in range(4):
        layer = []
        for m, kind, partners in checks:
            corner = (X_SCHEDULE if kind == "X" else Z_SCHEDULE)[k]
            if corner in partners:
                layer.append((m, partners[corner], kind))
        layers.append(layer)

    logical = [c for c in range(d)] if basis == MemoryBasis.Z else [r * d for r in range(d)]
    schedule = f"X: {' '.join(X_SCHEDULE)} | Z: {' '.join(Z_SCHEDULE)}"
    return _memory_circuit(d, T, basis, CodeFamily.SURFACE, qubits, data, checks, layers, logical, schedule)


def build_memory_circuit(code: CodeFamily, d: int, T: int, basis: MemoryBasis = MemoryBasis.Z) -> Circuit:
    if CodeFamily(code) == CodeFamily.REPETITION:
        return build_repetition_code_memory(d, T)
    return build_surface_code_memory(d, T, basis)


def bind_probabilities(circuit: Circuit, probs: Dict[int, float]) -> Circuit:
    """Return a copy whose noise instructions at the given positions carry ``probs``"""
    instructions = list(circuit.instructions)
    for pos, p in probs.items():
        instructions[pos] = replace(instructions[pos], prob=float(p))
    return replace(circuit, instructions=tuple(instructions))


@dataclass(frozen=True)
class DetectingRegionMap:
    """Detector -> sites (and site/cycle cells) whose single Pauli errors flip it"""
    sites: Dict[int, FrozenSet[int]]
    cells: Dict[int, FrozenSet[Tuple[int, int]]]

    def region(self, det_id: int) -> FrozenSet[int]:
        return self.sites.get(det_id, frozenset())

    def region_size_stats(self) -> Dict[str, float]:
        sizes = np.array([len(s) for s in self.sites.values()], dtype=float)
        if sizes.size == 0:
            return {"mean": 0.0, "max": 0.0}
        return {"mean": float(sizes.mean()), "max": float(sizes.max())}


def single_pauli_injections(circuit: Circuit):
    """One X, Y and Z error on every target of every noise instruction.

    Returns (injections, labels) where labels[k] = (site, cycle, qubit, pauli).
    """
    try:
        from .simulator import Injection
    except ImportError:
        from simulator import Injection

    injections = []
    labels = []
    for pos, ins in circuit.noise_instructions():
        for q in ins.targets:
            for pauli in "XYZ":
                injections.append(Injection(pos, ((q, pauli),)))
                labels.append((ins.site, ins.cycle, q, pauli))
    return injections, labels


def compute_detecting_regions(circuit: Circuit) -> DetectingRegionMap:
    """Propagate every single-Pauli error and record which detectors it flips"""
    try:
        from .simulator import inject_errors
    except ImportError:
        from simulator import inject_errors

    injections, labels = single_pauli_injections(circuit)
    det_flips, _ = inject_errors(circuit, injections)

    sites: Dict[int, set] = {det.det_id: set() for det in circuit.detectors}
    cells: Dict[int, set] = {det.det_id: set() for det in circuit.detectors}
    dets, cols = np.nonzero(det_flips)
    for det, col in zip(dets.tolist(), cols.tolist()):
        site, cycle, _, _ = labels[col]
        sites[det].add(site)
        cells[det].add((site, cycle))

    region_map = DetectingRegionMap(
        sites={k: frozenset(v) for k, v in sites.items()},
        cells={k: frozenset(v) for k, v in cells.items()},
    )
    logger.info(f"Computed detecting regions for {circuit.num_detectors} detectors: {region_map.region_size_stats()}")
    return region_map
