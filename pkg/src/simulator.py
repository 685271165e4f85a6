"""
Bit-packed Pauli-frame sampler.

Frames are two (qubits x words) uint64 matrices holding X and Z flips for 64
shots per word. Shots are processed in blocks of BLOCK_SHOTS; every random
draw comes from a Philox stream keyed by the seed and positioned by
(compiled op index, block index), so results do not depend on how blocks are
scheduled across threads.
"""

from typing import Dict, List, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
import logging
import struct
import zlib

import numpy as np

# Conditional imports for different execution contexts
try:
    from .circuit import Circuit, OpCode
except ImportError:
    from circuit import Circuit, OpCode

logger = logging.getLogger(__name__)

BLOCK_SHOTS = 1024
BLOCK_WORDS = BLOCK_SHOTS // 64
RECORD_MAGIC = b"QSDR1"


class UnboundNoiseError(ValueError):
    """A noise slot has no probability bound to it"""


def derive_seed(seed: int, *labels) -> int:
    """Independent 64-bit seed for a labelled consumer of the root seed"""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            words.append(zlib.crc32(label.encode()))
        else:
            words.append(int(label) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean array along its last axis into little-endian uint64 words"""
    n = bits.shape[-1]
    pad = (-n) % 64
    if pad:
        bits = np.concatenate([bits, np.zeros(bits.shape[:-1] + (pad,), dtype=bool)], axis=-1)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8")


def unpack_bits(words: np.ndarray, n: int) -> np.ndarray:
    as_bytes = np.ascontiguousarray(words, dtype="<u8").view(np.uint8)
    return np.unpackbits(as_bytes, axis=-1, bitorder="little")[..., :n].astype(bool)


def popcount_rows(words: np.ndarray) -> np.ndarray:
    as_bytes = np.ascontiguousarray(words, dtype="<u8").view(np.uint8)
    return np.unpackbits(as_bytes, axis=-1).sum(axis=-1, dtype=np.int64)


def _tail_mask(shots: int) -> Optional[np.uint64]:
    rem = shots % 64
    return np.uint64((1 << rem) - 1) if rem else None


@dataclass
class DetectionRecord:
    """Detection events (detectors x words) and logical flips (words) for ``shots`` shots"""
    events: np.ndarray
    logical_flips: np.ndarray
    shots: int
    cycles_per_shot: int

    @property
    def num_detectors(self) -> int:
        return self.events.shape[0]

    def events_bool(self) -> np.ndarray:
        return unpack_bits(self.events, self.shots)

    def logical_bool(self) -> np.ndarray:
        return unpack_bits(self.logical_flips, self.shots)

    @property
    def logical_count(self) -> int:
        return int(popcount_rows(self.logical_flips))


@dataclass(frozen=True)
class Injection:
    """Deterministic Pauli error applied right after instruction ``position``"""
    position: int
    paulis: Tuple[Tuple[int, str], ...]


@dataclass
class _Op:
    kind: OpCode
    a: np.ndarray
    b: Optional[np.ndarray] = None
    sites: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    meas: Optional[np.ndarray] = None
    positions: List[int] = field(default_factory=list)


class FrameSimulator:
    """Compiled, reusable sampler for one circuit layout"""

    def __init__(self, circuit: Circuit):
        self.circuit = circuit
        self.num_qubits = circuit.num_qubits
        self.num_measurements = circuit.num_measurements
        self.ops: List[_Op] = []
        self.op_of_position: Dict[int, int] = {}
        self._compile()

        n_meas = self.num_measurements
        width = max((len(det.measurements) for det in circuit.detectors), default=1)
        self._det_index = np.full((circuit.num_detectors, width), n_meas, dtype=np.int64)
        for det in circuit.detectors:
            self._det_index[det.det_id, : len(det.measurements)] = det.measurements
        self._obs_index = np.array(circuit.logical_observable, dtype=np.int64)

    def _compile(self) -> None:
        group: Optional[dict] = None
        n_meas = 0

        def flush():
            nonlocal group
            if group is None:
                return
            targets = np.array(group["targets"], dtype=np.int64)
            probs = np.array([np.nan if p is None else p for p in group["probs"]], dtype=np.float64)
            op = _Op(
                kind=group["kind"],
                a=targets[:, 0],
                b=targets[:, 1] if targets.shape[1] == 2 else None,
                sites=np.array(group["sites"], dtype=np.int64),
                probs=probs,
                positions=group["positions"],
            )
            self._append(op)
            group = None

        for pos, ins in enumerate(self.circuit.instructions):
            if ins.is_noise:
                if group is not None and (group["kind"] != ins.op or group["used"] & set(ins.targets)):
                    flush()
                if group is None:
                    group = {"kind": ins.op, "targets": [], "sites": [], "probs": [], "positions": [], "used": set()}
                group["targets"].append(ins.targets)
                group["sites"].append(ins.site)
                group["probs"].append(ins.prob)
                group["positions"].append(pos)
                group["used"].update(ins.targets)
                continue
            flush()
            targets = np.array(ins.targets, dtype=np.int64)
            if ins.op == OpCode.CZ:
                op = _Op(ins.op, targets[0::2], targets[1::2], positions=[pos])
            elif ins.op == OpCode.MEASURE_Z:
                op = _Op(ins.op, targets, meas=np.arange(n_meas, n_meas + len(targets)), positions=[pos])
                n_meas += len(targets)
            else:
                op = _Op(ins.op, targets, positions=[pos])
            self._append(op)
        flush()

    def _append(self, op: _Op) -> None:
        for pos in op.positions:
            self.op_of_position[pos] = len(self.ops)
        self.ops.append(op)

    def noise_probabilities(
        self,
        site_eps: Optional[np.ndarray] = None,
        flip_probs: Optional[np.ndarray] = None,
    ) -> List[Optional[np.ndarray]]:
        """Per-op probability arrays, from site arrays when given else from the bound circuit"""
        out: List[Optional[np.ndarray]] = []
        for op in self.ops:
            if op.probs is None:
                out.append(None)
                continue
            if op.kind == OpCode.X_FLIP and flip_probs is not None:
                probs = np.asarray(flip_probs, dtype=np.float64)[op.sites]
            elif op.kind != OpCode.X_FLIP and site_eps is not None:
                probs = np.asarray(site_eps, dtype=np.float64)[op.sites]
            else:
                probs = op.probs
            if np.isnan(probs).any():
                raise UnboundNoiseError(f"{op.kind.value} at instruction {op.positions[0]} has no probability bound")
            out.append(probs)
        return out

    def _run_block(
        self,
        words: int,
        key: Optional[np.ndarray],
        block: int,
        probs: Optional[List[Optional[np.ndarray]]],
        injections: Optional[Dict[int, List[Tuple[int, int, bool, bool]]]] = None,
        randomize_gauge: bool = True,
    ) -> np.ndarray:
        x = np.zeros((self.num_qubits, words), dtype=np.uint64)
        z = np.zeros((self.num_qubits, words), dtype=np.uint64)
        meas = np.zeros((self.num_measurements + 1, words), dtype=np.uint64)
        columns = words * 64

        for index, op in enumerate(self.ops):
            rng = None
            gauge = randomize_gauge and op.kind in (OpCode.RESET_Z, OpCode.MEASURE_Z)
            if key is not None and (op.probs is not None or gauge):
                counter = np.array([0, 0, index, block], dtype=np.uint64)
                rng = np.random.Generator(np.random.Philox(key=key, counter=counter))

            # Z flips on a Z eigenstate are a gauge; randomizing them makes
            # non-deterministic measurements come out random
            if op.kind == OpCode.RESET_Z:
                x[op.a] = 0
                z[op.a] = rng.bit_generator.random_raw((len(op.a), words)) if rng is not None else 0
            elif op.kind == OpCode.H:
                tmp = x[op.a].copy()
                x[op.a] = z[op.a]
                z[op.a] = tmp
            elif op.kind == OpCode.CZ:
                za = z[op.a] ^ x[op.b]
                zb = z[op.b] ^ x[op.a]
                z[op.a] = za
                z[op.b] = zb
            elif op.kind == OpCode.MEASURE_Z:
                meas[op.meas] = x[op.a]
                z[op.a] = rng.bit_generator.random_raw((len(op.a), words)) if rng is not None else 0
            elif probs is not None and rng is not None:
                p = probs[index]
                if p is not None and p.any():
                    self._apply_noise(op, p, x, z, rng, columns)

            if injections and index in injections:
                xm = np.zeros((self.num_qubits, columns), dtype=bool)
                zm = np.zeros((self.num_qubits, columns), dtype=bool)
                for q, col, xbit, zbit in injections[index]:
                    xm[q, col] ^= xbit
                    zm[q, col] ^= zbit
                x ^= pack_bits(xm)
                z ^= pack_bits(zm)
        return meas

    @staticmethod
    def _apply_noise(op: _Op, p: np.ndarray, x: np.ndarray, z: np.ndarray, rng: np.random.Generator, columns: int) -> None:
        u = rng.random((len(p), columns))
        pc = p[:, None]
        hit = u < pc
        if op.kind == OpCode.X_FLIP:
            x[op.a] ^= pack_bits(hit)
            return
        safe = np.where(pc > 0, pc, 1.0)
        if op.kind == OpCode.DEPOLARIZE1:
            # u/p is uniform on [0, 1) given a hit: X, Y, Z with p/3 each
            which = np.minimum((u * 3.0 / safe).astype(np.int64), 2)
            x[op.a] ^= pack_bits(hit & (which < 2))
            z[op.a] ^= pack_bits(hit & (which > 0))
            return
        # 15 non-identity two-qubit Paulis; 2 bits per qubit with I=0, X=1, Y=2, Z=3
        which = np.minimum((u * 15.0 / safe).astype(np.int64), 14) + 1
        pa, pb = which >> 2, which & 3
        x[op.a] ^= pack_bits(hit & ((pa == 1) | (pa == 2)))
        z[op.a] ^= pack_bits(hit & (pa >= 2))
        x[op.b] ^= pack_bits(hit & ((pb == 1) | (pb == 2)))
        z[op.b] ^= pack_bits(hit & (pb >= 2))

    def _detect(self, meas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        events = np.bitwise_xor.reduce(meas[self._det_index], axis=1)
        if self._obs_index.size:
            logical = np.bitwise_xor.reduce(meas[self._obs_index], axis=0)
        else:
            logical = np.zeros(meas.shape[1], dtype=np.uint64)
        return events, logical

    def run(
        self,
        shots: int,
        seed: int,
        site_eps: Optional[np.ndarray] = None,
        flip_probs: Optional[np.ndarray] = None,
        threads: int = 1,
        first_block: int = 0,
    ) -> DetectionRecord:
        """Sample ``shots`` shots.

        With ``site_eps`` / ``flip_probs`` the per-site probabilities override
        whatever the circuit has bound, which lets a single compiled program
        serve every policy candidate.
        """
        if shots < 1:
            raise ValueError(f"shots must be >= 1, got {shots}")
        probs = self.noise_probabilities(site_eps, flip_probs)
        key = np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)
        n_blocks = -(-shots // BLOCK_SHOTS)

        def one(block: int) -> np.ndarray:
            meas = self._run_block(BLOCK_WORDS, key, first_block + block, probs)
            events, logical = self._detect(meas)
            return np.vstack([events, logical[None, :]])

        if threads > 1 and n_blocks > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(one, range(n_blocks)))
        else:
            parts = [one(b) for b in range(n_blocks)]

        words = -(-shots // 64)
        combined = np.concatenate(parts, axis=1)[:, :words]
        mask = _tail_mask(shots)
        if mask is not None:
            combined[:, -1] &= mask
        return DetectionRecord(
            events=np.ascontiguousarray(combined[:-1]),
            logical_flips=np.ascontiguousarray(combined[-1]),
            shots=shots,
            cycles_per_shot=self.circuit.num_cycles,
        )

    def inject(self, injections: Sequence[Injection]) -> Tuple[np.ndarray, np.ndarray]:
        """Noiseless run with one deterministic error pattern per column.

        Returns (detector flips [detectors x injections], observable flips [injections]).
        """
        n = len(injections)
        if n == 0:
            return np.zeros((self.circuit.num_detectors, 0), dtype=bool), np.zeros(0, dtype=bool)
        scheduled: Dict[int, List[Tuple[int, int, bool, bool]]] = {}
        for col, inj in enumerate(injections):
            if inj.position not in self.op_of_position:
                raise ValueError(f"injection position {inj.position} is outside the circuit")
            index = self.op_of_position[inj.position]
            for q, pauli in inj.paulis:
                scheduled.setdefault(index, []).append((q, col, pauli in "XY", pauli in "YZ"))
        words = -(-n // 64)
        meas = self._run_block(words, None, 0, None, scheduled, randomize_gauge=False)
        events, logical = self._detect(meas)
        return unpack_bits(events, n), unpack_bits(logical, n)


def sample(noisy_circuit: Circuit, shots: int, seed: int, threads: int = 1) -> DetectionRecord:
    """Sample a circuit whose noise probabilities are all bound"""
    return FrameSimulator(noisy_circuit).run(shots, seed, threads=threads)


def inject_errors(circuit: Circuit, injections: Sequence[Injection]) -> Tuple[np.ndarray, np.ndarray]:
    return FrameSimulator(circuit).inject(injections)


def detection_fractions(rec: DetectionRecord) -> Tuple[np.ndarray, float]:
    """Per-detector event rates and their mean (the surrogate objective C)"""
    rates = popcount_rows(rec.events) / rec.shots
    mean = float(rates.mean()) if rates.size else 0.0
    return rates, mean


def count_events(rec: DetectionRecord) -> int:
    return int(popcount_rows(rec.events).sum())


def write_records(path, rec: DetectionRecord) -> Path:
    """Write the QSDR1 event dump plus a ``.b8`` logical-flip vector"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(RECORD_MAGIC)
        f.write(struct.pack("<II", rec.num_detectors, rec.shots))
        f.write(np.ascontiguousarray(rec.events, dtype="<u8").tobytes())
    n_bytes = -(-rec.shots // 8)
    path.with_suffix(".b8").write_bytes(np.ascontiguousarray(rec.logical_flips, dtype="<u8").tobytes()[:n_bytes])
    return path


def read_records(path, cycles_per_shot: int = 1) -> DetectionRecord:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(RECORD_MAGIC):
        raise ValueError(f"{path} is not a QSDR1 record dump")
    detectors, shots = struct.unpack_from("<II", raw, len(RECORD_MAGIC))
    words = -(-shots // 64)
    body = np.frombuffer(raw, dtype="<u8", offset=len(RECORD_MAGIC) + 8, count=detectors * words)
    logical_raw = path.with_suffix(".b8").read_bytes()
    padded = logical_raw + b"\x00" * (words * 8 - len(logical_raw))
    return DetectionRecord(
        events=body.reshape(detectors, words).astype(np.uint64),
        logical_flips=np.frombuffer(padded, dtype="<u8").astype(np.uint64),
        shots=shots,
        cycles_per_shot=cycles_per_shot,
    )
