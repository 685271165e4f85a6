from typing import Dict, List, Optional, Tuple
import logging
import re

# Conditional imports for different execution contexts
try:
    from .circuit import (
        Circuit, CircuitError, Detector, DetectorPhase, GateSite, Instruction,
        OpCode, QubitId, SiteKind,
    )
    from .schema import CodeFamily, MemoryBasis
except ImportError:
    from circuit import (
        Circuit, CircuitError, Detector, DetectorPhase, GateSite, Instruction,
        OpCode, QubitId, SiteKind,
    )
    from schema import CodeFamily, MemoryBasis

logger = logging.getLogger(__name__)

FORMAT_HEADER = "# qec-steer circuit v1"


class CircuitTextCodec:
    """
    Writes and parses the line-oriented circuit dump.

    Gates and noise channels are one instruction per line; measurement
    references are negative offsets from the most recent measurement.
    Layout metadata (sites, schedule, detector coordinates) travels in
    ``#`` comments so a dump parses back into the same circuit.
    """

    def __init__(self):
        self.coords_pattern = re.compile(r"^QUBIT_COORDS\((-?\d+),\s*(-?\d+)\)\s+(\d+)$")
        self.instruction_pattern = re.compile(r"^([A-Z_0-9]+)(?:\(([^)]*)\))?((?:\s+\d+)*)\s*$")
        self.target_pattern = re.compile(r"^(DETECTOR|OBSERVABLE)((?:\s+rec\[-\d+\])+)\s*$")
        self.rec_pattern = re.compile(r"rec\[(-\d+)\]")
        self.tag_pattern = re.compile(r"(\w+)=(\S+)")
        self.site_pattern = re.compile(r"^SITE\s+(\d+)\s+(SQ|CZ)\s+(\S+)((?:\s+\d+)+)$")
        self.meta_pattern = re.compile(r"^code=(\w+)\s+distance=(\d+)\s+cycles=(\d+)\s+basis=([XZ])$")

    def dump(self, circuit: Circuit) -> str:
        lines = [
            FORMAT_HEADER,
            f"# code={circuit.code.value} distance={circuit.distance} cycles={circuit.num_cycles} basis={circuit.basis.value}",
            f"# schedule {circuit.schedule}",
        ]
        for q in circuit.qubits:
            lines.append(f"QUBIT_COORDS({q.coord[0]}, {q.coord[1]}) {q.index}")
        for s in circuit.sites:
            lines.append(f"# SITE {s.site_id} {s.kind.value} {s.layer_tag} {' '.join(map(str, s.targets))}")

        cycle = None
        n_meas = 0
        for ins in circuit.instructions:
            if ins.is_noise and ins.cycle != cycle:
                cycle = ins.cycle
                lines.append(f"# cycle {cycle}")
            head = ins.op.value
            if ins.is_noise and ins.prob is not None:
                head += f"({ins.prob!r})"
            line = f"{head} {' '.join(map(str, ins.targets))}"
            if ins.is_noise:
                line += f"  # site={ins.site} cycle={ins.cycle}"
            lines.append(line)
            if ins.op == OpCode.MEASURE_Z:
                n_meas += len(ins.targets)

        for det in circuit.detectors:
            recs = " ".join(f"rec[{m - n_meas}]" for m in det.measurements)
            lines.append(
                f"DETECTOR {recs}  # q={det.space_coord.index} t={det.time_coord} phase={det.phase.value}"
            )
        lines.append("OBSERVABLE " + " ".join(f"rec[{m - n_meas}]" for m in circuit.logical_observable))
        return "\n".join(lines) + "\n"

    def parse(self, text: str) -> Circuit:
        meta: Optional[Tuple[str, int, int, str]] = None
        schedule = ""
        qubits: Dict[int, QubitId] = {}
        sites: List[GateSite] = []
        instructions: List[Instruction] = []
        detectors: List[Detector] = []
        observable: Tuple[int, ...] = ()
        n_meas = 0

        for lineno, raw in enumerate(text.splitlines(), start=1):
            body, _, comment = raw.partition("#")
            body, comment = body.strip(), comment.strip()
            if not body:
                meta_match = self.meta_pattern.match(comment)
                site_match = self.site_pattern.match(comment)
                if meta_match:
                    meta = (meta_match.group(1), int(meta_match.group(2)), int(meta_match.group(3)), meta_match.group(4))
                elif comment.startswith("schedule "):
                    schedule = comment[len("schedule "):]
                elif site_match:
                    targets = tuple(int(t) for t in site_match.group(4).split())
                    sites.append(GateSite(int(site_match.group(1)), SiteKind(site_match.group(2)), targets, site_match.group(3)))
                continue

            tags = dict(self.tag_pattern.findall(comment))
            coords = self.coords_pattern.match(body)
            if coords:
                index = int(coords.group(3))
                qubits[index] = QubitId(index, (int(coords.group(1)), int(coords.group(2))))
                continue

            targeted = self.target_pattern.match(body)
            if targeted:
                recs = tuple(sorted(n_meas + int(r) for r in self.rec_pattern.findall(targeted.group(2))))
                if targeted.group(1) == "OBSERVABLE":
                    observable = recs
                else:
                    q = int(tags.get("q", -1))
                    if q not in qubits:
                        raise CircuitError(f"line {lineno}: detector without a known measure qubit")
                    detectors.append(Detector(
                        det_id=len(detectors),
                        measurements=recs,
                        space_coord=qubits[q],
                        time_coord=int(tags.get("t", 0)),
                        phase=DetectorPhase(tags.get("phase", DetectorPhase.BULK.value)),
                    ))
                continue

            match = self.instruction_pattern.match(body)
            if not match:
                raise CircuitError(f"line {lineno}: cannot parse {raw!r}")
            try:
                op = OpCode(match.group(1))
            except ValueError:
                raise CircuitError(f"line {lineno}: unknown instruction {match.group(1)}")
            targets = tuple(int(t) for t in match.group(3).split())
            prob = float(match.group(2)) if match.group(2) else None
            if op in (OpCode.DEPOLARIZE1, OpCode.DEPOLARIZE2, OpCode.X_FLIP):
                instructions.append(Instruction(op, targets, prob, int(tags["site"]), int(tags["cycle"])))
            else:
                instructions.append(Instruction(op, targets))
            if op == OpCode.MEASURE_Z:
                n_meas += len(targets)

        if meta is None:
            raise CircuitError("missing '# code=... distance=... cycles=... basis=...' header")
        code, distance, cycles, basis = meta
        circuit = Circuit(
            instructions=tuple(instructions),
            num_cycles=cycles,
            detectors=tuple(detectors),
            logical_observable=observable,
            sites=tuple(sorted(sites, key=lambda s: s.site_id)),
            basis=MemoryBasis(basis),
            qubits=tuple(qubits[i] for i in sorted(qubits)),
            code=CodeFamily(code),
            distance=distance,
            schedule=schedule,
        )
        circuit.validate()
        logger.debug(f"Parsed circuit with {len(instructions)} instructions and {len(detectors)} detectors")
        return circuit


# Global instance
circuit_text_codec = CircuitTextCodec()


def dump_circuit_text(circuit: Circuit) -> str:
    return circuit_text_codec.dump(circuit)


def parse_circuit_text(text: str) -> Circuit:
    return circuit_text_codec.parse(text)
