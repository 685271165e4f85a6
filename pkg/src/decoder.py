"""
Decoding graph construction, three decoders and logical-error statistics.

Mechanisms are enumerated by injecting every single-qubit X and Z component
of every noise slot and composing them (propagation is linear). Mechanisms
that flip more than two detectors are split into graphlike edges already
present in the model; parallel edges merge by XOR probability composition.
"""

from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field
from itertools import combinations
import logging
import math

import networkx as nx
import numpy as np
from scipy import sparse, stats
from scipy.sparse.csgraph import shortest_path

# Conditional imports for different execution contexts
try:
    from .circuit import Circuit, OpCode
    from .schema import DecoderMethod, PriorKind
    from .simulator import DetectionRecord, Injection, inject_errors
except ImportError:
    from circuit import Circuit, OpCode
    from schema import DecoderMethod, PriorKind
    from simulator import DetectionRecord, Injection, inject_errors

logger = logging.getLogger(__name__)

WEIGHT_CAP = 40.0
WEIGHT_FLOOR = 1e-6
EXHAUSTIVE_LIMIT = 20
UNREACHABLE = 1e9
_PAULI_CODES = {1: "X", 2: "Y", 3: "Z"}


class DecompositionError(ValueError):
    """A mechanism could not be split into graphlike edges"""


class DecoderError(ValueError):
    """Decoder misuse or a method/instance mismatch"""


Signature = Tuple[FrozenSet[int], bool]


def xor_probability(q1: float, q2: float) -> float:
    return q1 * (1.0 - q2) + q2 * (1.0 - q1)


def edge_weight(q: float) -> float:
    if q <= 0.0:
        return WEIGHT_CAP
    if q >= 1.0:
        return WEIGHT_FLOOR
    return float(min(WEIGHT_CAP, max(WEIGHT_FLOOR, math.log((1.0 - q) / q))))


@dataclass
class DecodingGraph:
    """Detectors 0..n-1 plus boundary node n; edges carry q, weight and an observable label"""
    num_detectors: int
    edges: np.ndarray               # (E, 2) node pairs
    probabilities: np.ndarray       # (E,)
    observables: np.ndarray         # (E,) bool
    mechanism_probabilities: np.ndarray
    decomposed: int = 0
    undetectable: int = 0
    _paths: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def boundary(self) -> int:
        return self.num_detectors

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def weights(self) -> np.ndarray:
        return np.array([edge_weight(q) for q in self.probabilities])

    def paths(self) -> Tuple[np.ndarray, np.ndarray]:
        """All-pairs shortest-path distances and observable parity along those paths"""
        if self._paths is None:
            n = self.num_detectors + 1
            w = self.weights
            a, b = self.edges[:, 0], self.edges[:, 1]
            matrix = sparse.csr_matrix((np.concatenate([w, w]), (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(n, n))
            dist, pred = shortest_path(matrix, directed=True, return_predecessors=True)
            edge_obs = np.zeros((n, n), dtype=bool)
            edge_obs[a, b] = self.observables
            edge_obs[b, a] = self.observables

            rows = np.arange(n)[:, None]
            cols = np.arange(n)[None, :]
            has_pred = pred >= 0
            safe_pred = np.where(has_pred, pred, rows)
            parity = np.zeros((n, n), dtype=bool)
            for _ in range(n):
                updated = np.where(has_pred, parity[rows, safe_pred] ^ edge_obs[safe_pred, cols], False)
                if np.array_equal(updated, parity):
                    break
                parity = updated
            dist = np.where(np.isfinite(dist), dist, UNREACHABLE)
            self._paths = (dist, parity)
        return self._paths


def _component_table(circuit: Circuit):
    index: Dict[Tuple[int, int, str], int] = {}
    injections = []
    for pos, ins in circuit.noise_instructions():
        for q in ins.targets:
            for pauli in "XZ":
                index[(pos, q, pauli)] = len(injections)
                injections.append(Injection(pos, ((q, pauli),)))
    dets, obs = inject_errors(circuit, injections)
    return index, dets, obs


def _mechanisms(circuit: Circuit, prior: PriorKind, q0: float):
    """Yield (probability, [(position, qubit, 'X'|'Z'), ...]) for every Pauli of every noise slot"""
    for pos, ins in circuit.noise_instructions():
        if prior == PriorKind.TRUE_MODEL:
            if ins.prob is None:
                raise DecoderError("true-model prior needs a circuit with bound noise probabilities")
            p = ins.prob
        else:
            p = None
        if ins.op == OpCode.X_FLIP:
            yield (q0 if p is None else p), [(pos, ins.targets[0], "X")]
        elif ins.op == OpCode.DEPOLARIZE1:
            q = ins.targets[0]
            for pauli in "XYZ":
                comps = [(pos, q, c) for c in ("XZ" if pauli == "Y" else pauli)]
                yield (q0 if p is None else p / 3.0), comps
        else:
            a, b = ins.targets
            for v in range(1, 16):
                comps = []
                for qubit, code in ((a, v >> 2), (b, v & 3)):
                    if code:
                        letter = _PAULI_CODES[code]
                        comps += [(pos, qubit, c) for c in ("XZ" if letter == "Y" else letter)]
                yield (q0 if p is None else p / 15.0), comps


def _edge_key(dets: FrozenSet[int], boundary: int) -> Tuple[int, int]:
    ordered = sorted(dets)
    return (ordered[0], boundary) if len(ordered) == 1 else (ordered[0], ordered[1])


def _split(dets: FrozenSet[int], obs: bool, known: Dict[FrozenSet[int], set], depth: int) -> Optional[List[Signature]]:
    """Express (dets, obs) as XOR of at most ``depth`` known graphlike signatures"""
    if len(dets) <= 2 and obs in known.get(dets, ()):
        return [(dets, obs)]
    if depth <= 1:
        return None
    members = sorted(dets)
    for size in (2, 1):
        for part in combinations(members, size):
            part = frozenset(part)
            for part_obs in known.get(part, ()):
                rest = _split(dets - part, obs ^ part_obs, known, depth - 1)
                if rest is not None:
                    return [(part, part_obs)] + rest
    return None


def build_decoding_graph(
    circuit: Circuit,
    prior: PriorKind = PriorKind.TRUE_MODEL,
    q0: float = 1e-3,
) -> DecodingGraph:
    prior = PriorKind(prior)
    index, comp_dets, comp_obs = _component_table(circuit)
    columns = {key: (frozenset(np.flatnonzero(comp_dets[:, col]).tolist()), bool(comp_obs[col])) for key, col in index.items()}

    def signature(comps) -> Signature:
        dets: FrozenSet[int] = frozenset()
        obs = False
        for key in comps:
            d, o = columns[key]
            dets = dets ^ d
            obs ^= o
        return dets, obs

    mechanisms = [(q, comps, signature(comps)) for q, comps in _mechanisms(circuit, prior, q0) if q > 0]

    known: Dict[FrozenSet[int], set] = {}
    for _, comps, (dets, obs) in mechanisms:
        if 0 < len(dets) <= 2:
            known.setdefault(dets, set()).add(obs)
    for d, o in columns.values():
        if 0 < len(d) <= 2:
            known.setdefault(d, set()).add(o)

    boundary = circuit.num_detectors
    merged: Dict[Tuple[int, int], List[float]] = {}   # key -> [q_obs0, q_obs1]
    decomposed = 0
    undetectable = 0
    for q, comps, (dets, obs) in mechanisms:
        if not dets:
            if obs:
                undetectable += 1
            continue
        if len(dets) <= 2:
            parts = [(dets, obs)]
        else:
            decomposed += 1
            parts = []
            for key in comps:
                d, o = columns[key]
                if not d:
                    if o:
                        parts.append((d, o))
                    continue
                split = _split(d, o, known, depth=3)
                if split is None:
                    raise DecompositionError(f"mechanism {comps} flips {sorted(dets)} and has no graphlike decomposition")
                parts += split
            counts: Dict[Signature, int] = {}
            for part in parts:
                counts[part] = counts.get(part, 0) ^ 1
            parts = [part for part, odd in counts.items() if odd and part[0]]
        for d, o in parts:
            slot = merged.setdefault(_edge_key(d, boundary), [0.0, 0.0])
            slot[int(o)] = xor_probability(slot[int(o)], q)

    if undetectable:
        logger.warning(f"{undetectable} mechanisms flip the observable without any detector; skipped")

    keys = sorted(merged)
    probabilities, observables = [], []
    for key in keys:
        q_even, q_odd = merged[key]
        # conflicting observable labels on one edge: keep the likelier label
        observables.append(q_odd > q_even)
        probabilities.append(xor_probability(q_even, q_odd))
    graph = DecodingGraph(
        num_detectors=circuit.num_detectors,
        edges=np.array(keys, dtype=np.int64).reshape(-1, 2),
        probabilities=np.array(probabilities, dtype=np.float64),
        observables=np.array(observables, dtype=bool),
        mechanism_probabilities=np.array([q for q, _, _ in mechanisms], dtype=np.float64),
        decomposed=decomposed,
        undetectable=undetectable,
    )
    logger.info(
        f"Decoding graph: {graph.num_detectors} detectors, {graph.num_edges} edges, "
        f"{len(mechanisms)} mechanisms ({decomposed} decomposed)"
    )
    return graph


def match_syndrome(graph: DecodingGraph, fired: Sequence[int]) -> Tuple[bool, float]:
    """Exact minimum-weight matching of ``fired`` detectors, each also allowed to pair with the boundary"""
    fired = [int(f) for f in fired]
    dist, parity = graph.paths()
    B = graph.boundary
    k = len(fired)
    if k == 0:
        return False, 0.0
    if k == 1:
        i = fired[0]
        return bool(parity[i, B]), float(dist[i, B])
    if k == 2:
        i, j = fired
        pair = dist[i, j]
        both = dist[i, B] + dist[j, B]
        if pair <= both:
            return bool(parity[i, j]), float(pair)
        return bool(parity[i, B] ^ parity[j, B]), float(both)

    big = 1.0 + 2.0 * float(max(dist[np.ix_(fired + [B], fired + [B])].max(), 1.0))
    G = nx.Graph()
    for a, b in combinations(fired, 2):
        G.add_edge(("d", a), ("d", b), weight=big - dist[a, b])
        G.add_edge(("b", a), ("b", b), weight=big)
    for a in fired:
        G.add_edge(("d", a), ("b", a), weight=big - dist[a, B])
    matching = nx.max_weight_matching(G, maxcardinality=True)

    prediction = False
    weight = 0.0
    for u, v in matching:
        if u[0] == "b" and v[0] == "b":
            continue
        if u[0] == "d" and v[0] == "d":
            prediction ^= bool(parity[u[1], v[1]])
            weight += dist[u[1], v[1]]
        else:
            det = u[1] if u[0] == "d" else v[1]
            prediction ^= bool(parity[det, B])
            weight += dist[det, B]
    return prediction, float(weight)


class UnionFindDecoder:
    """Weighted-growth cluster decoder with peeling"""

    def __init__(self, graph: DecodingGraph, max_length: int = 64):
        self.graph = graph
        self.n = graph.num_detectors + 1
        w = graph.weights
        unit = max(float(w.min()) if w.size else 1.0, WEIGHT_FLOOR)
        self.length = np.clip(np.rint(2.0 * w / unit), 1, max_length).astype(np.int64)
        self.adjacent: List[List[int]] = [[] for _ in range(self.n)]
        for e, (a, b) in enumerate(graph.edges):
            self.adjacent[a].append(e)
            self.adjacent[b].append(e)

    def _find(self, parent: List[int], v: int) -> int:
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    def decode(self, fired: Sequence[int]) -> bool:
        if len(fired) == 0:
            return False
        B = self.graph.boundary
        edges = self.graph.edges
        parent = list(range(self.n))
        in_cluster = [False] * self.n
        members: Dict[int, List[int]] = {}
        odd: Dict[int, bool] = {}
        grounded: Dict[int, bool] = {}
        for v in fired:
            in_cluster[v] = True
            members[v] = [v]
            odd[v] = True
            grounded[v] = v == B
        growth = np.zeros(len(edges), dtype=np.int64)
        support: List[int] = []

        def absorb(root: int, v: int) -> None:
            in_cluster[v] = True
            parent[v] = root
            members[root].append(v)
            if v == B:
                grounded[root] = True

        def union(ru: int, rv: int) -> int:
            if len(members[ru]) < len(members[rv]):
                ru, rv = rv, ru
            parent[rv] = ru
            members[ru] += members.pop(rv)
            odd[ru] = odd[ru] ^ odd.pop(rv)
            grounded[ru] = grounded[ru] or grounded.pop(rv)
            return ru

        while True:
            active = [r for r in members if odd[r] and not grounded[r]]
            if not active:
                break
            fusion = []
            for r in active:
                for v in members[r]:
                    for e in self.adjacent[v]:
                        if growth[e] < self.length[e]:
                            growth[e] += 1
                            if growth[e] >= self.length[e]:
                                fusion.append(e)
            if not fusion and all(growth[e] >= self.length[e] for r in active for v in members[r] for e in self.adjacent[v]):
                logger.debug("Union-find: odd cluster cannot grow further")
                break
            for e in fusion:
                support.append(e)
                a, b = int(edges[e, 0]), int(edges[e, 1])
                if in_cluster[a] and in_cluster[b]:
                    ra, rb = self._find(parent, a), self._find(parent, b)
                    if ra != rb:
                        union(ra, rb)
                elif in_cluster[a]:
                    absorb(self._find(parent, a), b)
                elif in_cluster[b]:
                    absorb(self._find(parent, b), a)
        return self._peel(fired, support)

    def _peel(self, fired: Sequence[int], support: List[int]) -> bool:
        B = self.graph.boundary
        edges = self.graph.edges
        neighbors: Dict[int, List[Tuple[int, int]]] = {}
        for e in set(support):
            a, b = int(edges[e, 0]), int(edges[e, 1])
            neighbors.setdefault(a, []).append((b, e))
            neighbors.setdefault(b, []).append((a, e))
        syndrome = {int(v): True for v in fired}
        seen = set()
        prediction = False
        roots = ([B] if B in neighbors else []) + [int(v) for v in fired]
        for root in roots:
            if root in seen:
                continue
            order, via = [root], {root: None}
            seen.add(root)
            i = 0
            while i < len(order):
                u = order[i]
                i += 1
                for w, e in neighbors.get(u, ()):
                    if w not in seen:
                        seen.add(w)
                        via[w] = (u, e)
                        order.append(w)
            for v in reversed(order[1:]):
                if syndrome.get(v):
                    u, e = via[v]
                    prediction ^= bool(self.graph.observables[e])
                    syndrome[v] = False
                    syndrome[u] = not syndrome.get(u, False)
        return prediction


class ExhaustiveDecoder:
    """Maximum-likelihood decoding by enumerating every subset of graph edges"""

    def __init__(self, graph: DecodingGraph):
        if graph.num_edges > EXHAUSTIVE_LIMIT:
            raise DecoderError(f"exhaustive decoding is limited to {EXHAUSTIVE_LIMIT} mechanisms, graph has {graph.num_edges}")
        if graph.num_detectors > 62:
            raise DecoderError("exhaustive decoding needs at most 62 detectors")
        self.graph = graph
        syn = np.zeros(1, dtype=np.int64)
        obs = np.zeros(1, dtype=bool)
        logp = np.zeros(1)
        weight = np.zeros(1)
        for (a, b), q, o, w in zip(graph.edges, graph.probabilities, graph.observables, graph.weights):
            mask = np.int64(1 << int(a))
            if b != graph.boundary:
                mask |= np.int64(1 << int(b))
            q = min(max(q, 1e-15), 1 - 1e-15)
            syn = np.concatenate([syn, syn ^ mask])
            obs = np.concatenate([obs, obs ^ bool(o)])
            logp = np.concatenate([logp + math.log1p(-q), logp + math.log(q)])
            weight = np.concatenate([weight, weight + w])
        keys, inverse = np.unique(syn, return_inverse=True)
        prob = np.exp(logp - logp.max())
        p_odd = np.zeros(keys.size)
        p_even = np.zeros(keys.size)
        np.add.at(p_odd, inverse[obs], prob[obs])
        np.add.at(p_even, inverse[~obs], prob[~obs])
        min_weight = np.full(keys.size, np.inf)
        np.minimum.at(min_weight, inverse, weight)
        self.keys = keys
        self.prediction = p_odd > p_even
        self.min_weight = min_weight

    def _lookup(self, fired: Sequence[int]) -> int:
        key = np.int64(sum(1 << int(v) for v in fired))
        pos = int(np.searchsorted(self.keys, key))
        return pos if pos < self.keys.size and self.keys[pos] == key else -1

    def decode(self, fired: Sequence[int]) -> bool:
        pos = self._lookup(fired)
        return bool(self.prediction[pos]) if pos >= 0 else False

    def minimum_weight(self, fired: Sequence[int]) -> float:
        pos = self._lookup(fired)
        return float(self.min_weight[pos]) if pos >= 0 else math.inf


def decode(graph: DecodingGraph, rec: DetectionRecord, method: DecoderMethod = DecoderMethod.MWPM) -> np.ndarray:
    """Predicted logical flip per shot"""
    method = DecoderMethod(method)
    if rec.num_detectors != graph.num_detectors:
        raise DecoderError(f"record has {rec.num_detectors} detectors, graph expects {graph.num_detectors}")
    if method == DecoderMethod.EXHAUSTIVE:
        solver = ExhaustiveDecoder(graph).decode
    elif method == DecoderMethod.UNION_FIND:
        solver = UnionFindDecoder(graph).decode
    else:
        solver = lambda fired: match_syndrome(graph, fired)[0]

    syndromes = rec.events_bool().T
    unique, inverse = np.unique(syndromes, axis=0, return_inverse=True)
    predictions = np.array([solver(np.flatnonzero(row).tolist()) for row in unique], dtype=bool)
    logger.debug(f"Decoded {rec.shots} shots via {len(unique)} distinct syndromes ({method.value})")
    return predictions[np.asarray(inverse).ravel()]


@dataclass
class LogicalStats:
    shots: int
    errors: int
    cycles: int
    p_err: float
    eps_L: float
    saturated: bool = False
    lambda_estimate: Optional[float] = None


def invert_per_cycle(p_err: float, T: int) -> float:
    """Per-cycle logical error rate from the T-cycle error probability"""
    return 0.5 * (1.0 - (1.0 - 2.0 * p_err) ** (1.0 / T))


def logical_error_rate(predictions: np.ndarray, actual: np.ndarray, T: int) -> LogicalStats:
    predictions = np.asarray(predictions, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    if predictions.size < 1 or predictions.shape != actual.shape:
        raise ValueError("predictions and actual flips must be non-empty and equally long")
    errors = int(np.count_nonzero(predictions ^ actual))
    p_err = errors / predictions.size
    if p_err > 0.5:
        logger.warning(f"Logical error probability {p_err:.4f} exceeds 1/2; per-cycle rate saturated")
        return LogicalStats(predictions.size, errors, T, p_err, 0.5, saturated=True)
    return LogicalStats(predictions.size, errors, T, p_err, invert_per_cycle(p_err, T))


def evaluate_logical(graph: DecodingGraph, rec: DetectionRecord, method: DecoderMethod = DecoderMethod.MWPM) -> LogicalStats:
    return logical_error_rate(decode(graph, rec, method), rec.logical_bool(), rec.cycles_per_shot)


def lambda_point_estimate(eps_L: float, d: int, lambda_star: float, eps_L_star: float) -> float:
    """Lambda = Lambda* (eps_L* / eps_L)^(2 / (d + 1))"""
    if eps_L <= 0 or lambda_star <= 0 or eps_L_star <= 0:
        raise ValueError("lambda point estimate needs positive inputs")
    return lambda_star * (eps_L_star / eps_L) ** (2.0 / (d + 1))


def fit_lambda_reference(distances: Sequence[int], eps_L: Sequence[float]) -> Tuple[float, float]:
    """Fit eps_L = C * Lambda^(-(d+1)/2); returns (Lambda*, C), nan with fewer than two distances"""
    distances = np.asarray(distances, dtype=np.float64)
    eps_L = np.asarray(eps_L, dtype=np.float64)
    keep = eps_L > 0
    if keep.sum() < 2:
        return float("nan"), float("nan")
    fit = stats.linregress((distances[keep] + 1) / 2.0, np.log(eps_L[keep]))
    return float(math.exp(-fit.slope)), float(math.exp(fit.intercept))


def average_physical_error_rate(graph: DecodingGraph) -> float:
    """Mean mechanism probability of the error model behind ``graph``"""
    q = graph.mechanism_probabilities
    return float(q.mean()) if q.size else 0.0
