from typing import NamedTuple
import logging

import networkx as nx
import numpy as np
import scipy.sparse as sp

from bff.config import get_settings
from bff.models.network import Edge, GenParams, GenState, Node, VesselNetwork, orthonormal_frame
from bff.services.exceptions import DomainError, InvalidNetworkError

logger = logging.getLogger(__name__)

# stream purposes inside a vessel's spawn path
_GROWTH, _SPROUTS, _BRANCH = 0, 1, 2


class NetworkGenerator:
    """Recursive vessel growth with one Philox stream per vessel branch.

    Streams are keyed by the branch path (the sprout node index at every
    level), so a new branch never shifts the random numbers seen by an
    existing one and raising max_level only ever adds vessels.
    """

    def __init__(self, params: GenParams, max_edges: int | None = None):
        self.params = params
        self.max_edges = max_edges or get_settings().max_edges
        self._positions: list[np.ndarray] = []
        self._edges: list[tuple[int, int, float]] = []
        self._capped = False

    def _stream(self, path: tuple[int, ...], purpose: int) -> np.random.Generator:
        seq = np.random.SeedSequence(self.params.seed, spawn_key=path + (purpose,))
        return np.random.Generator(np.random.Philox(seq))

    def _validate(self) -> None:
        p = self.params
        if not p.edge_step_f.is_positive(p.max_level):
            raise DomainError("edge_step_f must return positive step sizes")
        if not p.r_decay_f.is_positive(p.max_level) or not p.bif_r_decay_f.is_positive(p.max_level):
            raise DomainError("radius functions must return positive radii")
        if not p.inside_f.contains(np.asarray(p.initial_position, dtype=float)):
            raise DomainError("initial position lies outside inside_f")

    def _add_node(self, position: np.ndarray) -> int:
        self._positions.append(position)
        return len(self._positions) - 1

    def _add_edge(self, source: int, target: int, radius: float) -> None:
        self._edges.append((source, target, radius))
        if len(self._edges) >= self.max_edges and not self._capped:
            self._capped = True
            logger.warning(f"Edge cap of {self.max_edges} reached, generation stopped early")

    def run(self) -> VesselNetwork:
        self._validate()
        p = self.params
        d, e1, e2 = orthonormal_frame(np.asarray(p.initial_direction, dtype=float))
        root = self._add_node(np.asarray(p.initial_position, dtype=float))
        self._grow(root, d, e1, e2, p.initial_radius, 0, ())

        if not self._edges:
            raise InvalidNetworkError("generator produced no edges: first step leaves inside_f")

        network = VesselNetwork(
            nodes=[Node(id=i, position=tuple(pos)) for i, pos in enumerate(self._positions)],
            edges=[Edge(id=i, source=s, target=t, radius=r) for i, (s, t, r) in enumerate(self._edges)],
        )
        validate_tree(network)
        logger.info(
            f"Generated network with {network.n_nodes} nodes, {network.n_edges} edges "
            f"(seed={p.seed}, max_level={p.max_level})"
        )
        return network

    def _grow(self, start: int, d, e1, e2, r: float, lvl: int, path: tuple[int, ...]) -> None:
        p = self.params
        growth = self._stream(path, _GROWTH)
        node, pos = start, self._positions[start]
        vessel = []

        while not self._capped:
            state = GenState(pos, d, e1, e2, r, lvl, len(vessel))
            step = p.edge_step_f.evaluate(state, growth)
            if not step > 0:
                raise DomainError(f"edge_step_f returned non-positive step {step}")
            new_d, new_e1, new_e2 = p.rot_f.evaluate(state, growth)
            new_pos = pos + new_d * step
            if not p.inside_f.contains(new_pos):
                break
            new_r = p.r_decay_f.evaluate(state, growth)
            if not new_r > 0:
                raise DomainError(f"r_decay_f returned non-positive radius {new_r}")

            target = self._add_node(new_pos)
            self._add_edge(node, target, r)
            node, pos, d, e1, e2, r = target, new_pos, new_d, new_e1, new_e2, new_r
            vessel.append((node, d, e1, e2, r))

        # sprouts only at interior nodes, so every node keeps degree <= 3
        sprouts = self._stream(path, _SPROUTS)
        for k, (node_id, vd, ve1, ve2, vr) in enumerate(vessel[:-1], start=1):
            state = GenState(self._positions[node_id], vd, ve1, ve2, vr, lvl, k)
            occurs = p.bif_occurs_f.evaluate(state, sprouts)
            if not occurs or lvl >= p.max_level or self._capped:
                continue
            branch = self._stream(path + (k,), _BRANCH)
            bd, be1, be2 = p.bif_rot_f.evaluate(state, branch)
            br = p.bif_r_decay_f.evaluate(state, branch)
            if not br > 0:
                raise DomainError(f"bif_r_decay_f returned non-positive radius {br}")
            self._grow(node_id, bd, be1, be2, br, lvl + 1, path + (k,))


def generate_network(params: GenParams, max_edges: int | None = None) -> VesselNetwork:
    """Grow a randomized binary vessel tree from the generator parameters"""
    return NetworkGenerator(params, max_edges).run()


def incidence_matrix(net: VesselNetwork) -> sp.csr_matrix:
    """Edges x nodes matrix with +1 at the source and -1 at the target of each edge"""
    rows = np.repeat(np.arange(net.n_edges), 2)
    cols = np.column_stack([net.sources, net.targets]).ravel()
    vals = np.tile([1.0, -1.0], net.n_edges)
    return sp.csr_matrix((vals, (rows, cols)), shape=(net.n_edges, net.n_nodes))


def hanging_nodes(net: VesselNetwork) -> set[int]:
    """Nodes connected to exactly one edge"""
    hanging = {int(i) for i in np.flatnonzero(net.degrees == 1)}
    if len(hanging) < 2:
        raise InvalidNetworkError(f"network needs at least 2 hanging nodes, found {len(hanging)}")
    return hanging


def inlet_nodes(net: VesselNetwork) -> list[int]:
    """Hanging nodes whose single edge leaves them (tree roots)"""
    hanging = hanging_nodes(net)
    return sorted(int(n) for n in set(net.sources.tolist()) & hanging)


class IncidenceSplit(NamedTuple):
    i_h: sp.csr_matrix
    i_nh: sp.csr_matrix
    hanging: np.ndarray
    internal: np.ndarray


def split_incidence(net: VesselNetwork) -> IncidenceSplit:
    """Separate the incidence columns of hanging and non-hanging nodes"""
    hanging = np.array(sorted(hanging_nodes(net)), dtype=int)
    internal = np.setdiff1d(np.arange(net.n_nodes), hanging)
    matrix = incidence_matrix(net).tocsc()
    return IncidenceSplit(matrix[:, hanging].tocsr(), matrix[:, internal].tocsr(), hanging, internal)


def to_graph(net: VesselNetwork) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(range(net.n_nodes))
    graph.add_edges_from(zip(net.sources.tolist(), net.targets.tolist()))
    return graph


def validate_tree(net: VesselNetwork) -> None:
    """Reject networks that are not forests"""
    if not nx.is_forest(to_graph(net)):
        cycle = nx.find_cycle(to_graph(net))
        raise InvalidNetworkError(f"network contains a cycle through nodes {[u for u, _ in cycle]}")


def merge_networks(nets: list[VesselNetwork]) -> VesselNetwork:
    """Disjoint union with dense renumbering"""
    nodes, edges = [], []
    for net in nets:
        node_offset, edge_offset = len(nodes), len(edges)
        nodes.extend(Node(id=node_offset + n.id, position=n.position) for n in net.nodes)
        edges.extend(
            Edge(
                id=edge_offset + e.id,
                source=node_offset + e.source,
                target=node_offset + e.target,
                radius=e.radius,
            )
            for e in net.edges
        )
    merged = VesselNetwork(nodes=nodes, edges=edges)
    logger.info(f"Merged {len(nets)} networks into {merged.n_nodes} nodes, {merged.n_edges} edges")
    return merged
