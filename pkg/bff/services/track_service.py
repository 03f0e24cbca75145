import logging

import networkx as nx
import numpy as np
import pandas as pd

from bff.models.flow import FlowSolution
from bff.models.network import VesselNetwork
from bff.models.tracks import EVENT_COLUMNS, EventTable, ParticleState, RadialLaw, TrackPath
from bff.services.exceptions import DeadBranchError, DomainError, InvalidNetworkError

logger = logging.getLogger(__name__)


def bubble_rng(seed: int, bubble_id: int) -> np.random.Generator:
    """Per-bubble stream, independent of how many bubbles are simulated"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(bubble_id,))))


def branch_probability(q_parent: float, q_child: float) -> float:
    """Probability of entering a child branch, Q_child / Q_parent"""
    q_parent, q_child = abs(q_parent), abs(q_child)
    if q_parent == 0:
        raise DeadBranchError("parent flow is zero, branch carries no bubbles")
    p = q_child / q_parent
    if p > 1.0 + 1e-9:
        raise DomainError(f"child flow exceeds parent flow (ratio {p:.6g})")
    return min(p, 1.0)


def _oriented_graph(net: VesselNetwork, flow: FlowSolution) -> nx.DiGraph:
    q = flow.edge_flow
    floor = 1e-12 * float(np.max(np.abs(q))) if q.size else 0.0
    graph = nx.DiGraph()
    dead = 0
    for e in range(net.n_edges):
        if abs(q[e]) <= floor:
            dead += 1
            continue
        src, dst = int(net.sources[e]), int(net.targets[e])
        if q[e] > 0:
            graph.add_edge(src, dst, edge=e, q=abs(float(q[e])), forward=True)
        else:
            graph.add_edge(dst, src, edge=e, q=abs(float(q[e])), forward=False)
    if dead:
        logger.warning(f"Pruned {dead} edges without flow from track enumeration")
    return graph


def enumerate_tracks(net: VesselNetwork, flow: FlowSolution) -> list[TrackPath]:
    """Every root-to-leaf path of the flow-oriented graph with its probability"""
    graph = _oriented_graph(net, flow)
    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        raise InvalidNetworkError(f"flow circulates through nodes {[u for u, _ in cycle]}")
    roots = sorted(n for n in graph.nodes if graph.in_degree(n) == 0)
    inflow = {r: sum(d["q"] for _, _, d in graph.out_edges(r, data=True)) for r in roots}
    total = sum(inflow.values())
    if total == 0:
        raise DeadBranchError("network carries no flow, no tracks can be built")

    tracks = []
    for root in roots:
        stack = [(root, (), (), (root,), 1.0)]
        while stack:
            node, edges, forward, nodes, prob = stack.pop()
            outs = sorted(graph.out_edges(node, data=True), key=lambda item: item[2]["edge"], reverse=True)
            if not outs:
                tracks.append(
                    TrackPath(
                        edges=edges, forward=forward, nodes=nodes,
                        probability=min(prob, 1.0), root=root, root_weight=inflow[root] / total,
                    )
                )
                continue
            q_total = sum(d["q"] for _, _, d in outs)
            for _, child, data in outs:
                p = branch_probability(q_total, data["q"])
                stack.append((child, edges + (data["edge"],), forward + (data["forward"],), nodes + (child,), prob * p))

    logger.info(f"Enumerated {len(tracks)} tracks from {len(roots)} roots")
    return tracks


def _track_weights(tracks: list[TrackPath]) -> np.ndarray:
    weights = np.array([t.root_weight * t.probability for t in tracks])
    return np.cumsum(weights / weights.sum())


def _choose(cumulative: np.ndarray, rng: np.random.Generator) -> int:
    return int(min(np.searchsorted(cumulative, rng.random(), side="right"), len(cumulative) - 1))


def sample_radial(rng: np.random.Generator, law: RadialLaw) -> float:
    """Streamtube fraction: uniform over area, flux weighted, or on the axis"""
    if law == "axis":
        return 0.0
    u = rng.random()
    if law == "flux":
        # cdf of r*(1 - r^2) on [0, 1] is 2r^2 - r^4
        return float(np.sqrt(1.0 - np.sqrt(1.0 - u)))
    return float(np.sqrt(u))


def _speed(flow: FlowSolution, edge: int, r_frac: float) -> float:
    return float(flow.edge_max_velocity[edge]) * (1.0 - r_frac**2)


def advect(p: ParticleState, dt: float, flow: FlowSolution) -> ParticleState:
    """Move a particle along its streamtube, rescaling overshoot at every edge change"""
    if dt <= 0:
        raise DomainError("dt must be positive")
    if not p.active:
        return p
    track, i = p.track, p.edge_index
    edge = track.edges[i]
    length = float(flow.edge_length[edge])
    v = _speed(flow, edge, p.r_frac)
    progress = (p.axial if track.forward[i] else length - p.axial) + v * dt

    while progress > length:
        overshoot = progress - length
        if i == len(track.edges) - 1:
            end = length if track.forward[i] else 0.0
            return p.model_copy(update={"edge_index": i, "axial": end, "active": False})
        i += 1
        edge = track.edges[i]
        v_next = _speed(flow, edge, p.r_frac)
        progress = overshoot * v_next / v
        v, length = v_next, float(flow.edge_length[edge])

    axial = progress if track.forward[i] else length - progress
    return p.model_copy(update={"edge_index": i, "axial": axial})


def world_position(p: ParticleState, net: VesselNetwork) -> np.ndarray:
    """Edge-local cylindrical coordinates to world space through the edge frame"""
    edge = p.edge_id
    d, e1, e2 = net.frame(edge)
    source = net.positions[net.sources[edge]]
    radial = (e1 * np.cos(p.theta) + e2 * np.sin(p.theta)) * p.r_frac * net.radii[edge]
    return source + d * p.axial + radial


def simulate_events(
    net: VesselNetwork,
    flow: FlowSolution,
    n_bubbles: int,
    frame_rate: float,
    n_frames: int,
    seed: int,
    radial_law: RadialLaw = "uniform",
    tracks: list[TrackPath] | None = None,
) -> EventTable:
    """Seed bubbles on tracks and advect them frame by frame into the ground-truth table"""
    if n_bubbles < 1:
        raise DomainError("n_bubbles must be at least 1")
    tracks = tracks or enumerate_tracks(net, flow)
    cumulative = _track_weights(tracks)
    dt = 1.0 / frame_rate

    rows = []
    for bubble_id in range(n_bubbles):
        rng = bubble_rng(seed, bubble_id)
        track = tracks[_choose(cumulative, rng)]
        r_frac = sample_radial(rng, radial_law)
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        entry = int(rng.integers(0, n_frames))

        start = 0.0 if track.forward[0] else float(flow.edge_length[track.edges[0]])
        state = ParticleState(track=track, axial=start, r_frac=r_frac, theta=theta)
        for frame in range(entry, n_frames):
            x, y, z = world_position(state, net)
            rows.append((frame, bubble_id, x, y, z, _speed(flow, state.edge_id, r_frac), r_frac))
            state = advect(state, dt, flow)
            if not state.active:
                break

    data = pd.DataFrame(rows, columns=EVENT_COLUMNS + ["speed", "r_frac"])
    data = data.astype({"frame": "int64", "bubble_id": "int64"})
    data = data.sort_values(["frame", "bubble_id"], kind="mergesort")
    logger.info(f"Simulated {n_bubbles} bubbles over {n_frames} frames: {len(data)} events")
    return EventTable(data=data)
