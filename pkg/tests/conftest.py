import numpy as np
import pytest

from bff.models.acoustics import ImagingGrid, NoiseConfig, TransducerConfig
from bff.models.flow import BoundaryConditions, FluidParams
from bff.models.network import Edge, Node, VesselNetwork

Z0 = 0.01


def build_network(positions, edges, radius=50e-6) -> VesselNetwork:
    """Network from (x, y, z) tuples and (source, target[, radius]) tuples"""
    nodes = [Node(id=i, position=tuple(float(v) for v in p)) for i, p in enumerate(positions)]
    links = []
    for i, e in enumerate(edges):
        r = e[2] if len(e) > 2 else radius
        links.append(Edge(id=i, source=e[0], target=e[1], radius=r))
    return VesselNetwork(nodes=nodes, edges=links)


@pytest.fixture
def fluid():
    return FluidParams()


@pytest.fixture
def tube():
    """Single 1 mm vessel along x at 1 cm depth"""
    return build_network([(0.0, 0.0, Z0), (1e-3, 0.0, Z0)], [(0, 1)])


@pytest.fixture
def sample_network():
    """Seven-edge network a..g with the b-c-d loop"""
    mm = 1e-3
    positions = [(0, 0, 2 * mm), (mm, 0, 2 * mm), (2 * mm, 0, 3 * mm), (2 * mm, 0, mm),
                 (3 * mm, 0, 4 * mm), (3 * mm, 0, 3 * mm), (3 * mm, 0, mm)]
    edges = [(0, 1), (1, 2), (1, 3), (2, 3), (2, 4), (2, 5), (3, 6)]
    return build_network(positions, edges)


def y_network(ratio: float = 1.0) -> VesselNetwork:
    """Parent plus two equal-length daughters whose conductances are 1 : ratio"""
    r = 40e-6
    positions = [(0.0, 0.0, Z0), (1e-3, 0.0, Z0), (2e-3, 0.0, Z0 + 1e-3), (2e-3, 0.0, Z0 - 1e-3)]
    return build_network(positions, [(0, 1, 60e-6), (1, 2, r), (1, 3, r * ratio**0.25)])


@pytest.fixture
def y_symmetric():
    return y_network(1.0)


@pytest.fixture
def y_one_three():
    return y_network(3.0)


def inlet_outlet(net: VesselNetwork, inlet: float = 100.0, outlet: float = 0.0) -> BoundaryConditions:
    """Node 0 at the inlet pressure, every other hanging node at the outlet"""
    hanging = np.flatnonzero(net.degrees == 1).tolist()
    return BoundaryConditions(pressures={n: inlet if n == 0 else outlet for n in hanging})


@pytest.fixture
def small_tx():
    return TransducerConfig(n_elements=64, pitch=0.3e-3, f0=5e6, fs=40e6, max_depth=0.02)


@pytest.fixture
def single_element():
    return TransducerConfig(n_elements=1, f0=5e6, fs=40e6, max_depth=0.03)


@pytest.fixture
def quiet():
    return NoiseConfig(snr_db=None)


@pytest.fixture
def grid():
    return ImagingGrid(x_min=-2e-3, x_max=2e-3, z_min=8e-3, z_max=12e-3, dx=50e-6, dz=50e-6)


@pytest.fixture
def binary_tree():
    """Mirror-symmetric depth-2 binary tree"""
    positions = [(0, 0, Z0), (1e-3, 0, Z0), (2e-3, 0, Z0 + 1e-3), (2e-3, 0, Z0 - 1e-3),
                 (3e-3, 0, Z0 + 1.5e-3), (3e-3, 0, Z0 + 0.5e-3), (3e-3, 0, Z0 - 0.5e-3), (3e-3, 0, Z0 - 1.5e-3)]
    edges = [(0, 1), (1, 2), (1, 3), (2, 4), (2, 5), (3, 6), (3, 7)]
    return build_network(positions, edges)
