import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from bff.config import get_settings
from bff.models.flow import BoundaryConditions, BoundaryConfig, FlowSolution, FluidParams
from bff.models.network import VesselNetwork
from bff.services.exceptions import DomainError, InvalidNetworkError, SingularSystemError
from bff.services.network_service import hanging_nodes, inlet_nodes, split_incidence

logger = logging.getLogger(__name__)

LAMINAR_LIMIT = 2300.0
CONSERVATION_TOL = 1e-10


def edge_resistance(radius, length, mu):
    """Hagen-Poiseuille resistance 8*mu*l / (pi*r^4), Pa*s/m^3"""
    radius, length = np.asarray(radius, dtype=float), np.asarray(length, dtype=float)
    if np.any(radius <= 0) or np.any(length <= 0) or mu <= 0:
        raise DomainError("radius, length and viscosity must be positive")
    xi = 8.0 * mu * length / (np.pi * radius**4)
    return float(xi) if xi.ndim == 0 else xi


def velocity_profile(u_max, r_frac):
    """Parabolic laminar profile u_max * (1 - r^2/R^2)"""
    r_frac = np.asarray(r_frac, dtype=float)
    if np.any(r_frac < 0) or np.any(r_frac > 1):
        raise DomainError("r_frac must lie in [0, 1]")
    u = u_max * (1.0 - r_frac**2)
    return float(u) if np.ndim(u) == 0 else u


def reynolds(u, diameter, nu):
    """Re = u*D/nu with nu the kinematic viscosity"""
    re = np.asarray(u, dtype=float) * np.asarray(diameter, dtype=float) / nu
    if np.any(re >= LAMINAR_LIMIT):
        logger.warning(f"Reynolds number {float(np.max(re)):.1f} is not laminar (>= {LAMINAR_LIMIT})")
    return float(re) if re.ndim == 0 else re


def boundary_conditions(
    net: VesselNetwork, config: BoundaryConfig, rng: np.random.Generator | None = None
) -> BoundaryConditions:
    """Inlets at the inlet pressure, other hanging nodes at the (jittered) outlet pressure"""
    inlets = set(inlet_nodes(net))
    pressures = {}
    for node in sorted(hanging_nodes(net)):
        if node in inlets:
            pressures[node] = config.inlet_pa
        else:
            jitter = 0.0
            if rng is not None and config.outlet_jitter_pa > 0:
                jitter = float(rng.uniform(-config.outlet_jitter_pa, config.outlet_jitter_pa))
            pressures[node] = config.outlet_pa + jitter
    return BoundaryConditions(pressures=pressures)


def _check_components(net: VesselNetwork, hanging: np.ndarray) -> None:
    adjacency = sp.coo_matrix(
        (np.ones(net.n_edges), (net.sources, net.targets)), shape=(net.n_nodes, net.n_nodes)
    )
    n_comp, labels = connected_components(adjacency, directed=False)
    grounded = set(labels[hanging].tolist())
    for comp in range(n_comp):
        if comp not in grounded:
            members = np.flatnonzero(labels == comp).tolist()
            raise SingularSystemError(
                f"component with nodes {members[:20]} has no hanging node, pressure is undetermined",
                members,
            )


def _solve_spd(m: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    if m.shape[0] == 0:
        return np.zeros(0)
    if m.shape[0] <= get_settings().cg_threshold:
        return spla.splu(m.tocsc()).solve(b)
    x, info = spla.cg(m, b, rtol=1e-12, maxiter=10 * m.shape[0])
    if info != 0:
        raise SingularSystemError(f"conjugate gradient did not converge (info={info})", [])
    return x


def solve_flow(net: VesselNetwork, bc: BoundaryConditions, fluid: FluidParams) -> FlowSolution:
    """Pressures and flows from M P_n = b with M = I_nh^T C I_nh, b = -I_nh^T C I_h P_0"""
    split = split_incidence(net)
    missing = set(split.hanging.tolist()) - set(bc.pressures)
    extra = set(bc.pressures) - set(split.hanging.tolist())
    if missing:
        raise InvalidNetworkError(f"no boundary pressure for hanging nodes {sorted(missing)}")
    if extra:
        raise InvalidNetworkError(f"boundary pressures given for non-hanging nodes {sorted(extra)}")
    _check_components(net, split.hanging)

    p0 = np.array([bc.pressures[int(n)] for n in split.hanging], dtype=float)
    if np.ptp(p0) == 0:
        logger.warning("All boundary pressures are equal, every flow will be zero")

    lengths, radii = net.lengths, net.radii
    c = sp.diags(1.0 / edge_resistance(radii, lengths, fluid.mu))
    m = (split.i_nh.T @ c @ split.i_nh).tocsr()
    b = -(split.i_nh.T @ (c @ (split.i_h @ p0)))
    p_n = _solve_spd(m, b)

    p_e = split.i_h @ p0 + split.i_nh @ p_n
    q_e = c @ p_e
    u_max = 2.0 * np.abs(q_e) / (np.pi * radii**2)

    node_pressure = np.empty(net.n_nodes)
    node_pressure[split.hanging] = p0
    node_pressure[split.internal] = p_n

    residual = split.i_nh.T @ q_e
    scale = np.max(np.abs(q_e)) if q_e.size else 0.0
    worst = float(np.max(np.abs(residual))) if residual.size else 0.0
    if scale > 0 and worst > CONSERVATION_TOL * scale:
        logger.warning(f"Flow conservation residual {worst:.3e} exceeds tolerance (max |Q| {scale:.3e})")

    re = reynolds(u_max / 2.0, 2.0 * radii, fluid.nu)
    logger.info(
        f"Solved flow for {net.n_edges} edges / {len(p_n)} unknown pressures, "
        f"max u={float(np.max(u_max)):.4g} m/s, max Re={float(np.max(re)):.3g}"
    )
    return FlowSolution(
        node_pressure=node_pressure,
        edge_pressure_drop=p_e,
        edge_flow=q_e,
        edge_max_velocity=u_max,
        edge_length=lengths,
        edge_radius=radii,
        reynolds=re,
        conservation_residual=worst,
    )

