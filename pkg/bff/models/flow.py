import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class FluidParams(BaseModel):
    mu: float = Field(3.5e-3, gt=0, description="dynamic viscosity, Pa*s")
    density: float = Field(1060.0, gt=0, description="kg/m^3, only used for Reynolds checks")

    @property
    def nu(self) -> float:
        """Kinematic viscosity, m^2/s"""
        return self.mu / self.density


class BoundaryConditions(BaseModel):
    pressures: dict[int, float] = Field(..., description="hanging node id -> pressure in Pa")


class BoundaryConfig(BaseModel):
    """Default pressure assignment: roots at the inlet pressure, every other hanging node at the outlet"""
    inlet_pa: float = 2000.0
    outlet_pa: float = 0.0
    outlet_jitter_pa: float = Field(0.0, ge=0)


class FlowSolution(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    node_pressure: np.ndarray   # Pa per node
    edge_pressure_drop: np.ndarray   # Pa, source minus target
    edge_flow: np.ndarray   # m^3/s, positive from source to target
    edge_max_velocity: np.ndarray   # m/s, centreline
    edge_length: np.ndarray   # m
    edge_radius: np.ndarray   # m
    reynolds: np.ndarray
    conservation_residual: float = 0.0

    @property
    def n_edges(self) -> int:
        return len(self.edge_flow)
