from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

RadialLaw = Literal["uniform", "flux", "axis"]

EVENT_COLUMNS = ["frame", "bubble_id", "x", "y", "z"]
OPTIONAL_EVENT_COLUMNS = ["speed", "r_frac"]


class TrackPath(BaseModel):
    """Root-to-leaf path through the flow-oriented tree"""
    model_config = ConfigDict(frozen=True)

    edges: tuple[int, ...]
    forward: tuple[bool, ...]   # True when the edge is traversed source -> target
    nodes: tuple[int, ...]
    probability: float = Field(..., ge=0.0, le=1.0)
    root: int
    root_weight: float = Field(1.0, ge=0.0, le=1.0)   # share of the total inflow entering at root


class ParticleState(BaseModel):
    model_config = ConfigDict(frozen=True)

    track: TrackPath
    edge_index: int = Field(0, ge=0)
    axial: float = Field(0.0, ge=0.0)   # m from the edge source node, along d
    r_frac: float = Field(0.0, ge=0.0, lt=1.0)
    theta: float = Field(0.0, ge=0.0, lt=2 * np.pi)
    active: bool = True

    @property
    def edge_id(self) -> int:
        return self.track.edges[self.edge_index]


class EventTable(BaseModel):
    """Ground-truth bubble positions, one row per (frame, bubble_id)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: pd.DataFrame

    @field_validator("data")
    @classmethod
    def well_formed(cls, df: pd.DataFrame) -> pd.DataFrame:
        missing = [c for c in EVENT_COLUMNS if c not in df.columns]
        if missing:
            raise ValueError(f"event table is missing columns {missing}")
        if not df["frame"].is_monotonic_increasing:
            raise ValueError("event table must be sorted by frame")
        if df.duplicated(["frame", "bubble_id"]).any():
            raise ValueError("(frame, bubble_id) must be unique")
        return df.reset_index(drop=True)

    def __len__(self) -> int:
        return len(self.data)

    @property
    def frames(self) -> np.ndarray:
        return np.unique(self.data["frame"].to_numpy())

    def at_frame(self, frame: int) -> pd.DataFrame:
        return self.data[self.data["frame"] == frame]
