from functools import cached_property
from typing import Annotated, Literal, NamedTuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vector3 = tuple[float, float, float]


def orthonormal_frame(d: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Canonical (d, e1, e2) for an axis direction"""
    d = np.asarray(d, dtype=float)
    d = d / np.linalg.norm(d)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(d)))] = 1.0
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return d, e1, e2


def rotate_frame(
    d: np.ndarray, e1: np.ndarray, e2: np.ndarray, polar: float, azimuth: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tilt d by `polar` towards the azimuth direction measured in the (e1, e2) plane"""
    lateral = np.cos(azimuth) * e1 + np.sin(azimuth) * e2
    new_d = np.cos(polar) * d + np.sin(polar) * lateral
    new_d /= np.linalg.norm(new_d)
    new_e1 = e1 - np.dot(e1, new_d) * new_d
    norm = np.linalg.norm(new_e1)
    if norm < 1e-8:
        new_e1 = e2 - np.dot(e2, new_d) * new_d
        norm = np.linalg.norm(new_e1)
    new_e1 /= norm
    new_e2 = np.cross(new_d, new_e1)
    return new_d, new_e1, new_e2


class GenState(NamedTuple):
    """Generator state handed to every parameter function"""
    n: np.ndarray
    d: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    r: float
    lvl: int
    k: int = 0  # node index along the current vessel


# ─── scalar parameter functions (step sizes and radii) ───

class ConstantParam(BaseModel):
    kind: Literal["constant"] = "constant"
    value: float

    def evaluate(self, state: GenState, rng: np.random.Generator) -> float:
        return self.value

    def is_positive(self, max_level: int) -> bool:
        return self.value > 0


class LinearInLevelParam(BaseModel):
    kind: Literal["linear_in_level"] = "linear_in_level"
    base: float
    slope: float

    def evaluate(self, state: GenState, rng: np.random.Generator) -> float:
        return self.base + self.slope * state.lvl

    def is_positive(self, max_level: int) -> bool:
        return all(self.base + self.slope * lvl > 0 for lvl in range(max_level + 2))


class UniformParam(BaseModel):
    kind: Literal["uniform"] = "uniform"
    low: float
    high: float

    @model_validator(mode="after")
    def ordered(self):
        if self.high < self.low:
            raise ValueError("uniform range needs low <= high")
        return self

    def evaluate(self, state: GenState, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.low, self.high))

    def is_positive(self, max_level: int) -> bool:
        return self.low > 0


class RadiusScaledParam(BaseModel):
    """Current radius times a factor drawn uniformly from [low, high]"""
    kind: Literal["radius_scaled"] = "radius_scaled"
    low: float
    high: float

    @model_validator(mode="after")
    def ordered(self):
        if self.high < self.low:
            raise ValueError("factor range needs low <= high")
        return self

    def evaluate(self, state: GenState, rng: np.random.Generator) -> float:
        factor = self.low if self.low == self.high else float(rng.uniform(self.low, self.high))
        return state.r * factor

    def is_positive(self, max_level: int) -> bool:
        return self.low > 0


ScalarParam = Annotated[
    Union[ConstantParam, LinearInLevelParam, UniformParam, RadiusScaledParam],
    Field(discriminator="kind"),
]


# ─── bifurcation occurrence ───

class BernoulliParam(BaseModel):
    kind: Literal["bernoulli"] = "bernoulli"
    p: float = Field(..., ge=0.0, le=1.0)
    level_decay: float = Field(1.0, gt=0.0, description="p is multiplied by this per level")

    def evaluate(self, state: GenState, rng: np.random.Generator) -> bool:
        # always draw so the stream position does not depend on p
        return bool(rng.random() < self.p * self.level_decay ** state.lvl)


class EveryNthParam(BaseModel):
    """Bifurcate every n-th node along a vessel (deterministic)"""
    kind: Literal["every"] = "every"
    n: int = Field(..., ge=1)
    offset: int = Field(0, ge=0)

    def evaluate(self, state: GenState, rng: np.random.Generator) -> bool:
        return state.k >= self.offset and (state.k - self.offset) % self.n == 0


FlagParam = Annotated[Union[BernoulliParam, EveryNthParam], Field(discriminator="kind")]


# ─── orientation updates ───

class FixedRotationParam(BaseModel):
    kind: Literal["fixed"] = "fixed"
    polar: float = 0.0
    azimuth: float = 0.0

    def evaluate(self, state: GenState, rng: np.random.Generator):
        return rotate_frame(state.d, state.e1, state.e2, self.polar, self.azimuth)


class ConeRotationParam(BaseModel):
    """Uniform direction on the spherical band between min_angle and max_angle around d"""
    kind: Literal["cone"] = "cone"
    max_angle: float = Field(..., ge=0.0, le=np.pi)
    min_angle: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def ordered(self):
        if self.min_angle > self.max_angle:
            raise ValueError("cone needs min_angle <= max_angle")
        return self

    def evaluate(self, state: GenState, rng: np.random.Generator):
        cos_polar = rng.uniform(np.cos(self.max_angle), np.cos(self.min_angle))
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        return rotate_frame(state.d, state.e1, state.e2, float(np.arccos(cos_polar)), azimuth)


RotationParam = Annotated[Union[FixedRotationParam, ConeRotationParam], Field(discriminator="kind")]


# ─── organ shapes for inside_f ───

class BoxShape(BaseModel):
    kind: Literal["box"] = "box"
    low: Vector3
    high: Vector3

    def contains(self, point: np.ndarray) -> bool:
        return bool(np.all(point >= np.asarray(self.low)) and np.all(point <= np.asarray(self.high)))


class SphereShape(BaseModel):
    kind: Literal["sphere"] = "sphere"
    center: Vector3
    radius: float = Field(..., gt=0)

    def contains(self, point: np.ndarray) -> bool:
        return bool(np.linalg.norm(point - np.asarray(self.center)) <= self.radius)


class EllipsoidShape(BaseModel):
    kind: Literal["ellipsoid"] = "ellipsoid"
    center: Vector3
    semi_axes: Vector3

    @field_validator("semi_axes")
    @classmethod
    def axes_positive(cls, v: Vector3) -> Vector3:
        if min(v) <= 0:
            raise ValueError("semi axes must be positive")
        return v

    def contains(self, point: np.ndarray) -> bool:
        scaled = (point - np.asarray(self.center)) / np.asarray(self.semi_axes)
        return bool(np.dot(scaled, scaled) <= 1.0)


ShapeParam = Annotated[Union[BoxShape, SphereShape, EllipsoidShape], Field(discriminator="kind")]


class GenParams(BaseModel):
    edge_step_f: ScalarParam
    inside_f: ShapeParam
    rot_f: RotationParam = FixedRotationParam()
    r_decay_f: ScalarParam = RadiusScaledParam(low=1.0, high=1.0)
    bif_occurs_f: FlagParam = BernoulliParam(p=0.0)
    bif_r_decay_f: ScalarParam = RadiusScaledParam(low=0.8, high=0.8)
    bif_rot_f: RotationParam = ConeRotationParam(min_angle=np.pi / 6, max_angle=np.pi / 3)

    max_level: int = Field(3, ge=0)
    seed: int = Field(0, ge=0, lt=2**63)
    initial_position: Vector3 = (0.0, 0.0, 0.01)
    initial_direction: Vector3 = (1.0, 0.0, 0.0)
    initial_radius: float = Field(50e-6, gt=0)

    @field_validator("initial_direction")
    @classmethod
    def direction_nonzero(cls, v: Vector3) -> Vector3:
        if np.linalg.norm(v) == 0:
            raise ValueError("initial direction must be non-zero")
        return v


class Node(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0)
    position: Vector3

    @field_validator("position")
    @classmethod
    def finite(cls, v: Vector3) -> Vector3:
        if not np.all(np.isfinite(v)):
            raise ValueError("node position must be finite")
        return v


class Edge(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int = Field(..., ge=0)
    source: int = Field(..., ge=0)
    target: int = Field(..., ge=0)
    radius: float = Field(..., gt=0)


class VesselNetwork(BaseModel):
    """Directed vessel graph; ids are dense and equal list position"""
    model_config = ConfigDict(frozen=True)

    nodes: list[Node]
    edges: list[Edge]

    @model_validator(mode="after")
    def structure(self):
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise ValueError(f"node ids must be dense and ordered, got {node.id} at {i}")
        seen = set()
        for i, edge in enumerate(self.edges):
            if edge.id != i:
                raise ValueError(f"edge ids must be dense and ordered, got {edge.id} at {i}")
            if edge.source >= len(self.nodes) or edge.target >= len(self.nodes):
                raise ValueError(f"edge {edge.id} references an unknown node")
            if edge.source == edge.target:
                raise ValueError(f"edge {edge.id} is a self-loop")
            key = frozenset((edge.source, edge.target))
            if key in seen:
                raise ValueError(f"edge {edge.id} duplicates another edge")
            seen.add(key)
            if np.array_equal(self.nodes[edge.source].position, self.nodes[edge.target].position):
                raise ValueError(f"edge {edge.id} has zero length")
        return self

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def positions(self) -> np.ndarray:
        return np.array([node.position for node in self.nodes], dtype=float).reshape(-1, 3)

    @cached_property
    def sources(self) -> np.ndarray:
        return np.array([edge.source for edge in self.edges], dtype=int)

    @cached_property
    def targets(self) -> np.ndarray:
        return np.array([edge.target for edge in self.edges], dtype=int)

    @cached_property
    def radii(self) -> np.ndarray:
        return np.array([edge.radius for edge in self.edges], dtype=float)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.positions[self.targets] - self.positions[self.sources], axis=1)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.sources, self.targets]), minlength=self.n_nodes)

    @cached_property
    def frames(self) -> np.ndarray:
        """(n_edges, 3, 3) stacked (d, e1, e2) per edge"""
        axes = self.positions[self.targets] - self.positions[self.sources]
        return np.array([np.stack(orthonormal_frame(axis)) for axis in axes]).reshape(-1, 3, 3)

    def frame(self, edge_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d, e1, e2 = self.frames[edge_id]
        return d, e1, e2
