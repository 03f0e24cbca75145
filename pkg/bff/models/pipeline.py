import hashlib
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, model_validator

from bff.models.acoustics import ImagingGrid, NoiseConfig, TransducerConfig
from bff.models.bubble import BubbleParams
from bff.models.evaluation import Axes
from bff.models.flow import BoundaryConfig, FluidParams
from bff.models.network import GenParams
from bff.models.tracks import RadialLaw


class BubbleConfig(BaseModel):
    preset: Literal["sonovue", "custom"] = "sonovue"
    params: BubbleParams | None = None
    params_file: Path | None = None   # TOML keyed by the BubbleParams field names
    count: int = Field(20, ge=1)
    frame_rate: float = Field(100.0, gt=0)
    n_frames: int = Field(100, ge=1)
    radial_law: RadialLaw = "uniform"
    r0_range: tuple[float, float] | None = None
    buckle_ratio: float = Field(1.0, gt=0, le=1.0)
    oversample: int = Field(10, ge=1)
    ring_down: float = Field(1e-6, ge=0)
    trace_bubbles: int = Field(0, ge=0)   # radius traces written by the simulate stage

    @model_validator(mode="after")
    def custom_needs_params(self):
        if self.preset == "custom" and (self.params is None) == (self.params_file is None):
            raise ValueError("custom bubbles need exactly one of a [bubbles.params] table or params_file")
        return self


class EvaluationConfig(BaseModel):
    radius: float | None = Field(None, gt=0)   # half a wavelength when unset
    axes: Axes = "xz"
    threshold_db: float = -20.0
    min_sep: float | None = Field(None, ge=0)   # a wavelength when unset
    max_link: float | None = Field(None, gt=0)   # derived from the fastest vessel when unset
    dynamic_range: float = Field(60.0, gt=0)


class PipelineConfig(BaseModel):
    name: str = "bff"
    seed: int = Field(0, ge=0, lt=2**63)
    network: GenParams | None = None
    networks: list[GenParams] = []
    fluid: FluidParams = FluidParams()
    boundary: BoundaryConfig = BoundaryConfig()
    bubbles: BubbleConfig = BubbleConfig()
    transducer: TransducerConfig = TransducerConfig()
    noise: NoiseConfig = NoiseConfig()
    grid: ImagingGrid = ImagingGrid()
    evaluation: EvaluationConfig = EvaluationConfig()

    @model_validator(mode="after")
    def one_network_source(self):
        if (self.network is None) == (not self.networks):
            raise ValueError("give exactly one of [network] or [[networks]]")
        if self.noise.colored_band is not None and self.noise.colored_band[1] >= self.transducer.fs / 2:
            raise ValueError("colored noise band must stay below fs/2")
        return self

    @property
    def generators(self) -> list[GenParams]:
        return [self.network] if self.network is not None else list(self.networks)

    @property
    def search_radius(self) -> float:
        return self.evaluation.radius or self.transducer.wavelength / 2

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


class DatasetManifest(BaseModel):
    name: str
    version: str
    seed: int
    config_hash: str
    files: dict[str, str] = {}   # path relative to the output directory -> sha256
