from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class TransducerConfig(BaseModel):
    """Linear array of point elements on the x axis at z = 0"""
    model_config = ConfigDict(frozen=True)

    n_elements: int = Field(128, ge=1)
    pitch: float = Field(0.3e-3, gt=0)
    f0: float = Field(5e6, gt=0)
    bandwidth: float = Field(0.6, gt=0, le=2.0, description="fractional -6 dB bandwidth")
    fs: float = Field(40e6, gt=0)
    c: float = Field(1540.0, gt=0)
    n_cycles: float = Field(3.0, gt=0)
    window: Literal["hann", "rect", "tukey"] = "hann"
    angles: tuple[float, ...] = (0.0,)
    amplitude: float = Field(2e3, gt=0, description="Pa at 1 cm per element")
    mi: float | None = Field(None, gt=0, description="calibrate amplitude to this mechanical index")
    baffle: bool = False
    elevation_fwhm: float | None = Field(None, gt=0, description="Gaussian slice thickness, m")
    max_depth: float = Field(0.04, gt=0)

    @model_validator(mode="after")
    def sampling(self):
        if self.fs <= 4 * self.f0:
            raise ValueError(f"fs must exceed 4*f0, got fs={self.fs} f0={self.f0}")
        if not self.angles:
            raise ValueError("at least one plane-wave angle is required")
        if any(abs(a) >= np.pi / 2 for a in self.angles):
            raise ValueError("plane-wave angles must lie in (-pi/2, pi/2)")
        return self

    @property
    def element_x(self) -> np.ndarray:
        return (np.arange(self.n_elements) - (self.n_elements - 1) / 2) * self.pitch

    @property
    def element_positions(self) -> np.ndarray:
        positions = np.zeros((self.n_elements, 3))
        positions[:, 0] = self.element_x
        return positions

    @property
    def aperture(self) -> float:
        return (self.n_elements - 1) * self.pitch

    @property
    def wavelength(self) -> float:
        return self.c / self.f0

    @property
    def n_samples(self) -> int:
        """Samples per acquisition: round trip to max_depth plus the aperture and pulse tails"""
        travel = (2.0 * self.max_depth + self.aperture) / self.c
        return int(np.ceil(travel * self.fs)) + int(np.ceil(4.0 * self.fs / self.f0))


class NoiseConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    snr_db: float | None = 40.0   # white noise relative to reference_level, None disables
    colored_band: tuple[float, float] | None = None   # Hz
    colored_level_db: float = -20.0
    tgc_db_per_cm: float = Field(0.0, ge=0)
    reference_level: float = Field(1.0, gt=0)

    @field_validator("colored_band")
    @classmethod
    def band_ordered(cls, v: tuple[float, float] | None):
        if v is not None and not 0 < v[0] < v[1]:
            raise ValueError("colored band needs 0 < f_lo < f_hi")
        return v


class ImagingGrid(BaseModel):
    """Pixel centres of the x-z imaging plane (y = 0)"""
    model_config = ConfigDict(frozen=True)

    x_min: float = -5e-3
    x_max: float = 5e-3
    z_min: float = 5e-3
    z_max: float = 15e-3
    dx: float = Field(50e-6, gt=0)
    dz: float = Field(50e-6, gt=0)

    @model_validator(mode="after")
    def extents(self):
        if self.x_max <= self.x_min or self.z_max <= self.z_min:
            raise ValueError("grid extents must be increasing")
        if self.z_min <= 0:
            raise ValueError("grid must lie in front of the array (z > 0)")
        return self

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(int(np.floor((self.x_max - self.x_min) / self.dx + 1e-9)) + 1)

    @property
    def z(self) -> np.ndarray:
        return self.z_min + self.dz * np.arange(int(np.floor((self.z_max - self.z_min) / self.dz + 1e-9)) + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.z), len(self.x)

    def index_of(self, x: float, z: float) -> tuple[float, float]:
        """Fractional (row, col) of a physical point"""
        return (z - self.z_min) / self.dz, (x - self.x_min) / self.dx


class RFFrame(BaseModel):
    """Received channel data, (n_angles, n_elements, n_samples), t = 0 at the first firing"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    fs: float = Field(..., gt=0)

    @field_validator("data")
    @classmethod
    def shape_and_values(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 3:
            raise ValueError("RF data must be (angles, elements, samples)")
        if not np.all(np.isfinite(v)):
            raise ValueError("RF data must be finite")
        return v

    @property
    def n_angles(self) -> int:
        return self.data.shape[0]

    @property
    def n_elements(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]


class BModeImage(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: ImagingGrid
    envelope: np.ndarray
    db: np.ndarray
    dynamic_range: float = Field(60.0, gt=0)

    @model_validator(mode="after")
    def matches_grid(self):
        if self.envelope.shape != self.grid.shape or self.db.shape != self.grid.shape:
            raise ValueError(f"image shape {self.db.shape} does not match grid {self.grid.shape}")
        if np.any(self.db > 0):
            raise ValueError("dB map must be peak normalised")
        return self
