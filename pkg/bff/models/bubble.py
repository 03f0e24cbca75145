from typing import NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class BubbleParams(BaseModel):
    """Marmottant shell and liquid parameters for one bubble.

    kappa_s is stored in kg/s (N*s/m); published tables that print it in
    N are assumed to drop the time unit.
    """

    rho_l: float = Field(1e3, gt=0, description="liquid density, kg/m^3")
    sigma_water: float = Field(0.073, gt=0, description="N/m")
    mu_l: float = Field(2.0e-3, ge=0, description="Pa*s")
    kappa: float = Field(1.095, gt=0, description="polytropic exponent")
    kappa_s: float = Field(7.2e-9, ge=0, description="surface dilatational viscosity, kg/s")
    chi: float = Field(1.0, gt=0, description="elastic modulus, N/m")
    r0: float = Field(0.975e-6, gt=0)
    r_buckle: float = Field(0.975e-6, gt=0)
    r_break: float | None = Field(None, gt=0)
    r_ruptured: float | None = Field(None, gt=0)
    p0_ambient: float = Field(101325.0, gt=0)
    c: float = Field(1540.0, gt=0)

    @model_validator(mode="after")
    def radii_consistent(self):
        if self.r_break is None:
            # sigma(R_break) = sigma_water keeps the curve continuous
            self.r_break = self.r_buckle * float(np.sqrt(1.0 + self.sigma_water / self.chi))
        if self.r_ruptured is None:
            self.r_ruptured = self.r_break
        if not self.r_buckle <= self.r0 <= self.r_break:
            raise ValueError(
                f"need r_buckle <= r0 <= r_break, got {self.r_buckle}, {self.r0}, {self.r_break}"
            )
        return self


class BubbleBatch(NamedTuple):
    """Column view of many BubbleParams for vectorised integration"""
    rho_l: np.ndarray
    sigma_water: np.ndarray
    mu_l: np.ndarray
    kappa: np.ndarray
    kappa_s: np.ndarray
    chi: np.ndarray
    r0: np.ndarray
    r_buckle: np.ndarray
    r_break: np.ndarray
    r_ruptured: np.ndarray
    p0_ambient: np.ndarray
    c: np.ndarray

    @classmethod
    def stack(cls, params: Sequence[BubbleParams]) -> "BubbleBatch":
        return cls(*(np.array([getattr(p, name) for p in params], dtype=float) for name in cls._fields))

    def subset(self, index: np.ndarray) -> "BubbleBatch":
        return BubbleBatch(*(field[index] for field in self))

    def __len__(self) -> int:   # NamedTuple length would be the field count
        return len(self.r0)


class DriveSignal(BaseModel):
    """Incident pressure at the bubble, uniformly sampled from t0.

    samples may be 1-D (one bubble) or 2-D (bubbles x time) with one t0 per row.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t0: float | np.ndarray = 0.0
    fs: float = Field(..., gt=0)
    samples: np.ndarray

    @field_validator("samples")
    @classmethod
    def finite(cls, v: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(v)):
            raise ValueError("drive samples must be finite")
        return v

    @property
    def n_samples(self) -> int:
        return self.samples.shape[-1]


class BubbleTrace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t0: float | np.ndarray
    fs: float
    radius: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    ruptured: np.ndarray

    @property
    def time(self) -> np.ndarray:
        """Sample times, broadcast per bubble for 2-D traces"""
        offsets = np.arange(self.radius.shape[-1]) / self.fs
        return np.asarray(self.t0)[..., None] + offsets if np.ndim(self.t0) else self.t0 + offsets
