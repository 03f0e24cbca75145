from typing import Literal

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

Axes = Literal["xyz", "xz", "xy"]

LOCALIZATION_COLUMNS = ["frame", "loc_id", "x", "y", "z"]
PAIR_COLUMNS = ["frame", "bubble_a", "bubble_b", "distance"]


class Localization(BaseModel):
    model_config = ConfigDict(frozen=True)

    frame: int = Field(..., ge=0)
    loc_id: int = Field(..., ge=0)
    position: tuple[float, float, float]
    track_id: int | None = None


class LocalizationTable(BaseModel):
    """Predicted localisations, optionally carrying a track_id column"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: pd.DataFrame

    @field_validator("data")
    @classmethod
    def has_columns(cls, df: pd.DataFrame) -> pd.DataFrame:
        missing = [c for c in LOCALIZATION_COLUMNS if c not in df.columns]
        if missing:
            raise ValueError(f"localisation table is missing columns {missing}")
        return df.sort_values(["frame", "loc_id"], kind="mergesort").reset_index(drop=True)

    @classmethod
    def from_records(cls, locs: list[Localization]) -> "LocalizationTable":
        rows = [(loc.frame, loc.loc_id, *loc.position, loc.track_id) for loc in locs]
        data = pd.DataFrame(rows, columns=LOCALIZATION_COLUMNS + ["track_id"])
        if data["track_id"].isna().all():
            data = data.drop(columns="track_id")
        return cls(data=data.astype({"frame": "int64", "loc_id": "int64"}))

    def __len__(self) -> int:
        return len(self.data)

    @property
    def has_tracks(self) -> bool:
        return "track_id" in self.data.columns


class TrackAssignment(BaseModel):
    """(frame, loc_id) -> track_id; a key maps to one track only"""
    tracks: dict[tuple[int, int], int] = {}

    def to_frame(self) -> pd.DataFrame:
        rows = [(frame, loc_id, track) for (frame, loc_id), track in self.tracks.items()]
        return pd.DataFrame(rows, columns=["frame", "loc_id", "track_id"]).astype("int64")


class MatchResult(BaseModel):
    """One-to-one radius-gated correspondences per frame"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    radius: float = Field(..., gt=0)
    axes: Axes = "xyz"
    tp: pd.DataFrame   # frame, bubble_id, loc_id, distance
    fn: pd.DataFrame   # frame, bubble_id
    fp: pd.DataFrame   # frame, loc_id

    @property
    def n_tp(self) -> int:
        return len(self.tp)

    @property
    def n_fn(self) -> int:
        return len(self.fn)

    @property
    def n_fp(self) -> int:
        return len(self.fp)


class PairSets(BaseModel):
    """Consecutive-frame pairs with the ground-truth distance they travel"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tp: pd.DataFrame
    fp: pd.DataFrame
    fn: pd.DataFrame

    @classmethod
    def empty_frame(cls) -> pd.DataFrame:
        return pd.DataFrame({c: pd.Series(dtype="float64" if c == "distance" else "int64") for c in PAIR_COLUMNS})


class LocalizationScores(BaseModel):
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    mean_loc_error: float = Field(..., ge=0)   # sum of TP distances / N_TP
    rmse_strict: float = Field(..., ge=0)
    n_tp: int
    n_fp: int
    n_fn: int
    undefined: list[str] = []


class TrackingScores(BaseModel):
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    jaccard: float = Field(..., ge=0, le=1)
    j_map: float = Field(..., ge=-1, le=1)
    tp_d: float
    fp_d: float
    fn_d: float
    n_tp: int
    n_fp: int
    n_fn: int
    undefined: list[str] = []


class EvalReport(BaseModel):
    radius: float
    axes: Axes = "xyz"
    localization: LocalizationScores
    tracking: TrackingScores | None = None
    per_frame: list[dict] = []

    def headline(self) -> dict:
        """The six summary numbers"""
        out = {
            "precision": self.localization.precision,
            "recall": self.localization.recall,
            "mean_loc_error": self.localization.mean_loc_error,
        }
        if self.tracking is not None:
            out |= {
                "tracking_precision": self.tracking.precision,
                "tracking_recall": self.tracking.recall,
                "j_map": self.tracking.j_map,
            }
        return out
