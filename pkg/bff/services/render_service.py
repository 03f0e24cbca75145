import logging

import numpy as np
import pandas as pd

from bff.models.acoustics import BModeImage, ImagingGrid

logger = logging.getLogger(__name__)

GT_COLOUR = (0, 255, 0)
PRED_COLOUR = (255, 0, 0)


def track_table(data: pd.DataFrame, id_column: str) -> pd.DataFrame:
    """frame, track, x, z rows from ground truth (bubble_id) or predictions (track_id)"""
    table = data[["frame", id_column, "x", "z"]].rename(columns={id_column: "track"})
    return table.dropna(subset=["track"]).sort_values(["track", "frame"], kind="mergesort")


def _edges(grid: ImagingGrid) -> tuple[np.ndarray, np.ndarray]:
    z_edges = np.append(grid.z - grid.dz / 2, grid.z[-1] + grid.dz / 2)
    x_edges = np.append(grid.x - grid.dx / 2, grid.x[-1] + grid.dx / 2)
    return z_edges, x_edges


def _segments(tracks: pd.DataFrame, grid: ImagingGrid, frame_rate: float):
    """Points sampled along every consecutive-frame link, with the link speed"""
    step = 0.5 * min(grid.dx, grid.dz)
    xs, zs, speeds = [], [], []
    for _, group in tracks.groupby("track", sort=True):
        frames = group["frame"].to_numpy(dtype=int)
        pos = group[["x", "z"]].to_numpy(dtype=float)
        if len(pos) == 1:
            xs.append(pos[:, 0])
            zs.append(pos[:, 1])
            speeds.append(np.zeros(1))
            continue
        for k in np.flatnonzero(np.diff(frames) == 1):
            a, b = pos[k], pos[k + 1]
            length = float(np.linalg.norm(b - a))
            n = int(np.ceil(length / step)) + 1
            s = np.linspace(0.0, 1.0, n)
            xs.append(a[0] + s * (b[0] - a[0]))
            zs.append(a[1] + s * (b[1] - a[1]))
            speeds.append(np.full(n, length * frame_rate))
    if not xs:
        return np.empty(0), np.empty(0), np.empty(0)
    return np.concatenate(xs), np.concatenate(zs), np.concatenate(speeds)


def render_sr_image(tracks: pd.DataFrame, grid: ImagingGrid, frame_rate: float = 1.0) -> np.ndarray:
    """Accumulated track density on the grid"""
    x, z, _ = _segments(tracks, grid, frame_rate)
    image, _, _ = np.histogram2d(z, x, bins=_edges(grid))
    return image


def render_velocity_map(tracks: pd.DataFrame, grid: ImagingGrid, frame_rate: float) -> np.ndarray:
    """Mean link speed per pixel, zero where no track passes"""
    x, z, speed = _segments(tracks, grid, frame_rate)
    bins = _edges(grid)
    total, _, _ = np.histogram2d(z, x, bins=bins, weights=speed)
    count, _, _ = np.histogram2d(z, x, bins=bins)
    out = np.zeros(grid.shape)
    np.divide(total, count, out=out, where=count > 0)
    return out


def _mark(rgb: np.ndarray, grid: ImagingGrid, points: np.ndarray, colour, arm: int = 2) -> None:
    n_z, n_x = grid.shape
    for x, z in points:
        r, c = (int(round(v)) for v in grid.index_of(x, z))
        for k in range(-arm, arm + 1):
            if 0 <= r + k < n_z and 0 <= c < n_x:
                rgb[r + k, c] = colour
            if 0 <= r < n_z and 0 <= c + k < n_x:
                rgb[r, c + k] = colour


def render_overlay(bmode: BModeImage, gt: pd.DataFrame, pred: pd.DataFrame) -> np.ndarray:
    """Grey B-mode with ground-truth crosses in green and predictions in red"""
    grey = np.interp(bmode.db, [-bmode.dynamic_range, 0.0], [0, 255]).astype(np.uint8)
    rgb = np.repeat(grey[:, :, None], 3, axis=2)
    _mark(rgb, bmode.grid, gt[["x", "z"]].to_numpy(dtype=float), GT_COLOUR)
    _mark(rgb, bmode.grid, pred[["x", "z"]].to_numpy(dtype=float), PRED_COLOUR)
    return rgb
