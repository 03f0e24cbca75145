from typing import Iterable
import logging

import numpy as np
import pandas as pd
from scipy import ndimage
from scipy.spatial.distance import cdist

from bff.models.acoustics import BModeImage
from bff.models.evaluation import (
    Axes,
    EvalReport,
    Localization,
    LocalizationScores,
    LocalizationTable,
    MatchResult,
    PairSets,
    PAIR_COLUMNS,
    TrackAssignment,
    TrackingScores,
)
from bff.models.tracks import EventTable
from bff.services.exceptions import DomainError, InputError

logger = logging.getLogger(__name__)


def _columns(axes: Axes) -> list[str]:
    return list(axes)


def _ratio(num: float, den: float, name: str, undefined: list[str]) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def match_localizations(
    gt: EventTable,
    pred: LocalizationTable,
    radius: float,
    axes: Axes = "xyz",
) -> MatchResult:
    """Greedy one-to-one matching per frame on ascending distance inside the radius"""
    if radius <= 0:
        raise DomainError("search radius must be positive")
    duplicated = pred.data.duplicated(["frame", "loc_id"])
    if duplicated.any():
        first = pred.data[duplicated].iloc[0]
        raise InputError(f"duplicate localisation id {int(first['loc_id'])} in frame {int(first['frame'])}")

    cols = _columns(axes)
    gt_frames = dict(tuple(gt.data.groupby("frame")))
    pred_frames = dict(tuple(pred.data.groupby("frame")))
    tp, fn, fp = [], [], []

    for frame in sorted(set(gt_frames) | set(pred_frames)):
        g = gt_frames.get(frame)
        p = pred_frames.get(frame)
        bubbles = g["bubble_id"].to_numpy(dtype=int) if g is not None else np.empty(0, dtype=int)
        locs = p["loc_id"].to_numpy(dtype=int) if p is not None else np.empty(0, dtype=int)
        used_g = np.zeros(len(bubbles), dtype=bool)
        used_p = np.zeros(len(locs), dtype=bool)

        if len(bubbles) and len(locs):
            dist = cdist(g[cols].to_numpy(dtype=float), p[cols].to_numpy(dtype=float))
            gi, pj = np.nonzero(dist <= radius)
            order = np.lexsort((locs[pj], bubbles[gi], dist[gi, pj]))
            for i, j in zip(gi[order], pj[order]):
                if used_g[i] or used_p[j]:
                    continue
                used_g[i] = used_p[j] = True
                tp.append((frame, bubbles[i], locs[j], dist[i, j]))

        fn.extend((frame, b) for b in bubbles[~used_g])
        fp.extend((frame, loc) for loc in locs[~used_p])

    result = MatchResult(
        radius=radius,
        axes=axes,
        tp=pd.DataFrame(tp, columns=["frame", "bubble_id", "loc_id", "distance"]).astype(
            {"frame": "int64", "bubble_id": "int64", "loc_id": "int64", "distance": "float64"}
        ),
        fn=pd.DataFrame(fn, columns=["frame", "bubble_id"]).astype("int64"),
        fp=pd.DataFrame(fp, columns=["frame", "loc_id"]).astype("int64"),
    )
    logger.info(f"Matched within {radius:.3g} m: TP={result.n_tp} FP={result.n_fp} FN={result.n_fn}")
    return result


def localization_metrics(m: MatchResult) -> LocalizationScores:
    undefined: list[str] = []
    distances = m.tp["distance"].to_numpy(dtype=float)
    precision = _ratio(m.n_tp, m.n_tp + m.n_fp, "precision", undefined)
    recall = _ratio(m.n_tp, m.n_tp + m.n_fn, "recall", undefined)
    mean_error = _ratio(float(distances.sum()), m.n_tp, "mean_loc_error", undefined)
    rmse = float(np.sqrt(np.mean(distances**2))) if m.n_tp else 0.0
    return LocalizationScores(
        precision=precision,
        recall=recall,
        mean_loc_error=mean_error,
        rmse_strict=rmse,
        n_tp=m.n_tp,
        n_fp=m.n_fp,
        n_fn=m.n_fn,
        undefined=undefined,
    )


def _track_column(pred: LocalizationTable, assign: TrackAssignment | None) -> pd.DataFrame:
    if assign is not None:
        return assign.to_frame()
    if not pred.has_tracks:
        raise InputError("tracking evaluation needs a track_id column or a track assignment")
    return pred.data.dropna(subset=["track_id"])[["frame", "loc_id", "track_id"]].astype("int64")


def tracking_pairs(
    gt: EventTable,
    match: MatchResult,
    pred: LocalizationTable,
    assign: TrackAssignment | None = None,
) -> PairSets:
    """Consecutive-frame pairs over true-positive localisations only"""
    cols = _columns(match.axes)
    position = {
        (int(f), int(b)): xyz
        for f, b, xyz in zip(gt.data["frame"], gt.data["bubble_id"], gt.data[cols].to_numpy(dtype=float))
    }

    def travel(frame: int, a: int, b: int) -> float:
        return float(np.linalg.norm(position[(frame + 1, b)] - position[(frame, a)]))

    tp_locs = match.tp[["frame", "bubble_id", "loc_id"]]
    tracked = tp_locs.merge(_track_column(pred, assign), on=["frame", "loc_id"], how="inner")
    clash = tracked.duplicated(["track_id", "frame"])
    if clash.any():
        row = tracked[clash].iloc[0]
        raise InputError(f"track {int(row['track_id'])} has several localisations in frame {int(row['frame'])}")

    localized = set(zip(tp_locs["frame"].astype(int), tp_locs["bubble_id"].astype(int)))
    gt_pairs = {(f, b) for f, b in localized if (f + 1, b) in localized}

    tp, fp = [], []
    covered = set()
    for _, group in tracked.sort_values(["track_id", "frame"]).groupby("track_id"):
        frames = group["frame"].to_numpy(dtype=int)
        bubbles = group["bubble_id"].to_numpy(dtype=int)
        for k in np.flatnonzero(np.diff(frames) == 1):
            f, a, b = int(frames[k]), int(bubbles[k]), int(bubbles[k + 1])
            if a == b:
                tp.append((f, a, b, travel(f, a, b)))
                covered.add((f, a))
            else:
                fp.append((f, a, b, travel(f, a, b)))

    fn = [(f, b, b, travel(f, b, b)) for f, b in sorted(gt_pairs - covered)]

    def frame_of(rows):
        return pd.DataFrame(rows, columns=PAIR_COLUMNS) if rows else PairSets.empty_frame()

    return PairSets(tp=frame_of(tp), fp=frame_of(fp), fn=frame_of(fn))


def tracking_metrics(pairs: PairSets) -> TrackingScores:
    """Pair precision and recall plus the distance-weighted Jaccard index remapped to [-1, 1]"""
    undefined: list[str] = []
    n_tp, n_fp, n_fn = len(pairs.tp), len(pairs.fp), len(pairs.fn)
    tp_d = float(pairs.tp["distance"].sum())
    fp_d = float(pairs.fp["distance"].sum())
    fn_d = float(pairs.fn["distance"].sum())
    jaccard = _ratio(tp_d, tp_d + fp_d + fn_d, "jaccard", undefined)
    return TrackingScores(
        precision=_ratio(n_tp, n_tp + n_fp, "precision", undefined),
        recall=_ratio(n_tp, n_tp + n_fn, "recall", undefined),
        jaccard=jaccard,
        j_map=2.0 * jaccard - 1.0,
        tp_d=tp_d,
        fp_d=fp_d,
        fn_d=fn_d,
        n_tp=n_tp,
        n_fp=n_fp,
        n_fn=n_fn,
        undefined=undefined,
    )


def evaluate(
    gt: EventTable,
    pred: LocalizationTable,
    radius: float,
    axes: Axes = "xyz",
    assign: TrackAssignment | None = None,
) -> EvalReport:
    """Localisation scores, tracking scores when tracks are available, and a per-frame breakdown"""
    match = match_localizations(gt, pred, radius, axes)
    tracking = None
    if assign is not None or pred.has_tracks:
        tracking = tracking_metrics(tracking_pairs(gt, match, pred, assign))

    counts = pd.concat(
        [
            match.tp.groupby("frame").size().rename("tp"),
            match.fp.groupby("frame").size().rename("fp"),
            match.fn.groupby("frame").size().rename("fn"),
        ],
        axis=1,
    ).fillna(0).astype(int)
    per_frame = [{"frame": int(f), **{k: int(v) for k, v in row.items()}} for f, row in counts.sort_index().iterrows()]
    return EvalReport(
        radius=radius,
        axes=axes,
        localization=localization_metrics(match),
        tracking=tracking,
        per_frame=per_frame,
    )


def _plateau_centres(peaks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One pixel per connected group of maxima, the member nearest the group centroid"""
    labels, n = ndimage.label(peaks, structure=np.ones((3, 3), dtype=bool))
    rows, cols = np.nonzero(peaks)
    if n == 0:
        return rows, cols
    group = labels[rows, cols]
    centres = np.array(ndimage.center_of_mass(peaks, labels, np.arange(1, n + 1))).reshape(-1, 2)
    spread = (rows - centres[group - 1, 0]) ** 2 + (cols - centres[group - 1, 1]) ** 2
    order = np.lexsort((spread, group))
    first = order[np.r_[True, np.diff(group[order]) != 0]]
    return rows[first], cols[first]


def reference_localizer(
    bmode: BModeImage,
    threshold_db: float = -20.0,
    min_sep: float | None = None,
    frame: int = 0,
    first_id: int = 0,
) -> list[Localization]:
    """Regional maxima above threshold, refined by a 3x3 intensity centroid

    A flat-topped maximum counts once. min_sep defaults to one pixel.
    """
    grid = bmode.grid
    if min_sep is None:
        min_sep = max(grid.dx, grid.dz)
    db = bmode.db
    peaks = (db == ndimage.maximum_filter(db, size=3, mode="constant", cval=-np.inf)) & (db > threshold_db)
    rows, cols = _plateau_centres(peaks)
    order = np.argsort(-bmode.envelope[rows, cols], kind="stable")

    n_z, n_x = grid.shape
    accepted: list[np.ndarray] = []
    for r, c in zip(rows[order], cols[order]):
        r0, r1 = max(r - 1, 0), min(r + 2, n_z)
        c0, c1 = max(c - 1, 0), min(c + 2, n_x)
        patch = bmode.envelope[r0:r1, c0:c1]
        rr, cc = np.mgrid[r0:r1, c0:c1]
        weight = patch.sum()
        point = np.array(
            [
                grid.x_min + grid.dx * float((cc * patch).sum() / weight),
                0.0,
                grid.z_min + grid.dz * float((rr * patch).sum() / weight),
            ]
        )
        if any(np.linalg.norm(point - other) < min_sep for other in accepted):
            continue
        accepted.append(point)

    return [
        Localization(frame=frame, loc_id=first_id + k, position=tuple(point))
        for k, point in enumerate(accepted)
    ]


def reference_tracker(locs: LocalizationTable | Iterable[Localization], max_link: float) -> TrackAssignment:
    """Mutual nearest neighbours between consecutive frames within max_link"""
    if max_link <= 0:
        raise DomainError("max_link must be positive")
    table = locs if isinstance(locs, LocalizationTable) else LocalizationTable.from_records(list(locs))
    tracks: dict[tuple[int, int], int] = {}
    next_track = 0
    prev_frame, prev_ids, prev_pos = None, np.empty(0, dtype=int), np.empty((0, 3))

    for frame, group in table.data.groupby("frame", sort=True):
        frame = int(frame)
        ids = group["loc_id"].to_numpy(dtype=int)
        pos = group[["x", "y", "z"]].to_numpy(dtype=float)
        linked = np.full(len(ids), -1)
        if prev_frame == frame - 1 and len(prev_ids) and len(ids):
            dist = cdist(prev_pos, pos)
            forward = dist.argmin(axis=1)
            backward = dist.argmin(axis=0)
            for i, j in enumerate(forward):
                if backward[j] == i and dist[i, j] <= max_link:
                    linked[j] = tracks[(prev_frame, int(prev_ids[i]))]
        for j, loc_id in enumerate(ids):
            if linked[j] < 0:
                linked[j] = next_track
                next_track += 1
            tracks[(frame, int(loc_id))] = int(linked[j])
        prev_frame, prev_ids, prev_pos = frame, ids, pos

    logger.info(f"Linked {len(tracks)} localisations into {next_track} tracks")
    return TrackAssignment(tracks=tracks)
