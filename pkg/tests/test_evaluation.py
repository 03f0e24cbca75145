import numpy as np
import pandas as pd
import pytest
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from bff.models.evaluation import LocalizationTable, MatchResult, PairSets, TrackAssignment
from bff.models.tracks import EventTable
from bff.services.acoustics_service import envelope_log
from bff.services.evaluation_service import (
    evaluate,
    localization_metrics,
    match_localizations,
    reference_localizer,
    reference_tracker,
    tracking_metrics,
    tracking_pairs,
)
from bff.services.exceptions import DomainError, InputError

UM = 1e-6
RADIUS = 10 * UM


def gt_table(rows) -> EventTable:
    """rows of (frame, bubble_id, x, y, z)"""
    data = pd.DataFrame(rows, columns=["frame", "bubble_id", "x", "y", "z"])
    return EventTable(data=data.sort_values(["frame", "bubble_id"], kind="mergesort"))


def pred_table(rows) -> LocalizationTable:
    """rows of (frame, loc_id, x, y, z[, track_id])"""
    columns = ["frame", "loc_id", "x", "y", "z"]
    if rows and len(rows[0]) == 6:
        columns.append("track_id")
    return LocalizationTable(data=pd.DataFrame(rows, columns=columns))


def pairs(tp=(), fp=(), fn=()) -> PairSets:
    """Pair sets from lists of travelled distances"""
    def frame(distances):
        if not distances:
            return PairSets.empty_frame()
        rows = [(k, k, k, d) for k, d in enumerate(distances)]
        return pd.DataFrame(rows, columns=["frame", "bubble_a", "bubble_b", "distance"])

    return PairSets(tp=frame(list(tp)), fp=frame(list(fp)), fn=frame(list(fn)))


def manual_match(n_tp: int, n_fp: int, n_fn: int, distances=None) -> MatchResult:
    distances = distances if distances is not None else [0.0] * n_tp
    return MatchResult(
        radius=RADIUS,
        tp=pd.DataFrame({"frame": 0, "bubble_id": range(n_tp), "loc_id": range(n_tp), "distance": distances}),
        fp=pd.DataFrame({"frame": 0, "loc_id": range(n_tp, n_tp + n_fp)}),
        fn=pd.DataFrame({"frame": 0, "bubble_id": range(n_tp, n_tp + n_fn)}),
    )


def moving_pair(n_frames: int = 4, step: float = 5 * UM):
    """Two bubbles moving along x, far apart in z"""
    return [
        (f, b, f * step, 0.0, 1e-2 + b * 1e-3)
        for f in range(n_frames)
        for b in (0, 1)
    ]


def test_identical_predictions_all_match():
    """Predictions equal to ground truth are all true positives"""
    rows = moving_pair()
    match = match_localizations(gt_table(rows), pred_table(rows), RADIUS)
    assert match.n_tp == len(rows)
    assert match.n_fp == match.n_fn == 0


def test_nearest_prediction_wins():
    """One ground truth, two candidates: the nearer is TP, the other FP"""
    gt = gt_table([(0, 0, 0.0, 0.0, 0.01)])
    pred = pred_table([(0, 0, 6 * UM, 0.0, 0.01), (0, 1, 2 * UM, 0.0, 0.01)])
    match = match_localizations(gt, pred, RADIUS)
    assert match.tp["loc_id"].tolist() == [1]
    assert match.tp["distance"].iloc[0] == pytest.approx(2 * UM)
    assert match.fp["loc_id"].tolist() == [0]


def test_radius_boundary():
    """A prediction just outside the radius is one FN and one FP"""
    gt = gt_table([(0, 0, 0.0, 0.0, 0.01)])
    pred = pred_table([(0, 0, 1.01 * RADIUS, 0.0, 0.01)])
    match = match_localizations(gt, pred, RADIUS)
    assert (match.n_tp, match.n_fn, match.n_fp) == (0, 1, 1)


def test_matching_is_per_frame():
    """A prediction never matches ground truth of another frame"""
    gt = gt_table([(0, 0, 0.0, 0.0, 0.01)])
    pred = pred_table([(1, 0, 0.0, 0.0, 0.01)])
    match = match_localizations(gt, pred, RADIUS)
    assert (match.n_tp, match.n_fn, match.n_fp) == (0, 1, 1)


def test_matching_axes():
    """xz matching ignores elevation offsets"""
    gt = gt_table([(0, 0, 0.0, 0.0, 0.01)])
    pred = pred_table([(0, 0, 0.0, 1e-3, 0.01)])
    assert match_localizations(gt, pred, RADIUS, "xyz").n_tp == 0
    assert match_localizations(gt, pred, RADIUS, "xz").n_tp == 1


def test_duplicate_loc_ids_rejected():
    """A loc_id may appear once per frame"""
    gt = gt_table([(0, 0, 0.0, 0.0, 0.01)])
    pred = pred_table([(0, 3, 0.0, 0.0, 0.01), (0, 3, 1e-3, 0.0, 0.01)])
    with pytest.raises(InputError):
        match_localizations(gt, pred, RADIUS)


def test_radius_must_be_positive():
    """Zero radius is a domain error"""
    rows = moving_pair()
    with pytest.raises(DomainError):
        match_localizations(gt_table(rows), pred_table(rows), 0.0)


def test_localization_metrics_example():
    """74 TP, 26 FP, 38 FN"""
    scores = localization_metrics(manual_match(74, 26, 38))
    assert scores.precision == pytest.approx(0.74)
    assert scores.recall == pytest.approx(74 / 112)
    assert scores.recall == pytest.approx(0.661, abs=1e-3)


def test_mean_localization_error():
    """TP distances of 3 and 4 um average to 3.5 um"""
    scores = localization_metrics(manual_match(2, 0, 0, [3 * UM, 4 * UM]))
    assert scores.mean_loc_error == pytest.approx(3.5 * UM)
    assert scores.rmse_strict == pytest.approx(np.sqrt(12.5) * UM)


def test_no_true_positives_flags_undefined():
    """Empty denominators are reported as zero and flagged"""
    scores = localization_metrics(manual_match(0, 0, 3))
    assert scores.precision == 0.0
    assert scores.recall == 0.0
    assert "precision" in scores.undefined
    assert "mean_loc_error" in scores.undefined


def test_perfect_predictions_report():
    """Perfect localisation and tracking give (1, 1, 0, 1, 1, +1)"""
    rows = moving_pair()
    pred = pred_table([(f, b, x, y, z, b) for f, b, x, y, z in rows])
    report = evaluate(gt_table(rows), pred, RADIUS)
    assert report.headline() == {
        "precision": 1.0,
        "recall": 1.0,
        "mean_loc_error": 0.0,
        "tracking_precision": 1.0,
        "tracking_recall": 1.0,
        "j_map": 1.0,
    }
    assert report.tracking.n_tp == 6
    assert report.per_frame[0] == {"frame": 0, "tp": 2, "fp": 0, "fn": 0}


def test_shifted_predictions_score_zero():
    """Predictions two radii away match nothing"""
    rows = moving_pair()
    pred = pred_table([(f, b, x + 2 * RADIUS, y, z) for f, b, x, y, z in rows])
    report = evaluate(gt_table(rows), pred, RADIUS)
    assert report.localization.precision == 0.0
    assert report.localization.recall == 0.0
    assert report.tracking is None


def test_swapped_track_ids():
    """Swapping ids across one frame boundary gives 2 FP and 2 FN there"""
    rows = moving_pair(n_frames=2)
    pred = pred_table([
        (0, 0, *rows[0][2:], 0), (0, 1, *rows[1][2:], 1),
        (1, 0, *rows[2][2:], 1), (1, 1, *rows[3][2:], 0),
    ])
    gt = gt_table(rows)
    sets = tracking_pairs(gt, match_localizations(gt, pred, RADIUS), pred)
    assert (len(sets.tp), len(sets.fp), len(sets.fn)) == (0, 2, 2)


def test_unlocalized_frame_drops_pair():
    """A bubble missed in frame t+1 contributes no ground-truth pair"""
    rows = moving_pair(n_frames=2)
    gt = gt_table(rows)
    pred = pred_table([(0, 0, *rows[0][2:], 0), (1, 1, *rows[3][2:], 1)])
    sets = tracking_pairs(gt, match_localizations(gt, pred, RADIUS), pred)
    assert len(sets.tp) == len(sets.fp) == len(sets.fn) == 0


def test_pair_distance_is_ground_truth_travel():
    """Pairs carry the distance the ground-truth bubble travelled"""
    rows = moving_pair(n_frames=3, step=7 * UM)
    gt = gt_table(rows)
    pred = pred_table([(f, b, x + UM, y, z, b) for f, b, x, y, z in rows])
    sets = tracking_pairs(gt, match_localizations(gt, pred, RADIUS), pred)
    np.testing.assert_allclose(sets.tp["distance"], 7 * UM)


def test_track_assignment_overrides_column():
    """A separate assignment can supply the track ids"""
    rows = moving_pair(n_frames=3)
    gt = gt_table(rows)
    pred = pred_table(rows)
    assign = TrackAssignment(tracks={(f, b): b for f, b, *_ in rows})
    report = evaluate(gt, pred, RADIUS, assign=assign)
    assert report.tracking.j_map == 1.0


def test_tracking_needs_track_ids():
    """Without track ids there is nothing to pair"""
    rows = moving_pair()
    gt = gt_table(rows)
    pred = pred_table(rows)
    with pytest.raises(InputError):
        tracking_pairs(gt, match_localizations(gt, pred, RADIUS), pred)


def test_track_with_two_locs_in_one_frame_rejected():
    """A track visits each frame at most once"""
    rows = moving_pair(n_frames=2)
    gt = gt_table(rows)
    pred = pred_table([(f, b, x, y, z, 0) for f, b, x, y, z in rows])
    with pytest.raises(InputError):
        tracking_pairs(gt, match_localizations(gt, pred, RADIUS), pred)


def test_jaccard_midpoint():
    """TP_d=2, FN_d=2, FP_d=0 gives J=0.5 and J_map=0"""
    scores = tracking_metrics(pairs(tp=[2.0], fn=[2.0]))
    assert scores.jaccard == 0.5
    assert scores.j_map == 0.0


def test_jaccard_bounds():
    """All pairs correct maps to +1, none correct to -1"""
    assert tracking_metrics(pairs(tp=[1.0, 2.0])).j_map == 1.0
    assert tracking_metrics(pairs(fp=[1.0], fn=[3.0])).j_map == -1.0


def test_empty_pair_sets_are_undefined():
    """No pairs at all is flagged rather than scored"""
    scores = tracking_metrics(pairs())
    assert scores.n_tp == scores.n_fp == scores.n_fn == 0
    assert "jaccard" in scores.undefined
    assert scores.j_map == -1.0


def test_remapped_jaccard_identity():
    """J_map = 2J - 1 on random pair sets"""
    rng = np.random.default_rng(0)
    for _ in range(1000):
        sizes = rng.integers(0, 5, size=3)
        if sizes.sum() == 0:
            continue
        scores = tracking_metrics(pairs(*(rng.uniform(0, 1e-4, n).tolist() for n in sizes)))
        assert abs(scores.j_map - (2 * scores.jaccard - 1)) <= 1e-15
        assert -1 <= scores.j_map <= 1


def test_greedy_count_never_exceeds_optimal():
    """Greedy matching never finds more pairs than the optimal assignment"""
    rng = np.random.default_rng(1)
    for _ in range(200):
        n_gt, n_pred = rng.integers(1, 13, size=2)
        g = rng.uniform(0, 50 * UM, (n_gt, 3))
        p = rng.uniform(0, 50 * UM, (n_pred, 3))
        gt = gt_table([(0, i, *xyz) for i, xyz in enumerate(g)])
        pred = pred_table([(0, j, *xyz) for j, xyz in enumerate(p)])
        admissible = cdist(g, p) <= RADIUS
        rows, cols = linear_sum_assignment((~admissible).astype(float))
        optimal = int(admissible[rows, cols].sum())
        assert match_localizations(gt, pred, RADIUS).n_tp <= optimal


def test_greedy_count_matches_optimal_on_separated_bubbles():
    """With separated bubbles greedy and optimal agree"""
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(1, 13))
        g = np.column_stack([np.arange(n) * 4 * RADIUS, np.zeros(n), np.full(n, 0.01)])
        keep = rng.random(n) < 0.8
        keep[0] = True
        p = g[keep] + rng.uniform(-RADIUS / 4, RADIUS / 4, (keep.sum(), 3))
        extra = rng.uniform(0, 4 * RADIUS * n, (int(rng.integers(0, 4)), 1))
        p = np.vstack([p, np.column_stack([extra, np.full_like(extra, 1e-3), np.full_like(extra, 0.01)])])
        gt = gt_table([(0, i, *xyz) for i, xyz in enumerate(g)])
        pred = pred_table([(0, j, *xyz) for j, xyz in enumerate(p)])
        admissible = cdist(g, p) <= RADIUS
        rows, cols = linear_sum_assignment((~admissible).astype(float))
        assert match_localizations(gt, pred, RADIUS).n_tp == int(admissible[rows, cols].sum())


def test_matching_is_scale_invariant():
    """Scaling coordinates and radius together keeps the same sets"""
    rng = np.random.default_rng(3)
    g = rng.uniform(0, 40 * UM, (8, 3))
    p = g[:6] + rng.uniform(-8 * UM, 8 * UM, (6, 3))
    small_gt = gt_table([(0, i, *xyz) for i, xyz in enumerate(g)])
    small_pred = pred_table([(0, j, *xyz) for j, xyz in enumerate(p)])
    big_gt = gt_table([(0, i, *(xyz * 1000)) for i, xyz in enumerate(g)])
    big_pred = pred_table([(0, j, *(xyz * 1000)) for j, xyz in enumerate(p)])
    small = match_localizations(small_gt, small_pred, RADIUS)
    big = match_localizations(big_gt, big_pred, RADIUS * 1000)
    pd.testing.assert_frame_equal(small.tp[["frame", "bubble_id", "loc_id"]], big.tp[["frame", "bubble_id", "loc_id"]])
    pd.testing.assert_frame_equal(small.fn, big.fn)
    pd.testing.assert_frame_equal(small.fp, big.fp)


def test_metrics_are_monotone():
    """An extra FP never raises precision and an extra FN never raises recall"""
    rng = np.random.default_rng(4)
    for _ in range(100):
        tp, fp, fn = (int(v) for v in rng.integers(1, 20, size=3))
        base = localization_metrics(manual_match(tp, fp, fn))
        assert localization_metrics(manual_match(tp, fp + 1, fn)).precision <= base.precision
        assert localization_metrics(manual_match(tp, fp, fn + 1)).recall <= base.recall


def gaussian_bmode(grid, centres, width=100 * UM):
    x, z = np.meshgrid(grid.x, grid.z)
    image = sum(np.exp(-((x - cx) ** 2 + (z - cz) ** 2) / (2 * width**2)) for cx, cz in centres)
    return envelope_log(image, grid)


def test_localizer_single_psf(grid):
    """An isolated spot yields exactly one localisation on it"""
    bmode = gaussian_bmode(grid, [(0.33e-3, 10.27e-3)])
    locs = reference_localizer(bmode, threshold_db=-20.0)
    assert len(locs) == 1
    x, y, z = locs[0].position
    assert np.hypot(x - 0.33e-3, z - 10.27e-3) < 154 * UM
    assert y == 0.0


def test_localizer_empty_image(grid):
    """An all-zero image has nothing above threshold"""
    assert reference_localizer(envelope_log(np.zeros(grid.shape), grid)) == []


def test_localizer_two_separated_psfs(grid):
    """Two spots ten wavelengths apart give two localisations"""
    lam = 1540 / 5e6
    bmode = gaussian_bmode(grid, [(-5 * lam, 0.01), (5 * lam, 0.01)])
    locs = reference_localizer(bmode, threshold_db=-20.0, frame=3, first_id=10)
    assert len(locs) == 2
    assert sorted(loc.loc_id for loc in locs) == [10, 11]
    assert all(loc.frame == 3 for loc in locs)


def test_localizer_flat_topped_spot(grid):
    """A 2x2 plateau of equal maxima is one localisation at its centre"""
    image = np.zeros(grid.shape)
    image[40:42, 40:42] = 1.0
    bmode = envelope_log(image, grid)
    for min_sep in (None, 0.0):
        locs = reference_localizer(bmode, threshold_db=-20.0, min_sep=min_sep)
        assert len(locs) == 1
        x, _, z = locs[0].position
        assert x == pytest.approx(grid.x_min + 40.5 * grid.dx)
        assert z == pytest.approx(grid.z_min + 40.5 * grid.dz)


def test_tracker_single_bubble():
    """Small steps link into one track"""
    locs = pred_table([(f, 0, f * 5 * UM, 0.0, 0.01) for f in range(5)])
    assign = reference_tracker(locs, max_link=20 * UM)
    assert set(assign.tracks.values()) == {0}
    assert len(assign.tracks) == 5


def test_tracker_gate_splits_tracks():
    """A jump beyond max_link starts a new track"""
    locs = pred_table([(0, 0, 0.0, 0.0, 0.01), (1, 0, 5 * UM, 0.0, 0.01), (2, 0, 100 * UM, 0.0, 0.01)])
    assign = reference_tracker(locs, max_link=20 * UM)
    assert assign.tracks[(0, 0)] == assign.tracks[(1, 0)]
    assert assign.tracks[(2, 0)] != assign.tracks[(1, 0)]


def test_tracker_parallel_bubbles():
    """Two far-apart bubbles stay in two disjoint tracks"""
    locs = pred_table([(f, b, f * 5 * UM, 0.0, 0.01 + b * 1e-3) for f in range(4) for b in (0, 1)])
    assign = reference_tracker(locs, max_link=20 * UM)
    frame = assign.to_frame()
    assert frame.groupby("track_id")["loc_id"].nunique().tolist() == [1, 1]
    assert frame["track_id"].nunique() == 2


def test_tracker_skipped_frame_splits():
    """Links only join consecutive frames"""
    locs = pred_table([(0, 0, 0.0, 0.0, 0.01), (2, 0, 0.0, 0.0, 0.01)])
    assign = reference_tracker(locs, max_link=20 * UM)
    assert assign.tracks[(0, 0)] != assign.tracks[(2, 0)]
