from argparse import Namespace
from pathlib import Path
import logging

from bff.commands.dataset import get_pipeline
from bff.dependencies import load_config
from bff.services.exceptions import BffException, InputError, StageError
from bff.services.pipeline_service import GT_FILE, TRACKS_FILE, evaluate_files

logger = logging.getLogger(__name__)


def localize(args: Namespace) -> int:
    """Reference localiser over the B-mode frames into predictions.csv"""
    try:
        table = get_pipeline(args).localize()
        logger.info(f"Predictions: {len(table)} localisations")
        return 0
    except BffException as e:
        logger.warning(f"Localize failed: {e.message}")
        raise StageError("localize", e)


def track(args: Namespace) -> int:
    """Link predictions into tracks.csv"""
    try:
        table = get_pipeline(args).track()
        logger.info(f"Tracks: {table.data['track_id'].nunique()} tracks")
        return 0
    except BffException as e:
        logger.warning(f"Track failed: {e.message}")
        raise StageError("track", e)


def evaluate(args: Namespace) -> int:
    """Score predictions against ground truth; exits 0 whatever the scores"""
    try:
        out = Path(args.out)
        config = load_config(args.config, args.preset, args.seed) if (args.config or args.preset) else None
        radius = args.radius or (config.search_radius if config else None)
        if radius is None:
            raise InputError("pass --radius or a config to derive the search radius from")
        axes = args.axes or (config.evaluation.axes if config else "xyz")
        gt = Path(args.gt) if args.gt else out / GT_FILE
        pred = Path(args.pred) if args.pred else out / TRACKS_FILE
        evaluate_files(gt, pred, radius, axes, out)
        return 0
    except BffException as e:
        logger.warning(f"Evaluate failed: {e.message}")
        raise StageError("evaluate", e)


def render(args: Namespace) -> int:
    """Super-resolution density and velocity images"""
    try:
        outputs = get_pipeline(args).render(args.source)
        logger.info(f"Rendered {', '.join(str(p) for p in outputs.values())}")
        return 0
    except BffException as e:
        logger.warning(f"Render failed: {e.message}")
        raise StageError("render", e)
