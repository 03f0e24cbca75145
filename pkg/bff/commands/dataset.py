from argparse import Namespace
from pathlib import Path
import logging

from bff.dependencies import load_config
from bff.services.exceptions import BffException, StageError
from bff.services.pipeline_service import DatasetPipeline

logger = logging.getLogger(__name__)


def get_pipeline(args: Namespace) -> DatasetPipeline:
    return DatasetPipeline(load_config(args.config, args.preset, args.seed), Path(args.out))


def generate(args: Namespace) -> int:
    """Grow the vessel network into network.toml"""
    try:
        net = get_pipeline(args).generate()
        logger.info(f"Network: {net.n_nodes} nodes, {net.n_edges} edges")
        return 0
    except BffException as e:
        logger.warning(f"Generate failed: {e.message}")
        raise StageError("generate", e)


def flow(args: Namespace) -> int:
    """Solve pressures and flows into flow_edges.csv / flow_nodes.csv"""
    try:
        solution = get_pipeline(args).flow()
        logger.info(f"Flow solved on {solution.n_edges} edges")
        return 0
    except BffException as e:
        logger.warning(f"Flow failed: {e.message}")
        raise StageError("flow", e)


def seed(args: Namespace) -> int:
    """Seed and advect bubbles into ground_truth.csv"""
    try:
        events = get_pipeline(args).seed()
        logger.info(f"Ground truth: {len(events)} events")
        return 0
    except BffException as e:
        logger.warning(f"Seed failed: {e.message}")
        raise StageError("seed", e)


def simulate(args: Namespace) -> int:
    """RF data and B-mode frames, generating missing upstream files first"""
    try:
        manifest = get_pipeline(args).simulate_dataset()
        logger.info(f"Dataset {manifest.name}: {len(manifest.files)} files")
        return 0
    except BffException as e:
        logger.warning(f"Simulate failed: {e.message}")
        raise StageError("simulate", e)


def beamform(args: Namespace) -> int:
    try:
        stems = get_pipeline(args).beamform()
        logger.info(f"Wrote {len(stems)} B-mode frames")
        return 0
    except BffException as e:
        logger.warning(f"Beamform failed: {e.message}")
        raise StageError("beamform", e)


def pipeline(args: Namespace) -> int:
    """Every stage from network growth to rendered images"""
    try:
        manifest = get_pipeline(args).run()
        logger.info(f"Pipeline finished, config hash {manifest.config_hash[:12]}")
        return 0
    except BffException as e:
        logger.warning(f"Pipeline failed: {e.message}")
        raise StageError("pipeline", e)
