from pathlib import Path
import argparse
import logging
import sys

from bff import __version__
from bff.commands import analysis, dataset
from bff.config import get_settings
from bff.services.exceptions import BffException

logger = logging.getLogger(__name__)

LOG_FORMAT = '{"timestamp": "%(asctime)s", "level": "%(levelname)s", "module": "%(name)s", "message": "%(message)s"}'

COMMANDS = {
    "generate": (dataset.generate, "grow the vessel network"),
    "flow": (dataset.flow, "solve Hagen-Poiseuille flow"),
    "seed": (dataset.seed, "seed bubbles and write the ground truth"),
    "simulate": (dataset.simulate, "simulate RF data and B-mode frames"),
    "beamform": (dataset.beamform, "beamform RF data into B-mode frames"),
    "localize": (analysis.localize, "reference localiser"),
    "track": (analysis.track, "reference tracker"),
    "evaluate": (analysis.evaluate, "score predictions against ground truth"),
    "render": (analysis.render, "super-resolution and velocity images"),
    "pipeline": (dataset.pipeline, "run every stage"),
}


def setup_logging(out: Path, level: str, log_file: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.StreamHandler(sys.stdout),
            logging.FileHandler(out / log_file),
        ],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bff", description="Microvascular contrast-ultrasound dataset generator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, (handler, help_text) in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        source = cmd.add_mutually_exclusive_group(required=name != "evaluate")
        source.add_argument("--config", help="pipeline TOML file")
        source.add_argument("--preset", help="built-in preset name")
        cmd.add_argument("--seed", type=int, help="override the master seed")
        cmd.add_argument("--out", default=".", help="output directory, all paths are relative to it")
        cmd.set_defaults(handler=handler)
        if name == "evaluate":
            cmd.add_argument("--gt", help="ground-truth CSV")
            cmd.add_argument("--pred", help="prediction CSV: frame,loc_id,x,y,z[,track_id]")
            cmd.add_argument("--radius", type=float, help="search radius in m")
            cmd.add_argument("--axes", choices=["xyz", "xz", "xy"])
        if name == "render":
            cmd.add_argument("--source", choices=["gt", "tracks"], default="tracks")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    setup_logging(Path(args.out), settings.log_level, settings.log_file)
    logger.info(f"Starting {settings.app_name} v{__version__}: {args.command}")

    try:
        return args.handler(args)
    except BffException as e:
        logger.error(f"{e.message}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
