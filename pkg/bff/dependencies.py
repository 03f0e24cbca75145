from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
import hashlib
import logging

import numpy as np
import toml
from pydantic import ValidationError

from bff.config import get_settings
from bff.models.pipeline import PipelineConfig
from bff.presets import get_preset
from bff.services.exceptions import InputError

logger = logging.getLogger(__name__)


def load_config(path: str | Path | None = None, preset: str | None = None, seed: int | None = None) -> PipelineConfig:
    """Pipeline config from a TOML file or a named preset, with an optional master seed override"""
    if path is None and preset is None:
        raise InputError("pass --config FILE or --preset NAME")
    if path is not None:
        try:
            config = PipelineConfig(**toml.load(path))
        except FileNotFoundError:
            raise InputError(f"config file {path} does not exist")
        except toml.TomlDecodeError as e:
            raise InputError(f"config file {path} is not valid TOML: {e}")
        except ValidationError as e:
            raise InputError(f"invalid config {path}: {e}")
        logger.info(f"Loaded config {config.name!r} from {path}")
        params_file = config.bubbles.params_file
        if params_file is not None and not params_file.is_absolute():
            # relative to the config file
            bubbles = config.bubbles.model_copy(update={"params_file": Path(path).parent / params_file})
            config = config.model_copy(update={"bubbles": bubbles})
    else:
        config = get_preset(preset)
        logger.info(f"Using preset {preset!r}")
    if seed is not None:
        try:
            config = PipelineConfig(**(config.model_dump() | {"seed": seed}))
        except ValidationError as e:
            raise InputError(f"invalid seed {seed}: {e}")
    return config


def derive_seed(master: int, stage: str) -> int:
    """Stage seed from sha256(master:stage), stable across runs and platforms"""
    digest = hashlib.sha256(f"{master}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def stage_rng(master: int, stage: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(master, stage)))


def get_executor(threads: int | None = None) -> ThreadPoolExecutor:
    """Frame-level worker pool sized by BFF_THREADS"""
    workers = threads or get_settings().threads
    return ThreadPoolExecutor(max_workers=max(1, workers))
