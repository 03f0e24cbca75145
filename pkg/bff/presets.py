import numpy as np

from bff.models.acoustics import ImagingGrid, NoiseConfig, TransducerConfig
from bff.models.network import (
    BernoulliParam,
    BoxShape,
    ConeRotationParam,
    ConstantParam,
    GenParams,
    RadiusScaledParam,
)
from bff.models.pipeline import BubbleConfig, PipelineConfig
from bff.models.flow import BoundaryConfig
from bff.services.exceptions import InputError

PLANE_WAVE_ANGLES = (-np.deg2rad(5.0), 0.0, np.deg2rad(5.0))

ORGAN = BoxShape(low=(-5e-3, -0.5e-3, 5e-3), high=(5e-3, 0.5e-3, 15e-3))


def hf_transducer() -> TransducerConfig:
    """15 MHz, three-angle compounding"""
    return TransducerConfig(
        n_elements=128, pitch=0.1e-3, f0=15e6, fs=62.5e6, angles=PLANE_WAVE_ANGLES, elevation_fwhm=0.4e-3, max_depth=0.016
    )


def lf_transducer() -> TransducerConfig:
    """5 MHz, three-angle compounding"""
    return TransducerConfig(
        n_elements=128, pitch=0.3e-3, f0=5e6, fs=40e6, angles=PLANE_WAVE_ANGLES, elevation_fwhm=1e-3, max_depth=0.016
    )


def _straight_vessel(depth: float, x_start: float = -4.5e-3) -> GenParams:
    return GenParams(
        edge_step_f=ConstantParam(value=200e-6),
        inside_f=ORGAN,
        initial_position=(x_start, 0.0, depth),
        initial_direction=(1.0, 0.0, 0.0),
        initial_radius=40e-6,
        max_level=0,
    )


def _branching_tree(depth: float, direction: tuple[float, float, float]) -> GenParams:
    return GenParams(
        edge_step_f=ConstantParam(value=200e-6),
        inside_f=ORGAN,
        rot_f=ConeRotationParam(max_angle=np.deg2rad(8.0)),
        r_decay_f=RadiusScaledParam(low=0.99, high=1.0),
        bif_occurs_f=BernoulliParam(p=0.08, level_decay=0.7),
        bif_r_decay_f=RadiusScaledParam(low=0.7, high=0.85),
        bif_rot_f=ConeRotationParam(min_angle=np.deg2rad(25.0), max_angle=np.deg2rad(50.0)),
        initial_position=(-4.5e-3 * direction[0], 0.0, depth),
        initial_direction=direction,
        initial_radius=60e-6,
        max_level=3,
    )


def training() -> PipelineConfig:
    """Single unbranched vessel with a low bubble concentration"""
    return PipelineConfig(
        name="training",
        network=_straight_vessel(10e-3),
        boundary=BoundaryConfig(inlet_pa=250.0),
        bubbles=BubbleConfig(count=20, n_frames=100, frame_rate=100.0),
        transducer=lf_transducer(),
        noise=NoiseConfig(snr_db=40.0, colored_band=(3e6, 7e6), colored_level_db=-30.0, tgc_db_per_cm=1.0),
        grid=ImagingGrid(),
    )


def challenge() -> PipelineConfig:
    """Three merged trees with a high bubble concentration"""
    return PipelineConfig(
        name="challenge",
        networks=[
            _branching_tree(8e-3, (1.0, 0.0, 0.0)),
            _branching_tree(10.5e-3, (-1.0, 0.0, 0.0)),
            _branching_tree(13e-3, (1.0, 0.0, 0.0)),
        ],
        boundary=BoundaryConfig(inlet_pa=400.0, outlet_jitter_pa=20.0),
        bubbles=BubbleConfig(count=1000, n_frames=200, frame_rate=500.0, r0_range=(0.8e-6, 1.6e-6)),
        transducer=lf_transducer(),
        noise=NoiseConfig(snr_db=35.0, colored_band=(3e6, 7e6), colored_level_db=-25.0, tgc_db_per_cm=1.0),
    )


def desk() -> PipelineConfig:
    """Desktop-scale run: 64 elements, 200 frames, 500 bubbles"""
    return PipelineConfig(
        name="desk",
        network=_branching_tree(10e-3, (1.0, 0.0, 0.0)),
        boundary=BoundaryConfig(inlet_pa=400.0),
        bubbles=BubbleConfig(count=500, n_frames=200, frame_rate=500.0),
        transducer=TransducerConfig(n_elements=64, pitch=0.3e-3, f0=5e6, fs=25e6, max_depth=0.016),
        noise=NoiseConfig(snr_db=40.0),
    )


def hf() -> PipelineConfig:
    return challenge().model_copy(update={"name": "hf", "transducer": hf_transducer(), "noise": NoiseConfig(snr_db=35.0)})


def lf() -> PipelineConfig:
    return challenge().model_copy(update={"name": "lf"})


PRESETS = {"training": training, "challenge": challenge, "desk": desk, "hf": hf, "lf": lf}


def get_preset(name: str) -> PipelineConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise InputError(f"unknown preset {name!r}, choose from {sorted(PRESETS)}")
