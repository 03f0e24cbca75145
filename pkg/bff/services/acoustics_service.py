from functools import lru_cache
from typing import Literal, Mapping
import logging

import numpy as np
import pandas as pd
from scipy import signal

from bff.models.acoustics import BModeImage, ImagingGrid, NoiseConfig, RFFrame, TransducerConfig
from bff.models.bubble import BubbleParams, DriveSignal
from bff.services.bubble_service import integrate_radius, scattered_pressure
from bff.services.exceptions import DomainError

logger = logging.getLogger(__name__)

REFERENCE_DISTANCE = 0.01   # element amplitude is quoted at 1 cm
TABLE_OVERSAMPLE = 16


def frame_rng(seed: int, frame: int) -> np.random.Generator:
    """Noise stream of one frame, independent of the order frames are simulated in"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(frame,))))


def impulse_response(f0: float, bandwidth: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-phase Gaussian-windowed tone at f0, unit gain at f0"""
    sigma = np.sqrt(2.0 * np.log(2.0)) / (np.pi * bandwidth * f0)
    half = int(np.ceil(4.0 * sigma / dt))
    t = np.arange(-half, half + 1) * dt
    h = np.exp(-(t**2) / (2.0 * sigma**2)) * np.cos(2.0 * np.pi * f0 * t)
    h /= np.sum(h * np.cos(2.0 * np.pi * f0 * t)) * dt
    return t, h


@lru_cache(maxsize=32)
def _pulse_table(f0: float, bandwidth: float, n_cycles: float, window: str, fs: float):
    dt = 1.0 / (fs * TABLE_OVERSAMPLE)
    duration = n_cycles / f0
    t_h, h = impulse_response(f0, bandwidth, dt)
    half = int(np.ceil((duration / 2.0 + t_h[-1]) / dt)) + 1
    t = np.arange(-half, half + 1) * dt

    inside = np.abs(t) <= duration / 2.0
    name = {"rect": "boxcar", "tukey": ("tukey", 0.5)}.get(window, window)
    taper = signal.windows.get_window(name, int(inside.sum()), fftbins=False)
    excitation = np.zeros_like(t)
    excitation[inside] = np.sin(2.0 * np.pi * f0 * (t[inside] + duration / 2.0)) * taper

    pulse = signal.fftconvolve(excitation, h, mode="same") * dt
    pulse /= np.max(np.abs(pulse))
    t.flags.writeable = False
    pulse.flags.writeable = False
    return t, pulse


def transmit_pulse(tx: TransducerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Excitation convolved with the element response, centred on t = 0, unit peak"""
    return _pulse_table(tx.f0, tx.bandwidth, tx.n_cycles, tx.window, tx.fs)


def _element_paths(points: np.ndarray, tx: TransducerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Distances and directivity weights, (n_points, n_elements); shared by transmit and receive"""
    offsets = points[:, None, :] - tx.element_positions[None, :, :]
    dist = np.linalg.norm(offsets, axis=-1)
    weight = np.ones_like(dist)
    if tx.baffle:
        weight *= points[:, 2:3] / dist
    if tx.elevation_fwhm is not None:
        weight *= np.exp(-4.0 * np.log(2.0) * points[:, 1:2] ** 2 / tx.elevation_fwhm**2)
    return dist, weight


def firing_delays(tx: TransducerConfig, angle: float) -> np.ndarray:
    """Plane-wave firing times, the first element fires at t = 0"""
    lead = tx.element_x * np.sin(angle)
    return (lead - lead.min()) / tx.c


def _arrival_window(point: np.ndarray, tx: TransducerConfig, angle: float) -> tuple[float, float]:
    dist, _ = _element_paths(point[None], tx)
    arrivals = firing_delays(tx, angle) + dist[0] / tx.c
    t_tab, _ = transmit_pulse(tx)
    return float(arrivals.min() + t_tab[0]), float(arrivals.max() + t_tab[-1])


def transmit_pressure_at(
    point,
    tx: TransducerConfig,
    angle: float = 0.0,
    t0: float | None = None,
    duration: float | None = None,
) -> DriveSignal:
    """Incident pressure at a point: every element's delayed pulse with 1/d spreading, at the RF rate"""
    point = np.asarray(point, dtype=float)
    if point[2] <= 0:
        raise DomainError(f"point {point.tolist()} is not in front of the array")
    dist, weight = _element_paths(point[None], tx)
    arrivals = firing_delays(tx, angle) + dist[0] / tx.c
    gain = tx.amplitude * REFERENCE_DISTANCE / dist[0] * weight[0]

    t_tab, p_tab = transmit_pulse(tx)
    if t0 is None:
        t0 = float(arrivals.min() + t_tab[0])
    if duration is None:
        duration = float(arrivals.max() + t_tab[-1]) - t0
    t = t0 + np.arange(int(np.ceil(duration * tx.fs)) + 1) / tx.fs

    per_element = np.interp(t[None, :] - arrivals[:, None], t_tab, p_tab, left=0.0, right=0.0)
    return DriveSignal(t0=t0, fs=tx.fs, samples=gain @ per_element)


def receive_convolve(
    scatter: np.ndarray,
    fs: float,
    t0: float,
    point,
    tx: TransducerConfig,
    n_samples: int | None = None,
    h: np.ndarray | None = None,
) -> np.ndarray:
    """Channel data of one scatterer: element response, delay d/c and 1/d, sampled on the RF grid

    h is the element impulse response sampled at fs; computed here when not given.
    """
    n_samples = n_samples or tx.n_samples
    point = np.asarray(point, dtype=float)
    dt = 1.0 / fs
    if h is None:
        _, h = impulse_response(tx.f0, tx.bandwidth, dt)
    filtered = signal.fftconvolve(scatter, h) * dt
    t_s = t0 - (len(h) // 2) * dt + np.arange(len(filtered)) * dt

    dist, weight = _element_paths(point[None], tx)
    delay = dist[0] / tx.c
    gain = weight[0] / dist[0]

    out = np.zeros((tx.n_elements, n_samples))
    k_lo = max(0, int(np.floor((t_s[0] + delay.min()) * tx.fs)))
    k_hi = min(n_samples, int(np.ceil((t_s[-1] + delay.max()) * tx.fs)) + 1)
    if k_lo >= k_hi:
        return out
    t_k = np.arange(k_lo, k_hi) / tx.fs
    out[:, k_lo:k_hi] = gain[:, None] * np.interp(t_k[None, :] - delay[:, None], t_s, filtered, left=0.0, right=0.0)
    return out


def apply_noise(data: np.ndarray, noise: NoiseConfig, tx: TransducerConfig, rng: np.random.Generator) -> np.ndarray:
    """Band-limited noise, depth gain, then white noise; draws colored before white"""
    out = np.array(data, dtype=float, copy=True)
    if noise.colored_band is not None:
        f_lo, f_hi = noise.colored_band
        if f_hi >= tx.fs / 2:
            raise DomainError(f"colored band upper edge {f_hi} Hz must stay below fs/2")
        sos = signal.butter(4, [f_lo, f_hi], btype="bandpass", fs=tx.fs, output="sos")
        colored = signal.sosfilt(sos, rng.standard_normal(out.shape), axis=-1)
        std = colored.std()
        if std > 0:
            out += colored / std * noise.reference_level * 10 ** (noise.colored_level_db / 20)
    if noise.tgc_db_per_cm > 0:
        depth_cm = tx.c * (np.arange(out.shape[-1]) / tx.fs) / 2.0 * 100.0
        out *= 10 ** (noise.tgc_db_per_cm * depth_cm / 20)
    if noise.snr_db is not None:
        out += rng.standard_normal(out.shape) * noise.reference_level * 10 ** (-noise.snr_db / 20)
    return out


def simulate_frame(
    events: pd.DataFrame,
    params: BubbleParams | Mapping[int, BubbleParams],
    tx: TransducerConfig,
    noise: NoiseConfig,
    seed: int = 0,
    frame: int = 0,
    oversample: int = 10,
    ring_down: float = 1e-6,
    n_samples: int | None = None,
) -> RFFrame:
    """Transmit, bubble dynamics and receive for every bubble of one frame, then noise"""
    n_samples = n_samples or tx.n_samples
    rows = events.sort_values("bubble_id", kind="mergesort")
    ids = rows["bubble_id"].to_numpy(dtype=int)
    points = rows[["x", "y", "z"]].to_numpy(dtype=float)
    data = np.zeros((len(tx.angles), tx.n_elements, n_samples))

    if len(ids):
        if isinstance(params, BubbleParams):
            shells = [params] * len(ids)
        else:
            missing = [int(b) for b in ids if int(b) not in params]
            if missing:
                raise DomainError(f"no bubble parameters for bubbles {missing[:5]}")
            shells = [params[int(b)] for b in ids]
        rho = np.array([s.rho_l for s in shells])
        h = None

        for a, angle in enumerate(tx.angles):
            windows = np.array([_arrival_window(p, tx, angle) for p in points])
            duration = float(np.max(windows[:, 1] - windows[:, 0])) + ring_down
            drives = [transmit_pressure_at(p, tx, angle, t0=w[0], duration=duration) for p, w in zip(points, windows)]
            drive = DriveSignal(t0=windows[:, 0], fs=tx.fs, samples=np.stack([d.samples for d in drives]))
            trace = integrate_radius(drive, shells, oversample=oversample, bubble_ids=ids)
            scatter = scattered_pressure(trace, 1.0, rho)
            if h is None:
                _, h = impulse_response(tx.f0, tx.bandwidth, 1.0 / trace.fs)
            for b in range(len(ids)):
                data[a] += receive_convolve(scatter[b], trace.fs, windows[b, 0], points[b], tx, n_samples, h)

    data = apply_noise(data, noise, tx, frame_rng(seed, frame))
    logger.debug(f"Frame {frame}: {len(ids)} bubbles, {len(tx.angles)} angles")
    return RFFrame(data=data, fs=tx.fs)


def _apodization(n: int, kind: Literal["hann", "rect"]) -> np.ndarray:
    if kind == "rect":
        return np.ones(n)
    # drop the zero end points so every element contributes
    return signal.windows.hann(n + 2)[1:-1]


def beamform_das(
    rf: RFFrame,
    tx: TransducerConfig,
    grid: ImagingGrid,
    apodization: Literal["hann", "rect"] = "hann",
) -> np.ndarray:
    """Delay-and-sum of the analytic signal with dynamic receive focus, compounded over angles"""
    if rf.n_angles != len(tx.angles) or rf.n_elements != tx.n_elements:
        raise DomainError(
            f"RF shape {rf.data.shape} does not match {len(tx.angles)} angles x {tx.n_elements} elements"
        )
    analytic = signal.hilbert(rf.data, axis=-1)
    X, Z = np.meshgrid(grid.x, grid.z)
    weights = _apodization(tx.n_elements, apodization)
    samples = np.arange(rf.n_samples)
    image = np.zeros(grid.shape, dtype=complex)

    for a, angle in enumerate(tx.angles):
        lead = tx.element_x * np.sin(angle)
        t_tx = (X * np.sin(angle) + Z * np.cos(angle) - lead.min()) / tx.c
        for i, x_e in enumerate(tx.element_x):
            index = (t_tx + np.sqrt((X - x_e) ** 2 + Z**2) / tx.c) * rf.fs
            channel = analytic[a, i]
            image += weights[i] * (
                np.interp(index, samples, channel.real, left=0.0, right=0.0)
                + 1j * np.interp(index, samples, channel.imag, left=0.0, right=0.0)
            )
    return image / rf.n_angles


def envelope_log(image: np.ndarray, grid: ImagingGrid, dynamic_range: float = 60.0) -> BModeImage:
    """Peak-normalised log envelope clipped to the dynamic range"""
    envelope = np.abs(image)
    peak = envelope.max() if envelope.size else 0.0
    if peak == 0:
        db = np.full(envelope.shape, -dynamic_range)
    else:
        with np.errstate(divide="ignore"):
            db = np.clip(20.0 * np.log10(envelope / peak), -dynamic_range, 0.0)
    return BModeImage(grid=grid, envelope=envelope, db=db, dynamic_range=dynamic_range)


def mi_to_pressure(mi: float, f0: float) -> float:
    """Peak negative pressure in Pa for a mechanical index at f0"""
    if mi <= 0 or f0 <= 0:
        raise DomainError("mechanical index and frequency must be positive")
    return mi * np.sqrt(f0 / 1e6) * 1e6


def calibrate_amplitude(tx: TransducerConfig, mi: float, depth: float) -> TransducerConfig:
    """Element amplitude giving the requested MI on axis at `depth` for the unsteered wave"""
    unit = tx.model_copy(update={"amplitude": 1.0})
    drive = transmit_pressure_at((0.0, 0.0, depth), unit, 0.0)
    negative = -float(drive.samples.min())
    if negative <= 0:
        raise DomainError(f"no rarefaction reaches depth {depth} m")
    amplitude = mi_to_pressure(mi, tx.f0) / negative
    logger.info(f"Calibrated element amplitude {amplitude:.4g} Pa for MI {mi} at {depth * 1e3:.1f} mm")
    return tx.model_copy(update={"amplitude": amplitude, "mi": mi})
