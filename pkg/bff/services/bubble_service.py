from typing import Literal, Sequence
import logging

import numpy as np

from bff.models.bubble import BubbleBatch, BubbleParams, BubbleTrace, DriveSignal
from bff.services.exceptions import DomainError, IntegrationError

logger = logging.getLogger(__name__)

COLLAPSE_FRACTION = 0.05
COLLAPSE_REFINE = 10

Shell = BubbleParams | BubbleBatch


def sonovue_preset() -> BubbleParams:
    """Fitted SonoVue shell (R0 = R_buckle = 0.975 um)"""
    return BubbleParams(
        rho_l=1e3,
        sigma_water=0.073,
        mu_l=2.0e-3,
        kappa=1.095,
        kappa_s=7.2e-9,
        chi=1.0,
        r0=0.975e-6,
        r_buckle=0.975e-6,
    )


def surface_tension(R, ruptured, params: Shell):
    """Piecewise shell tension: buckled, elastic, then free interface after rupture"""
    R = np.asarray(R, dtype=float)
    ruptured = np.asarray(ruptured, dtype=bool)
    elastic = params.chi * (R**2 / params.r_buckle**2 - 1.0)
    intact = np.where(
        R <= params.r_buckle, 0.0, np.where(R <= params.r_break, elastic, params.sigma_water)
    )
    broken = np.where(R >= params.r_ruptured, params.sigma_water, 0.0)
    sigma = np.where(ruptured, broken, intact)
    return float(sigma) if sigma.ndim == 0 else sigma


def marmottant_rhs(R, Rdot, p_ac, ruptured, params: Shell):
    """Radial acceleration solved from the modified Rayleigh-Plesset equation"""
    sigma0 = surface_tension(params.r0, False, params)
    sigma = surface_tension(R, ruptured, params)
    gas = (params.p0_ambient + 2.0 * sigma0 / params.r0) * (R / params.r0) ** (-3.0 * params.kappa) * (
        1.0 - 3.0 * params.kappa * Rdot / params.c
    )
    pressure = (
        gas
        - params.p0_ambient
        - 2.0 * sigma / R
        - 4.0 * params.mu_l * Rdot / R
        - 4.0 * params.kappa_s * Rdot / R**2
        - p_ac
    )
    return pressure / (params.rho_l * R) - 1.5 * Rdot**2 / R


def _as_batch(params: BubbleParams | Sequence[BubbleParams] | BubbleBatch, n: int) -> BubbleBatch:
    if isinstance(params, BubbleBatch):
        batch = params
    elif isinstance(params, BubbleParams):
        batch = BubbleBatch.stack([params] * n)
    else:
        batch = BubbleBatch.stack(list(params))
    if len(batch) != n:
        raise DomainError(f"got {len(batch)} bubble parameter sets for {n} drive signals")
    return batch


def _upsample(samples: np.ndarray, oversample: int) -> np.ndarray:
    """Linear interpolation by an integer factor, keeping the original samples"""
    if oversample == 1:
        return samples
    frac = np.arange(oversample) / oversample
    body = samples[:, :-1, None] * (1.0 - frac) + samples[:, 1:, None] * frac
    return np.concatenate([body.reshape(samples.shape[0], -1), samples[:, -1:]], axis=1)


def _rk4(p_fine: np.ndarray, dt: float, shell: BubbleBatch, t0: np.ndarray, ids: np.ndarray):
    n, steps = p_fine.shape
    p_mid = 0.5 * (p_fine[:, :-1] + p_fine[:, 1:])
    R = np.empty((n, steps))
    V = np.empty((n, steps))
    A = np.empty((n, steps))
    ruptured = np.zeros((n, steps), dtype=bool)
    collapsed = np.zeros(n, dtype=bool)

    r, v = shell.r0.copy(), np.zeros(n)
    broken = r > shell.r_break
    R[:, 0], V[:, 0] = r, v
    A[:, 0] = marmottant_rhs(r, v, p_fine[:, 0], broken, shell)
    ruptured[:, 0] = broken
    floor = COLLAPSE_FRACTION * shell.r0

    for k in range(steps - 1):
        k1v = marmottant_rhs(r, v, p_fine[:, k], broken, shell)
        k1r = v
        k2v = marmottant_rhs(r + 0.5 * dt * k1r, v + 0.5 * dt * k1v, p_mid[:, k], broken, shell)
        k2r = v + 0.5 * dt * k1v
        k3v = marmottant_rhs(r + 0.5 * dt * k2r, v + 0.5 * dt * k2v, p_mid[:, k], broken, shell)
        k3r = v + 0.5 * dt * k2v
        k4v = marmottant_rhs(r + dt * k3r, v + dt * k3v, p_fine[:, k + 1], broken, shell)
        k4r = v + dt * k3v

        new_r = r + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
        new_v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)

        collapsed |= ~(new_r > floor)
        new_r = np.where(collapsed, shell.r0, new_r)
        new_v = np.where(collapsed, 0.0, new_v)
        if not (np.all(np.isfinite(new_r)) and np.all(np.isfinite(new_v))):
            bad = int(np.flatnonzero(~np.isfinite(new_r) | ~np.isfinite(new_v))[0])
            raise IntegrationError(
                f"bubble {int(ids[bad])} state became non-finite at t={t0[bad] + (k + 1) * dt:.6e} s",
                float(t0[bad] + (k + 1) * dt),
                int(ids[bad]),
            )

        r, v = new_r, new_v
        broken = broken | (r > shell.r_break)
        R[:, k + 1], V[:, k + 1], ruptured[:, k + 1] = r, v, broken
        A[:, k + 1] = marmottant_rhs(r, v, p_fine[:, k + 1], broken, shell)

    A[collapsed] = 0.0
    return R, V, A, ruptured, collapsed


def integrate_radius(
    drive: DriveSignal,
    params: BubbleParams | Sequence[BubbleParams] | BubbleBatch,
    method: Literal["rk4"] = "rk4",
    oversample: int = 20,
    bubble_ids: Sequence[int] | None = None,
    _refined: bool = False,
) -> BubbleTrace:
    """Fixed-step RK4 radius dynamics on the drive grid refined by `oversample`"""
    if method != "rk4":
        raise DomainError(f"unknown integration method {method!r}")
    if oversample < 1:
        raise DomainError("oversample must be >= 1")

    single = drive.samples.ndim == 1
    samples = np.atleast_2d(np.asarray(drive.samples, dtype=float))
    n = samples.shape[0]
    t0 = np.broadcast_to(np.asarray(drive.t0, dtype=float), (n,))
    shell = _as_batch(params, n)
    ids = np.asarray(bubble_ids if bubble_ids is not None else np.arange(n))

    fs = drive.fs * oversample
    R, V, A, ruptured, collapsed = _rk4(_upsample(samples, oversample), 1.0 / fs, shell, t0, ids)

    if collapsed.any():
        index = np.flatnonzero(collapsed)
        if _refined:
            raise IntegrationError(
                f"bubble {int(ids[index[0]])} collapsed below {COLLAPSE_FRACTION} R0 even with a refined step",
                float(t0[index[0]]),
                int(ids[index[0]]),
            )
        logger.warning(f"Collapse guard: retrying {len(index)} bubbles with a {COLLAPSE_REFINE}x smaller step")
        retry = integrate_radius(
            DriveSignal(t0=t0[index], fs=drive.fs, samples=samples[index]),
            shell.subset(index),
            method,
            oversample * COLLAPSE_REFINE,
            ids[index],
            _refined=True,
        )
        step = slice(None, None, COLLAPSE_REFINE)
        R[index] = retry.radius[:, step]
        V[index] = retry.velocity[:, step]
        A[index] = retry.acceleration[:, step]
        ruptured[index] = retry.ruptured[:, step]

    if single:
        return BubbleTrace(t0=float(t0[0]), fs=fs, radius=R[0], velocity=V[0], acceleration=A[0], ruptured=ruptured[0])
    return BubbleTrace(t0=t0.copy(), fs=fs, radius=R, velocity=V, acceleration=A, ruptured=ruptured)


def scattered_pressure(trace: BubbleTrace, d: float, rho_l) -> np.ndarray:
    """Far-field radiated pressure rho/d * (R^2 Rddot + 2 R Rdot^2)"""
    if d <= 0:
        raise DomainError("distance must be positive")
    rho = np.asarray(rho_l, dtype=float)
    if rho.ndim and trace.radius.ndim == 2:
        rho = rho[:, None]
    R, V, A = trace.radius, trace.velocity, trace.acceleration
    return rho / d * (R**2 * A + 2.0 * R * V**2)


def linear_stiffness(params: BubbleParams) -> tuple[float, float, float]:
    """Mass, damping and stiffness of the equation linearised about R0 (per unit area)"""
    sigma0 = surface_tension(params.r0, False, params)
    gas = params.p0_ambient + 2.0 * sigma0 / params.r0
    if params.r_buckle < params.r0 < params.r_break:
        dsigma = 2.0 * params.chi * params.r0 / params.r_buckle**2
    else:
        dsigma = 0.0
    stiffness = 3.0 * params.kappa * gas / params.r0 + 2.0 * dsigma / params.r0 - 2.0 * sigma0 / params.r0**2
    damping = 3.0 * params.kappa * gas / params.c + 4.0 * params.mu_l / params.r0 + 4.0 * params.kappa_s / params.r0**2
    return params.rho_l * params.r0, damping, stiffness


def resonance_frequency(params: BubbleParams) -> float:
    mass, _, stiffness = linear_stiffness(params)
    return float(np.sqrt(stiffness / mass) / (2.0 * np.pi))


def linear_response(params: BubbleParams, frequency: float, amplitude: float) -> float:
    """Steady-state radial excursion amplitude for a small sinusoidal drive"""
    mass, damping, stiffness = linear_stiffness(params)
    omega = 2.0 * np.pi * frequency
    return float(amplitude / np.hypot(stiffness - mass * omega**2, damping * omega))


def population_params(
    base: BubbleParams,
    bubble_ids: Sequence[int],
    seed: int,
    r0_range: tuple[float, float] | None = None,
    buckle_ratio: float = 1.0,
) -> list[BubbleParams]:
    """Per-bubble shells with R0 drawn from r0_range and R_buckle = buckle_ratio * R0.

    Each bubble id owns its own stream, so a bubble keeps its shell however many
    others are simulated.
    """
    if r0_range is None:
        return [base] * len(bubble_ids)
    low, high = r0_range
    if not 0 < low <= high:
        raise DomainError(f"invalid R0 range {r0_range}")
    shells = []
    for bubble_id in bubble_ids:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(int(bubble_id),))))
        r0 = float(rng.uniform(low, high))
        fields = base.model_dump() | {"r0": r0, "r_buckle": r0 * buckle_ratio, "r_break": None, "r_ruptured": None}
        shells.append(BubbleParams(**fields))
    return shells
