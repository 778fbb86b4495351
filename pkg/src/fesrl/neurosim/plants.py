"""Elbow and crank dynamics driven by fatiguing muscles.

Each control step runs ``control_dt / substep`` semi-implicit Euler substeps
(velocity first, then position with the new velocity). Muscles are advanced
inside the same substep loop so force follows activation at 1 ms resolution.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numba import njit

from .muscle import MuscleState, _activation_substep, _fatigue_substep
from .params import ArmPlant, CrankPlant, Plant, channel_map

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


class NonFiniteStateError(FloatingPointError):
    def __init__(self, quantity: str):
        super().__init__(f"plant state became non-finite: {quantity}")
        self.quantity = quantity


@dataclass
class PlantState:
    """Mechanical coordinate plus per-muscle activation/fatigue arrays.

    For arms ``q`` is the elbow angle theta; for the crank it is the crank
    angle phi in [0, 2 pi). ``qd`` is the matching angular velocity.
    """

    q: float
    qd: float
    a: np.ndarray
    rested: np.ndarray
    active: np.ndarray
    fatigued: np.ndarray
    fatigue_rates: np.ndarray
    recovery_rates: np.ndarray
    time: float = 0.0

    def copy(self) -> "PlantState":
        return replace(self, a=self.a.copy(), rested=self.rested.copy(),
                       active=self.active.copy(), fatigued=self.fatigued.copy(),
                       fatigue_rates=self.fatigue_rates.copy(),
                       recovery_rates=self.recovery_rates.copy())

    @property
    def capacity(self) -> np.ndarray:
        return 1.0 - self.fatigued

    def muscle(self, i: int) -> MuscleState:
        return MuscleState(float(self.a[i]), float(self.rested[i]), float(self.active[i]),
                           float(self.fatigued[i]))

    def partition_error(self) -> float:
        return float(np.max(np.abs(self.rested + self.active + self.fatigued - 1.0)))


def initial_state(plant: Plant, fatigued=None, fatigue_rates=None) -> PlantState:
    n = len(plant.muscles)
    mf = np.zeros(n) if fatigued is None else np.asarray(fatigued, dtype=float).copy()
    F = (np.array([m.fatigue_rate for m in plant.muscles]) if fatigue_rates is None
         else np.asarray(fatigue_rates, dtype=float).copy())
    return PlantState(
        q=plant.rest, qd=0.0, a=np.zeros(n), rested=1.0 - mf, active=np.zeros(n), fatigued=mf,
        fatigue_rates=F, recovery_rates=np.array([m.recovery_rate for m in plant.muscles]),
    )


@dataclass(frozen=True, eq=False)
class _Arrays:
    channel: np.ndarray
    f_max: np.ndarray
    moment_arm: np.ndarray
    decay_up: np.ndarray
    decay_down: np.ndarray
    lobes: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 3)))


@lru_cache(maxsize=32)
def plant_arrays(plant: Plant) -> _Arrays:
    h = plant.timing.substep
    ms = plant.muscles
    n_lobes = max([len(m.lobes) for m in ms] + [1])
    lobes = np.zeros((len(ms), n_lobes, 3))
    lobes[:, :, 1] = 1.0  # padded lobes get unit width and zero gain
    for i, m in enumerate(ms):
        for k, lobe in enumerate(m.lobes):
            lobes[i, k] = lobe
    return _Arrays(
        channel=channel_map(plant),
        f_max=np.array([m.f_max for m in ms]),
        moment_arm=np.array([m.moment_arm for m in ms]),
        decay_up=np.array([math.exp(-h / m.tau_act) for m in ms]),
        decay_down=np.array([math.exp(-h / m.tau_deact) for m in ms]),
        lobes=lobes,
    )


@njit(cache=True)
def _muscles_substep(u, a, mr, ma, mf, up, down, F, R, C, h, fatigue_on):
    for i in range(u.shape[0]):
        a[i] = _activation_substep(u[i], a[i], up[i], down[i])
        if fatigue_on:
            mr[i], ma[i], mf[i] = _fatigue_substep(a[i], mr[i], ma[i], mf[i], F[i], R[i], C, h)


@njit(cache=True)
def _arm_kernel(n, h, u, a, mr, ma, mf, up, down, F, R, C, fatigue_on, fmax, arm,
                inertia, damping, grav, gref, qmin, qmax, q, qd):
    for _ in range(n):
        _muscles_substep(u, a, mr, ma, mf, up, down, F, R, C, h, fatigue_on)
        torque = 0.0
        for i in range(u.shape[0]):
            torque += arm[i] * fmax[i] * a[i] * (1.0 - mf[i])
        torque -= damping * qd + grav * math.cos(q - gref)
        qd += h * torque / inertia
        q += h * qd
        if q < qmin:
            q = qmin
            if qd < 0.0:
                qd = 0.0
        elif q > qmax:
            q = qmax
            if qd > 0.0:
                qd = 0.0
    return q, qd


@njit(cache=True)
def _effectiveness(phi, lobes_i):
    total = 0.0
    for k in range(lobes_i.shape[0]):
        d = (phi - lobes_i[k, 0] + math.pi) % (2.0 * math.pi) - math.pi
        w = lobes_i[k, 1]
        if abs(d) < w:
            total += lobes_i[k, 2] * 0.5 * (1.0 + math.cos(math.pi * d / w))
    return min(1.0, max(-1.0, total))


@njit(cache=True)
def _crank_kernel(n, h, u, a, mr, ma, mf, up, down, F, R, C, fatigue_on, fmax, radius,
                  lobes, inertia, damping, q, qd):
    for _ in range(n):
        _muscles_substep(u, a, mr, ma, mf, up, down, F, R, C, h, fatigue_on)
        torque = 0.0
        for i in range(u.shape[0]):
            torque += _effectiveness(q, lobes[i]) * radius[i] * fmax[i] * a[i] * (1.0 - mf[i])
        torque -= damping * qd
        qd += h * torque / inertia
        q = (q + h * qd) % (2.0 * math.pi)
    return q, qd


def effectiveness(plant: CrankPlant, phi: float) -> np.ndarray:
    lobes = plant_arrays(plant).lobes
    return np.array([_effectiveness(float(phi), lobes[i]) for i in range(len(plant.muscles))])


def _muscle_commands(plant: Plant, cmd) -> np.ndarray:
    cmd = np.asarray(cmd, dtype=float).reshape(-1)
    if cmd.shape[0] != plant.n_channels:
        raise ValueError(f"{plant.name} expects {plant.n_channels} stimulation channels, "
                         f"got {cmd.shape[0]}")
    if not np.all(np.isfinite(cmd)):
        raise ValueError(f"non-finite stimulation command {cmd}")
    if np.any((cmd < 0.0) | (cmd > 1.0)):
        log.warning("stimulation command %s outside [0, 1]; clamped", cmd)
        cmd = np.clip(cmd, 0.0, 1.0)
    return cmd[plant_arrays(plant).channel]


def _check_finite(state: PlantState, coord: str) -> None:
    if not math.isfinite(state.q):
        raise NonFiniteStateError(coord)
    if not math.isfinite(state.qd):
        raise NonFiniteStateError(f"{coord} velocity")
    for label, arr in (("activation", state.a), ("fatigued fraction", state.fatigued),
                       ("active fraction", state.active), ("rested fraction", state.rested)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteStateError(label)


def _substeps(plant: Plant, dt: float | None) -> tuple[int, float]:
    dt = plant.timing.control_dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    h = plant.timing.substep
    return max(1, int(round(dt / h))), h


def arm_observation(state: PlantState) -> np.ndarray:
    return np.array([state.q, state.qd])


def crank_observation(state: PlantState) -> np.ndarray:
    return np.array([state.qd, math.sin(state.q), math.cos(state.q)])


def step_arm(plant: ArmPlant, state: PlantState, cmd, dt: float | None = None,
             fatigue: bool = True) -> tuple[PlantState, np.ndarray]:
    """Advance the elbow by ``dt`` (default: one control step) under ``cmd``."""
    u = _muscle_commands(plant, cmd)
    n, h = _substeps(plant, dt)
    arr = plant_arrays(plant)
    new = state.copy()
    new.q, new.qd = _arm_kernel(
        n, h, u, new.a, new.rested, new.active, new.fatigued, arr.decay_up, arr.decay_down,
        new.fatigue_rates, new.recovery_rates, plant.fatigue.drive_gain, fatigue, arr.f_max,
        arr.moment_arm, plant.inertia, plant.damping, plant.gravity_coef, plant.gravity_ref,
        plant.theta_min, plant.theta_max, float(state.q), float(state.qd))
    new.time = state.time + n * h
    _check_finite(new, "theta")
    return new, arm_observation(new)


def step_crank(plant: CrankPlant, state: PlantState, cmd, dt: float | None = None,
               fatigue: bool = True) -> tuple[PlantState, np.ndarray]:
    u = _muscle_commands(plant, cmd)
    n, h = _substeps(plant, dt)
    arr = plant_arrays(plant)
    new = state.copy()
    new.q, new.qd = _crank_kernel(
        n, h, u, new.a, new.rested, new.active, new.fatigued, arr.decay_up, arr.decay_down,
        new.fatigue_rates, new.recovery_rates, plant.fatigue.drive_gain, fatigue, arr.f_max,
        arr.moment_arm, arr.lobes, plant.inertia, plant.damping + plant.passive_resistance,
        float(state.q), float(state.qd))
    new.time = state.time + n * h
    _check_finite(new, "crank angle")
    return new, crank_observation(new)


def step_plant(plant: Plant, state: PlantState, cmd, dt: float | None = None,
               fatigue: bool = True) -> tuple[PlantState, np.ndarray]:
    if isinstance(plant, CrankPlant):
        return step_crank(plant, state, cmd, dt, fatigue)
    return step_arm(plant, state, cmd, dt, fatigue)


def arm_energy(plant: ArmPlant, state: PlantState) -> float:
    """Kinetic plus gravitational energy, zero at rest in the gravity well."""
    return (0.5 * plant.inertia * state.qd ** 2
            + plant.gravity_coef * (math.sin(state.q - plant.gravity_ref) + 1.0))
