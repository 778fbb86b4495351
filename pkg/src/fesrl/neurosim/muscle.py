"""Muscle activation, three-compartment fatigue and force.

Per 1 ms substep:

* activation relaxes exponentially toward the command u with time constant
  tau_act (u > a) or tau_deact (u <= a); the update is exact for constant u,
  so a never leaves the segment between its old value and u;
* the motor-unit pool moves between rested, active and fatigued fractions
  (M_R, M_A, M_F) with fatigue rate k_f and recovery rate k_r:

      dM_A/dt = J - k_f M_A
      dM_F/dt = k_f M_A - k_r M_F
      dM_R/dt = -J + k_r M_F

  where the recruitment flow J = C (a - M_A) M_R while M_A lags activation,
  and J = C (a - M_A) (release back to rested) once M_A exceeds it;
* force = f_max * a * (1 - M_F).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .params import FatigueSettings, MuscleParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MuscleState:
    a: float = 0.0
    rested: float = 1.0
    active: float = 0.0
    fatigued: float = 0.0

    @property
    def capacity(self) -> float:
        return 1.0 - self.fatigued

    @property
    def partition_error(self) -> float:
        return abs(self.rested + self.active + self.fatigued - 1.0)


@njit(cache=True)
def _activation_substep(u, a, decay_up, decay_down):
    if u > a:
        return u + (a - u) * decay_up
    return u + (a - u) * decay_down


@njit(cache=True)
def _fatigue_substep(a, mr, ma, mf, F, R, C, h):
    gap = a - ma
    if gap > 0.0:
        recruit = C * gap * mr
    else:
        recruit = C * gap
    fatigue = F * ma
    recover = R * mf
    mr = mr + h * (recover - recruit)
    ma = ma + h * (recruit - fatigue)
    mf = mf + h * (fatigue - recover)
    return mr, ma, mf


@njit(cache=True)
def _run_muscle(n, u, a, mr, ma, mf, decay_up, decay_down, F, R, C, h, do_act, do_fat):
    for _ in range(n):
        if do_act:
            a = _activation_substep(u, a, decay_up, decay_down)
        if do_fat:
            mr, ma, mf = _fatigue_substep(a, mr, ma, mf, F, R, C, h)
    return a, mr, ma, mf


@njit(cache=True)
def _half_capacity_time(F, R, C, decay_up, h, max_time):
    # fresh muscle, maximal stimulation from t = 0
    a, mr, ma, mf = 0.0, 1.0, 0.0, 0.0
    t = 0.0
    while t < max_time:
        prev = mf
        a = _activation_substep(1.0, a, decay_up, decay_up)
        mr, ma, mf = _fatigue_substep(a, mr, ma, mf, F, R, C, h)
        t += h
        if mf >= 0.5:
            return t - h * (mf - 0.5) / (mf - prev)
    return np.inf


def _decays(p: MuscleParams, h: float) -> tuple[float, float]:
    return math.exp(-h / p.tau_act), math.exp(-h / p.tau_deact)


def _n_sub(dt: float, substep: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return max(1, int(round(dt / substep)))


def clamp_intensity(u: float) -> float:
    if 0.0 <= u <= 1.0:
        return float(u)
    log.warning("stimulation intensity %r outside [0, 1]; clamped", u)
    return min(max(float(u), 0.0), 1.0)


def step_activation(m: MuscleState, u: float, dt: float, p: MuscleParams,
                    substep: float = 1e-3) -> MuscleState:
    up, down = _decays(p, substep)
    a, *_ = _run_muscle(_n_sub(dt, substep), clamp_intensity(u), m.a, m.rested, m.active,
                        m.fatigued, up, down, 0.0, 0.0, 0.0, substep, True, False)
    return MuscleState(a, m.rested, m.active, m.fatigued)


def step_fatigue(m: MuscleState, dt: float, p: MuscleParams, drive_gain: float = 10.0,
                 substep: float = 1e-3) -> MuscleState:
    """Advance the compartments over ``dt`` holding activation fixed."""
    _, mr, ma, mf = _run_muscle(_n_sub(dt, substep), 0.0, m.a, m.rested, m.active, m.fatigued,
                                1.0, 1.0, p.fatigue_rate, p.recovery_rate, drive_gain,
                                substep, False, True)
    return MuscleState(m.a, mr, ma, mf)


def step_muscle(m: MuscleState, u: float, dt: float, p: MuscleParams, drive_gain: float = 10.0,
                substep: float = 1e-3) -> MuscleState:
    """Activation and fatigue interleaved per substep, as inside the plants."""
    up, down = _decays(p, substep)
    out = _run_muscle(_n_sub(dt, substep), clamp_intensity(u), m.a, m.rested, m.active,
                      m.fatigued, up, down, p.fatigue_rate, p.recovery_rate, drive_gain,
                      substep, True, True)
    return MuscleState(*out)


def muscle_force(m: MuscleState, p: MuscleParams) -> float:
    return p.f_max * m.a * (1.0 - m.fatigued)


def half_capacity_time(p: MuscleParams, drive_gain: float = 10.0, substep: float = 1e-3,
                       max_time: float = 1800.0) -> float:
    """Seconds of maximal stimulation until a fresh muscle is at 50% capacity."""
    up, _ = _decays(p, substep)
    return float(_half_capacity_time(p.fatigue_rate, p.recovery_rate, drive_gain, up,
                                     substep, max_time))


@lru_cache(maxsize=64)
def _calibrate(tau_act: float, R: float, C: float, t_fast: float, t_slow: float,
               substep: float) -> tuple[float, float]:
    def miss(F: float, target: float) -> float:
        probe = MuscleParams("probe", 1.0, tau_act=tau_act, fatigue_rate=F, recovery_rate=R)
        t = half_capacity_time(probe, C, substep)
        # below F = R the muscle never reaches 50%; a finite cap keeps brentq bracketed
        return min(t, 1e6) - target

    slow = brentq(miss, 1e-5, 1.0, args=(t_slow,), xtol=1e-14)
    fast = brentq(miss, 1e-5, 1.0, args=(t_fast,), xtol=1e-14)
    return slow, fast


def fatigue_rate_bounds(p: MuscleParams, fat: FatigueSettings,
                        substep: float = 1e-3) -> tuple[float, float]:
    """Rates (F_slow, F_fast) giving 50% capacity after the slow/fast hold times."""
    return _calibrate(p.tau_act, p.recovery_rate, fat.drive_gain, fat.half_capacity_fast_s,
                      fat.half_capacity_slow_s, substep)
