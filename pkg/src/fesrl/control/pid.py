"""PID baseline, crank active-muscle pattern and intensity quantizer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.kp, self.ki, self.kd)


@dataclass
class PidController:
    """PID with clamped output and conditional-integration anti-windup.

    The derivative acts on the measurement when one is supplied, which avoids
    a kick at target steps; otherwise it falls back to the error.
    """

    gains: PidGains
    out_min: float = 0.0
    out_max: float = 1.0
    integral: float = 0.0
    prev: float | None = None

    def reset(self) -> None:
        self.integral, self.prev = 0.0, None


def pid_step(c: PidController, error: float, dt: float, measurement: float | None = None) -> float:
    if dt <= 0:
        raise ValueError(f"PID step needs dt > 0, got {dt}")
    kp, ki, kd = c.gains.as_tuple()
    signal = -measurement if measurement is not None else error
    deriv = 0.0 if c.prev is None else (signal - c.prev) / dt
    c.prev = signal

    candidate = c.integral + error * dt
    raw = kp * error + ki * candidate + kd * deriv
    pushing_high = raw > c.out_max and error * ki > 0
    pushing_low = raw < c.out_min and error * ki < 0
    if pushing_high or pushing_low:
        raw = kp * error + ki * c.integral + kd * deriv  # freeze the integral
    else:
        c.integral = candidate
    if not math.isfinite(raw):
        raise FloatingPointError(f"PID output is not finite (error={error})")
    return float(min(c.out_max, max(c.out_min, raw)))


@dataclass(frozen=True)
class ActiveMusclePattern:
    """Crank-angle windows [on, off) per channel, in radians within [0, 2 pi)."""

    windows: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for on, off in self.windows:
            if not (0.0 <= on < TWO_PI and 0.0 <= off < TWO_PI):
                raise ValueError(f"window ({on}, {off}) outside [0, 2 pi)")

    @classmethod
    def from_plant(cls, plant, lead: float = 0.0) -> "ActiveMusclePattern":
        """Windows where each muscle's main lobe gives more than half its peak effect.

        ``lead`` advances every window (radians) to compensate activation lag.
        """
        windows = []
        for m in plant.muscles:
            center, half_width, _ = max(m.lobes, key=lambda lobe: lobe[2])
            on = (center - 0.5 * half_width - lead) % TWO_PI
            off = (center + 0.5 * half_width - lead) % TWO_PI
            windows.append((on, off))
        return cls(tuple(windows))

    def gate(self, phi: float) -> np.ndarray:
        phi = phi % TWO_PI
        out = np.zeros(len(self.windows))
        for i, (on, off) in enumerate(self.windows):
            inside = on <= phi < off if on <= off else (phi >= on or phi < off)
            out[i] = 1.0 if inside else 0.0
        return out


@dataclass(frozen=True)
class IntensityQuantizer:
    """Snap commands to the nearest of a monotone table of intensity levels."""

    levels: tuple[float, ...] = field(default_factory=lambda: tuple(np.linspace(0.0, 1.0, 20)))

    def __post_init__(self):
        lv = np.asarray(self.levels)
        if len(lv) < 2 or np.any(np.diff(lv) <= 0):
            raise ValueError("quantizer levels must be strictly increasing")

    def __call__(self, cmd) -> np.ndarray:
        lv = np.asarray(self.levels)
        cmd = np.asarray(cmd, dtype=float)
        idx = np.abs(cmd[..., None] - lv).argmin(axis=-1)
        return lv[idx]
