"""Plant/muscle parameter types and the YAML parameter-file loader."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

SCHEMA_VERSION = 1
GRAVITY = 9.81


class PlantConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MuscleParams:
    name: str
    f_max: float
    moment_arm: float = 0.0  # signed; flexors positive (crank muscles use the plant radius)
    tau_act: float = 0.05
    tau_deact: float = 0.1
    fatigue_rate: float = 0.0
    recovery_rate: float = 0.0
    channel: int = 0
    lobes: tuple[tuple[float, float, float], ...] = ()  # (center rad, half-width rad, gain)

    def __post_init__(self):
        if self.f_max <= 0:
            raise PlantConfigError(f"muscle {self.name}: f_max must be > 0")
        if self.tau_act <= 0 or self.tau_deact <= 0:
            raise PlantConfigError(f"muscle {self.name}: time constants must be > 0")
        if self.fatigue_rate < 0 or self.recovery_rate < 0:
            raise PlantConfigError(f"muscle {self.name}: fatigue/recovery rates must be >= 0")


@dataclass(frozen=True)
class FatigueSettings:
    drive_gain: float = 10.0
    recovery_rate: float = 0.00094
    initial_fatigue_max: float = 0.3
    half_capacity_fast_s: float = 60.0
    half_capacity_slow_s: float = 120.0


@dataclass(frozen=True)
class Timing:
    control_dt: float = 0.1
    substep: float = 0.001

    @property
    def n_substeps(self) -> int:
        return int(round(self.control_dt / self.substep))


@dataclass(frozen=True)
class ArmPlant:
    name: str
    inertia: float
    mass: float
    com_distance: float
    damping: float
    gravity: bool
    gravity_ref: float
    theta_min: float
    theta_max: float
    rest: float
    target_range: tuple[float, float]  # rad
    channels: tuple[str, ...]
    muscles: tuple[MuscleParams, ...]
    fatigue: FatigueSettings = field(default_factory=FatigueSettings)
    timing: Timing = field(default_factory=Timing)
    kind: str = "arm"

    def __post_init__(self):
        if self.inertia <= 0:
            raise PlantConfigError(f"plant {self.name}: inertia must be > 0")
        if not self.theta_min < self.theta_max:
            raise PlantConfigError(f"plant {self.name}: theta_min must be < theta_max")
        _check_channels(self.name, self.muscles, len(self.channels))

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def gravity_coef(self) -> float:
        return self.mass * GRAVITY * self.com_distance if self.gravity else 0.0


@dataclass(frozen=True)
class CrankPlant:
    name: str
    inertia: float
    damping: float
    passive_resistance: float
    radius: float
    rest: float
    target_range: tuple[float, float]  # rad/s
    muscles: tuple[MuscleParams, ...]
    fatigue: FatigueSettings = field(default_factory=FatigueSettings)
    timing: Timing = field(default_factory=Timing)
    kind: str = "crank"

    def __post_init__(self):
        if self.inertia <= 0:
            raise PlantConfigError(f"plant {self.name}: inertia must be > 0")
        _check_channels(self.name, self.muscles, self.n_channels)
        if self.n_channels != 6:
            raise PlantConfigError(f"plant {self.name}: cycling needs 6 stimulation channels")

    @property
    def n_channels(self) -> int:
        return 1 + max(m.channel for m in self.muscles)

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(m.name for m in sorted(self.muscles, key=lambda m: m.channel))


Plant = ArmPlant | CrankPlant


def _check_channels(name, muscles, n_channels):
    if not muscles:
        raise PlantConfigError(f"plant {name}: no muscles")
    used = {m.channel for m in muscles}
    if any(c < 0 or c >= n_channels for c in used) or len(used) != n_channels:
        raise PlantConfigError(f"plant {name}: every channel 0..{n_channels - 1} needs muscles")


def with_muscles(plant: Plant, muscles) -> Plant:
    return replace(plant, muscles=tuple(muscles))


def channel_map(plant: Plant) -> np.ndarray:
    return np.array([m.channel for m in plant.muscles], dtype=np.int64)


def default_params_path() -> Path:
    return Path(str(resources.files("fesrl") / "data" / "plants.yaml"))


def load_plants(path: str | Path | None = None) -> dict[str, Plant]:
    """Parse a plant parameter file into ``{plant_id: plant}``."""
    path = Path(path) if path is not None else default_params_path()
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise PlantConfigError(f"cannot read plant parameters {path}: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("schema_version") != SCHEMA_VERSION:
        raise PlantConfigError(f"{path}: expected schema_version {SCHEMA_VERSION}")
    fat = FatigueSettings(**raw.get("fatigue", {}))
    timing = Timing(**raw.get("timing", {}))
    plants: dict[str, Plant] = {}
    for pid, spec in raw.get("plants", {}).items():
        try:
            plants[pid] = _build_plant(pid, dict(spec), fat, timing)
        except (KeyError, TypeError) as exc:
            raise PlantConfigError(f"{path}: plant {pid}: bad or missing field {exc}") from exc
    return plants


def _muscle(spec: dict, fat: FatigueSettings) -> MuscleParams:
    lobes = tuple(
        (math.radians(c), math.radians(w), float(g)) for c, w, g in spec.pop("lobes", ())
    )
    return MuscleParams(recovery_rate=fat.recovery_rate, lobes=lobes, **spec)


def _build_plant(pid: str, spec: dict, fat: FatigueSettings, timing: Timing) -> Plant:
    kind = spec.pop("kind")
    muscles = tuple(_muscle(dict(m), fat) for m in spec.pop("muscles"))
    lo, hi = spec.pop("target_range")
    if kind == "arm":
        return ArmPlant(
            name=pid,
            inertia=spec["inertia"],
            mass=spec["mass"],
            com_distance=spec["com_distance"],
            damping=spec["damping"],
            gravity=bool(spec["gravity"]),
            gravity_ref=math.radians(spec["gravity_ref_deg"]),
            theta_min=math.radians(spec["theta_min_deg"]),
            theta_max=math.radians(spec["theta_max_deg"]),
            rest=math.radians(spec["rest_deg"]),
            target_range=(math.radians(lo), math.radians(hi)),
            channels=tuple(spec["channels"]),
            muscles=muscles,
            fatigue=fat,
            timing=timing,
        )
    if kind == "crank":
        rpm = 2.0 * math.pi / 60.0
        return CrankPlant(
            name=pid,
            inertia=spec["inertia"],
            damping=spec["damping"],
            passive_resistance=spec["passive_resistance"],
            radius=spec["radius"],
            rest=math.radians(spec["rest_deg"]),
            target_range=(lo * rpm, hi * rpm),
            muscles=tuple(replace(m, moment_arm=spec["radius"]) for m in muscles),
            fatigue=fat,
            timing=timing,
        )
    raise PlantConfigError(f"plant {pid}: unknown kind {kind!r}")
