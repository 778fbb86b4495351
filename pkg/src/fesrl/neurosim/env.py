from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .muscle import fatigue_rate_bounds
from .params import CrankPlant, Plant, load_plants
from .plants import PlantState, arm_observation, crank_observation, initial_state, step_plant

RPM = 2.0 * math.pi / 60.0


def reward(obs, target: float) -> float:
    """Negative absolute tracking error of the controlled coordinate.

    The controlled coordinate is the first observation entry for every plant:
    elbow angle (rad) for the arms, cadence (rad/s) for the crank.
    """
    return -abs(float(target) - float(obs[0]))


class FesEnv:
    """One plant instance with its mutable state.

    ``fatigue=False`` freezes the compartments at their reset values.
    ``action_filter`` (e.g. an intensity quantizer) is applied to every command.
    """

    def __init__(self, plant: Plant, fatigue: bool = True,
                 action_filter: Callable[[np.ndarray], np.ndarray] | None = None):
        self.plant = plant
        self.fatigue = fatigue
        self.action_filter = action_filter
        self.state = initial_state(plant)

    @classmethod
    def from_id(cls, plant_id: str, params_path=None, **kwargs) -> "FesEnv":
        plants = load_plants(params_path)
        if plant_id not in plants:
            raise KeyError(f"unknown plant {plant_id!r}; choose from {sorted(plants)}")
        return cls(plants[plant_id], **kwargs)

    @property
    def plant_id(self) -> str:
        return self.plant.name

    @property
    def is_crank(self) -> bool:
        return isinstance(self.plant, CrankPlant)

    @property
    def obs_dim(self) -> int:
        return 3 if self.is_crank else 2

    @property
    def action_dim(self) -> int:
        return self.plant.n_channels

    @property
    def dt(self) -> float:
        return self.plant.timing.control_dt

    @property
    def target_range(self) -> tuple[float, float]:
        return self.plant.target_range

    @property
    def display_scale(self) -> float:
        """Multiplier from internal units (rad, rad/s) to degrees or RPM."""
        return 1.0 / RPM if self.is_crank else 180.0 / math.pi

    @property
    def display_unit(self) -> str:
        return "rpm" if self.is_crank else "deg"

    def observe(self) -> np.ndarray:
        return crank_observation(self.state) if self.is_crank else arm_observation(self.state)

    def reset(self, state: PlantState) -> np.ndarray:
        self.state = state.copy()
        return self.observe()

    def reset_fresh(self) -> np.ndarray:
        """Unfatigued muscles with mid-range fatigue rates."""
        rates = [sum(fatigue_rate_bounds(m, self.plant.fatigue)) / 2 for m in self.plant.muscles]
        return self.reset(initial_state(self.plant, fatigue_rates=rates))

    def reset_with_sampled_fatigue(self, rng: np.random.Generator) -> PlantState:
        self.state = reset_with_sampled_fatigue(self, rng)
        return self.state

    def step(self, cmd) -> np.ndarray:
        cmd = np.asarray(cmd, dtype=float)
        if self.action_filter is not None:
            cmd = self.action_filter(cmd)
        self.state, obs = step_plant(self.plant, self.state, cmd, fatigue=self.fatigue)
        return obs

    def controlled(self, obs=None) -> float:
        obs = self.observe() if obs is None else obs
        return float(obs[0])


def reset_with_sampled_fatigue(env: FesEnv, rng: np.random.Generator) -> PlantState:
    """Fresh episode state with random initial fatigue and fatigue rates.

    Per muscle: M_F ~ U(0, max initial fatigue), M_A = 0, M_R = 1 - M_F and
    the fatigue rate ~ U(F_slow, F_fast). All fatigue levels are drawn before
    the rates so the two streams stay aligned across plants.
    """
    plant = env.plant
    fat = plant.fatigue
    n = len(plant.muscles)
    mf = rng.uniform(0.0, fat.initial_fatigue_max, size=n)
    bounds = np.array([fatigue_rate_bounds(m, fat, plant.timing.substep) for m in plant.muscles])
    rates = rng.uniform(bounds[:, 0], bounds[:, 1])
    state = initial_state(plant, fatigued=mf, fatigue_rates=rates)
    env.state = state.copy()
    return state
