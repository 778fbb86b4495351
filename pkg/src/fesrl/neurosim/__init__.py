"""Simplified neuromechanical plants with fatiguing muscles."""
from .env import RPM, FesEnv, reset_with_sampled_fatigue, reward
from .muscle import (
    MuscleState, fatigue_rate_bounds, half_capacity_time, muscle_force, step_activation,
    step_fatigue, step_muscle,
)
from .params import (
    ArmPlant, CrankPlant, FatigueSettings, MuscleParams, Plant, PlantConfigError, load_plants,
)
from .plants import (
    NonFiniteStateError, PlantState, arm_energy, effectiveness, initial_state, step_arm,
    step_crank, step_plant,
)

__all__ = [
    "RPM", "ArmPlant", "CrankPlant", "FatigueSettings", "FesEnv", "MuscleParams", "MuscleState",
    "NonFiniteStateError", "Plant", "PlantConfigError", "PlantState", "arm_energy",
    "effectiveness", "fatigue_rate_bounds", "half_capacity_time", "initial_state", "load_plants",
    "muscle_force", "reset_with_sampled_fatigue", "reward", "step_activation", "step_arm",
    "step_crank", "step_fatigue", "step_muscle", "step_plant",
]
