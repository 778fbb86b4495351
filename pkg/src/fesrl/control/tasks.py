"""Frozen evaluation tasks, controllers and tracking metrics.

Task trajectories (targets in degrees or RPM, one value per 0.1 s step):

* ramp_trajectory: vertical arm, 180 s. Holds at 40, 90, 60 and 110 deg with
  15 s ramps into the 90 and 110 deg holds.
* step_70_20: vertical arm, 180 s of alternating 15 s holds, 20 deg first.
* long_horizontal: horizontal arm, 360 s of 20 s holds.
* cycling_cadence: crank, 180 s of 30 s cadence holds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..neurosim import FesEnv, NonFiniteStateError, reward
from ..sacagent import SacAgent, act_deterministic, normalize_target
from ..staterep import StateRepUnit
from .episodes import write_trace_csv
from .pid import ActiveMusclePattern, PidController, PidGains, pid_step

TASKS = ("ramp_trajectory", "step_70_20", "long_horizontal", "cycling_cadence")
TASK_PLANTS = {
    "ramp_trajectory": "vertical_arm",
    "step_70_20": "vertical_arm",
    "long_horizontal": "horizontal_arm",
    "cycling_cadence": "cycling",
}
TASK_VERSION = 1


def _segments(pieces: Sequence[tuple[str, float, float, float]], dt: float) -> np.ndarray:
    """Build a trajectory from ("hold", value, value, seconds) / ("ramp", start, end, seconds)."""
    out = []
    for kind, a, b, seconds in pieces:
        n = int(round(seconds / dt))
        if kind == "hold":
            out.append(np.full(n, a))
        else:
            out.append(a + (b - a) * (np.arange(1, n + 1) / n))
    return np.concatenate(out)


def task_targets(task: str, dt: float = 0.1) -> np.ndarray:
    """Target trajectory in display units (deg for arms, RPM for cycling)."""
    if task == "ramp_trajectory":
        return _segments([("hold", 40, 40, 30), ("ramp", 40, 90, 15), ("hold", 90, 90, 30),
                          ("hold", 60, 60, 30), ("ramp", 60, 110, 15), ("hold", 110, 110, 60)], dt)
    if task == "step_70_20":
        return _segments([("hold", 20 if k % 2 == 0 else 70, 0, 15) for k in range(12)], dt)
    if task == "long_horizontal":
        levels = [60, 100, 40, 120, 80, 30, 110, 50, 90, 70, 20, 100, 60, 110, 40, 80, 30, 90]
        return _segments([("hold", v, v, 20) for v in levels], dt)
    if task == "cycling_cadence":
        return _segments([("hold", v, v, 30) for v in (30, 45, 60, 40, 25, 50)], dt)
    raise KeyError(f"unknown task {task!r}; valid tasks: {', '.join(TASKS)}")


def task_targets_internal(task: str, env: FesEnv) -> np.ndarray:
    return task_targets(task, env.dt) / env.display_scale


# ------------------------------------------------------------------ controllers


class Controller:
    name = "controller"

    def reset(self, env: FesEnv) -> None:
        pass

    def __call__(self, env: FesEnv, obs: np.ndarray, target: float) -> np.ndarray:
        raise NotImplementedError


class ZeroController(Controller):
    name = "zero"

    def __call__(self, env, obs, target):
        return np.zeros(env.action_dim)


class RlController(Controller):
    """Deterministic SAC policy on top of the GRU state."""

    name = "rl"

    def __init__(self, agent: SacAgent, unit: StateRepUnit):
        self.agent, self.unit = agent, unit
        self.h = self.prev = None

    def reset(self, env):
        self.h = self.unit.initial_hidden()
        self.prev = np.zeros(env.action_dim)

    def __call__(self, env, obs, target):
        self.h = self.unit.encode_step(obs, self.prev, self.h)
        x = np.append(self.h, normalize_target(target, env.target_range))
        self.prev = act_deterministic(self.agent.policy, x)
        return self.prev


class PidTrackingController(Controller):
    """Plant-specific wiring of one PID loop.

    Vertical arm: output in [0, 1] drives the single channel. Horizontal arm:
    output in [-1, 1], positive part to channel 0, negative part to channel 1.
    Crank: output in [0, 1] gated by the active muscle pattern.
    """

    name = "pid"

    def __init__(self, gains: PidGains, pattern: ActiveMusclePattern | None = None):
        self.gains = gains
        self.pattern = pattern
        self.pid = PidController(gains)

    def reset(self, env):
        lo = -1.0 if env.action_dim == 2 and not env.is_crank else 0.0
        self.pid = PidController(self.gains, out_min=lo, out_max=1.0)
        if env.is_crank and self.pattern is None:
            self.pattern = ActiveMusclePattern.from_plant(env.plant)

    def __call__(self, env, obs, target):
        y = float(obs[0])
        v = pid_step(self.pid, target - y, env.dt, measurement=y)
        if env.is_crank:
            phi = math.atan2(obs[1], obs[2])
            return v * self.pattern.gate(phi)
        if env.action_dim == 2:
            return np.array([max(v, 0.0), max(-v, 0.0)])
        return np.array([v])


class OracleController(Controller):
    """Reads the full plant state and inverts the arm dynamics (sanity bound only).

    Commands the activation that would produce the torque of a stiff PD law
    plus gravity compensation, scaled by the true remaining capacity.
    """

    name = "oracle"

    def __init__(self, stiffness: float = 25.0, damping: float = 10.0):
        self.kp, self.kd = stiffness, damping

    def __call__(self, env, obs, target):
        if env.is_crank:
            raise ValueError("the oracle controller supports arm plants only")
        p, s = env.plant, env.state
        torque = (p.inertia * (self.kp * (target - s.q) - self.kd * s.qd) + p.damping * s.qd
                  + p.gravity_coef * math.cos(s.q - p.gravity_ref))
        cmd = np.zeros(env.action_dim)
        for ch in range(env.action_dim):
            idx = [i for i, m in enumerate(p.muscles) if m.channel == ch]
            gain = sum(p.muscles[i].moment_arm * p.muscles[i].f_max * s.capacity[i] for i in idx)
            if gain * torque > 0:
                cmd[ch] = torque / gain
        return np.clip(cmd, 0.0, 1.0)


# ------------------------------------------------------------------ evaluation


@dataclass
class TrackingMetrics:
    task: str
    controller: str
    rmse: float
    first_half_err: float
    second_half_err: float
    overshoots: list[float] = field(default_factory=list)
    n_steps: int = 0
    diverged: bool = False

    def mean_overshoot(self, part: slice | None = None) -> float:
        vals = self.overshoots if part is None else self.overshoots[part]
        return float(np.mean(vals)) if vals else 0.0

    def thirds(self) -> tuple[float, float]:
        """Mean overshoot over the first and final third of the upward holds."""
        k = len(self.overshoots) // 3
        if k == 0:
            return 0.0, 0.0
        return self.mean_overshoot(slice(0, k)), self.mean_overshoot(slice(-k, None))


@dataclass
class TrackingTrace:
    targets: np.ndarray  # display units
    achieved: np.ndarray  # display units, after each step
    actions: np.ndarray
    capacities: np.ndarray
    rewards: np.ndarray

    def to_csv(self, path, env: FesEnv) -> None:
        write_trace_csv(path, env, self.targets, self.achieved, self.actions, self.capacities,
                        self.rewards)


def hold_overshoots(targets: np.ndarray, achieved: np.ndarray) -> list[float]:
    """Peak excursion above target within each hold entered from below.

    Holds are maximal runs of constant target; a hold counts as upward when its
    target exceeds the previous hold's target (ramps in between are skipped).
    """
    out = []
    bounds = np.flatnonzero(np.diff(targets)) + 1
    starts = np.r_[0, bounds]
    ends = np.r_[bounds, len(targets)]
    prev_hold = None
    for s, e in zip(starts, ends):
        if e - s < 2:  # ramp samples
            continue
        level = targets[s]
        if prev_hold is not None and level > prev_hold:
            out.append(max(0.0, float(np.max(achieved[s:e] - level))))
        prev_hold = level
    return out


def tracking_metrics(task: str, controller: str, targets: np.ndarray,
                     achieved: np.ndarray, diverged: bool = False) -> TrackingMetrics:
    err = achieved - targets[:len(achieved)]
    half = len(err) // 2
    return TrackingMetrics(
        task=task, controller=controller,
        rmse=float(np.sqrt(np.mean(err ** 2))),
        first_half_err=float(np.mean(np.abs(err[:half]))),
        second_half_err=float(np.mean(np.abs(err[half:]))),
        overshoots=hold_overshoots(targets[:len(achieved)], achieved),
        n_steps=len(err), diverged=diverged,
    )


def evaluate_tracking(controller: Controller, env: FesEnv, task: str, rng: np.random.Generator,
                      n_steps: int | None = None, fresh: bool = False
                      ) -> tuple[TrackingMetrics, TrackingTrace]:
    """Run a frozen task from a reset drawn from ``rng`` (or a fresh plant)."""
    if TASK_PLANTS.get(task) is None:
        raise KeyError(f"unknown task {task!r}; valid tasks: {', '.join(TASKS)}")
    if TASK_PLANTS[task] != env.plant_id:
        raise ValueError(f"task {task} runs on {TASK_PLANTS[task]}, not {env.plant_id}")
    targets = task_targets_internal(task, env)
    if n_steps is not None:
        targets = targets[:n_steps]
    if fresh:
        env.reset_fresh()
    else:
        env.reset_with_sampled_fatigue(rng)
    controller.reset(env)
    obs = env.observe()
    achieved, actions, caps, rewards = [], [], [], []
    diverged = False
    for t, target in enumerate(targets):
        cmd = np.clip(np.asarray(controller(env, obs, float(target)), dtype=float), 0.0, 1.0)
        try:
            obs = env.step(cmd)
        except NonFiniteStateError:
            diverged = True
            break
        achieved.append(obs[0])
        rewards.append(reward(obs, target))
        actions.append(cmd)
        caps.append(env.state.capacity.copy())
    scale = env.display_scale
    tgt_disp = targets * scale
    ach = np.array(achieved) * scale
    metrics = tracking_metrics(task, controller.name, tgt_disp, ach, diverged)
    trace = TrackingTrace(tgt_disp[:len(ach)], ach, np.array(actions).reshape(len(ach), -1),
                          np.array(caps).reshape(len(ach), -1), np.array(rewards))
    return metrics, trace


DEFAULT_GAIN_GRIDS = {
    "vertical_arm": [PidGains(kp, ki, kd) for kp in (0.03, 0.05, 0.1, 0.2)
                     for ki in (0.1, 0.2, 0.5, 1.0) for kd in (0.01, 0.02, 0.05, 0.1)],
    "horizontal_arm": [PidGains(kp, ki, kd) for kp in (0.05, 0.1, 0.2)
                       for ki in (0.0, 0.05, 0.1, 0.2) for kd in (0.01, 0.02, 0.05, 0.1)],
    "cycling": [PidGains(kp, ki, kd) for kp in (0.05, 0.1, 0.2, 0.4)
                for ki in (0.02, 0.05, 0.1, 0.2) for kd in (0.0, 0.005)],
}
TUNING_TASK = {"vertical_arm": "ramp_trajectory", "horizontal_arm": "long_horizontal",
               "cycling": "cycling_cadence"}


def tune_pid(env: FesEnv, gain_grid: Sequence[PidGains] | None = None,
             rng: np.random.Generator | None = None, seconds: float = 60.0) -> PidGains:
    """Grid search on a fresh plant, scored by RMSE over the tuning task's first minute.

    Ties keep the earliest grid entry. Raises RuntimeError if every candidate diverges.
    """
    grid = list(gain_grid) if gain_grid is not None else DEFAULT_GAIN_GRIDS[env.plant_id]
    if not grid:
        raise ValueError("gain grid is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    task = TUNING_TASK[env.plant_id]
    n = int(round(seconds / env.dt))
    best, best_rmse = None, math.inf
    for gains in grid:
        try:
            m, _ = evaluate_tracking(PidTrackingController(gains), env, task, rng, n_steps=n,
                                     fresh=True)
        except FloatingPointError:
            continue
        if m.diverged or not math.isfinite(m.rmse):
            continue
        if m.rmse < best_rmse:
            best, best_rmse = gains, m.rmse
    if best is None:
        raise RuntimeError("every PID candidate diverged during tuning")
    return best
