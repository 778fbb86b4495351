"""Episode rollouts and the episodic training loop.

Each training episode runs on a freshly fatigued plant. Once it ends, the
state-representation unit is fitted to every stored trace. All hidden
states are then regenerated, each trace gets a hindsight copy, and the
temporary buffer is rebuilt before the agent's gradient updates. Rollout and
learning never interleave.
"""
from __future__ import annotations

import csv
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..neurosim import FesEnv, NonFiniteStateError, reward
from ..sacagent import (
    SacAgent, SacConfig, TempReplayBuffer, UpdateDiagnostics, build_agent_transitions, hindsight_relabel,
    normalize_target, update,
)
from ..staterep import StateRepUnit
from .pid import IntensityQuantizer

log = logging.getLogger(__name__)

EPISODE_STEPS = 1800
HOLD_STEPS = 50


@dataclass
class EpisodeTrace:
    observations: np.ndarray  # (T+1, obs_dim); row t is seen before action t
    actions: np.ndarray  # (T, channels)
    targets: np.ndarray  # (T,), target in force while action t is applied
    rewards: np.ndarray  # (T,), reward(observations[t+1], targets[t])
    capacities: np.ndarray  # (T+1, muscles)
    metadata: dict = field(default_factory=dict)
    valid: bool = True
    hidden: np.ndarray | None = None  # online hidden states h_0..h_{T-1}, if recorded

    def __len__(self) -> int:
        return len(self.actions)

    def abs_errors(self) -> np.ndarray:
        return np.abs(self.targets - self.observations[1:len(self) + 1, 0])

    def to_csv(self, path, env: FesEnv) -> None:
        T = len(self)
        write_trace_csv(path, env, self.targets * env.display_scale,
                        self.observations[1:T + 1, 0] * env.display_scale, self.actions,
                        self.capacities[1:T + 1], self.rewards)


def write_trace_csv(path, env: FesEnv, targets, achieved, actions, capacities, rewards) -> None:
    """Per-step trace: values after each control step, angles/cadences in display units."""
    quantity = "cadence_rpm" if env.is_crank else "theta_deg"
    n_ch, n_m = np.shape(actions)[1], np.shape(capacities)[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time_s", quantity, "target"] + [f"u{i}" for i in range(n_ch)]
                   + [f"capacity_pct{i}" for i in range(n_m)] + ["reward"])
        for t in range(len(achieved)):
            w.writerow([t, _fmt((t + 1) * env.dt), _fmt(achieved[t]), _fmt(targets[t])]
                       + [_fmt(v) for v in actions[t]] + [_fmt(100.0 * v) for v in capacities[t]]
                       + [_fmt(rewards[t])])


def _fmt(v) -> str:
    return repr(float(v))


class TraceStore:
    """Raw traces kept across episodes, oldest evicted first."""

    def __init__(self, capacity: int = 100):
        self._traces: deque[EpisodeTrace] = deque(maxlen=capacity)

    def add(self, trace: EpisodeTrace) -> None:
        self._traces.append(trace)

    def __len__(self) -> int:
        return len(self._traces)

    def __iter__(self):
        return iter(self._traces)

    @property
    def traces(self) -> list[EpisodeTrace]:
        return list(self._traces)


@dataclass(frozen=True)
class TargetSchedule:
    target_range: tuple[float, float]
    hold: int = HOLD_STEPS

    def sample(self, n_steps: int, rng: np.random.Generator) -> np.ndarray:
        n_blocks = -(-n_steps // self.hold)
        levels = rng.uniform(*self.target_range, size=n_blocks)
        return np.repeat(levels, self.hold)[:n_steps]


Policy = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def run_episode(policy: Policy, env: FesEnv, schedule: TargetSchedule, unit: StateRepUnit,
                rng: np.random.Generator, n_steps: int = EPISODE_STEPS) -> EpisodeTrace:
    """Roll out one episode from the env's current state.

    ``policy(x, rng)`` receives x = h_t ++ normalized target_t. If the plant
    diverges the trace is truncated and marked invalid.
    """
    targets = schedule.sample(n_steps, rng)
    tnorm = normalize_target(targets, env.target_range)
    obs = env.observe()
    h = unit.initial_hidden()
    prev = np.zeros(env.action_dim)
    observations, actions, rewards, hidden = [obs], [], [], []
    capacities = [env.state.capacity.copy()]
    valid = True
    for t in range(n_steps):
        h = unit.encode_step(obs, prev, h)
        a = np.clip(np.asarray(policy(np.append(h, tnorm[t]), rng), dtype=float), 0.0, 1.0)
        try:
            obs = env.step(a)
        except NonFiniteStateError as exc:
            log.warning("episode truncated at step %d: %s", t, exc)
            valid = False
            break
        hidden.append(h)
        actions.append(a)
        observations.append(obs)
        rewards.append(reward(obs, targets[t]))
        capacities.append(env.state.capacity.copy())
        prev = a
    T = len(actions)
    return EpisodeTrace(
        observations=np.array(observations),
        actions=np.array(actions).reshape(T, env.action_dim),
        targets=targets[:T].copy(),
        rewards=np.array(rewards),
        capacities=np.array(capacities),
        metadata={"plant": env.plant_id},
        valid=valid,
        hidden=np.array(hidden).reshape(T, unit.hidden_size),
    )


def check_protocol(trace: EpisodeTrace, n_steps: int = EPISODE_STEPS, hold: int = HOLD_STEPS) -> None:
    """Assert the episode protocol on a complete trace."""
    if not trace.valid:
        return
    if len(trace) != n_steps:
        raise AssertionError(f"trace has {len(trace)} steps, expected {n_steps}")
    changes = np.flatnonzero(np.diff(trace.targets)) + 1
    if np.any(changes % hold):
        raise AssertionError(f"target changed off the {hold}-step grid at {changes[changes % hold != 0]}")


# ------------------------------------------------------------------ training


@dataclass
class StateRepConfig:
    hidden_size: int = 20
    lr: float = 1e-3
    epochs_per_episode: int = 1
    bptt_window: int = 50
    batch_traces: int = 16


@dataclass
class TrainConfig:
    plant: str = "vertical_arm"
    episodes: int = 30
    seed: int = 0
    episode_steps: int = EPISODE_STEPS
    hold_steps: int = HOLD_STEPS
    trace_store: int = 100
    quantize_actions: bool = False
    staterep: StateRepConfig = field(default_factory=StateRepConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    params_path: str | None = None


@dataclass
class EpisodeStats:
    episode: int
    mean_abs_error: float  # display units (deg or rpm)
    actor_loss: float
    critic_loss: float
    alpha: float
    staterep_loss: float
    buffer_size: int
    real_transitions: int
    valid: bool
    wall_time: float


@dataclass
class TrainResult:
    agent: SacAgent
    unit: StateRepUnit
    curve: list[float]
    stats: list[EpisodeStats]
    env: FesEnv


def make_env(config: TrainConfig) -> FesEnv:
    quant = IntensityQuantizer() if config.quantize_actions else None
    return FesEnv.from_id(config.plant, config.params_path, action_filter=quant)


def build_learners(config: TrainConfig, env: FesEnv,
                   rng: np.random.Generator) -> tuple[StateRepUnit, SacAgent]:
    s = config.staterep
    unit = StateRepUnit.for_env(env, rng, hidden_size=s.hidden_size, lr=s.lr,
                                bptt_window=s.bptt_window, batch_traces=s.batch_traces)
    agent = SacAgent(s.hidden_size + 1, env.action_dim, rng, config.sac)
    return unit, agent


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "env", "rollout", "learn")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def train_controller(config: TrainConfig,
                     progress: Callable[[EpisodeStats], None] | None = None) -> TrainResult:
    streams = rng_streams(config.seed)
    env = make_env(config)
    unit, agent = build_learners(config, env, streams["init"])
    schedule = TargetSchedule(env.target_range, config.hold_steps)
    store = TraceStore(config.trace_store)
    buffer = TempReplayBuffer(capacity=2 * config.trace_store * config.episode_steps)
    curve, stats = [], []
    for ep in range(config.episodes):
        t0 = time.perf_counter()
        state = env.reset_with_sampled_fatigue(streams["env"])
        trace = run_episode(lambda x, g: agent.act(x, g), env, schedule, unit, streams["rollout"],
                            config.episode_steps)
        trace.metadata.update(episode=ep, seed=config.seed,
                              initial_fatigue=state.fatigued.tolist(),
                              fatigue_rates=state.fatigue_rates.tolist())
        check_protocol(trace, config.episode_steps, config.hold_steps)
        err = float(np.mean(trace.abs_errors()) * env.display_scale) if len(trace) else float("nan")
        curve.append(err)
        if len(trace) >= 2:
            store.add(trace)

        sr_hist = unit.train_supervised(store.traces, config.staterep.epochs_per_episode,
                                        streams["learn"])
        buffer.clear()
        real = 0
        for tr, H in zip(store.traces, unit.regenerate_many(store.traces)):
            part = build_agent_transitions(H, tr, env.target_range)
            buffer.add(part)
            buffer.add(build_agent_transitions(H, hindsight_relabel(tr), env.target_range))
            real += len(part)
        if len(buffer):
            diag = update(agent, buffer, config.sac.updates_per_episode, config.sac.batch_size,
                          streams["learn"])
        else:
            diag = UpdateDiagnostics(alpha=agent.alpha)
        st = EpisodeStats(ep + 1, err, diag.actor_loss, diag.critic_loss, diag.alpha,
                          sr_hist[-1] if sr_hist else float("nan"), len(buffer), real,
                          trace.valid, time.perf_counter() - t0)
        stats.append(st)
        if progress is not None:
            progress(st)
    return TrainResult(agent, unit, curve, stats, env)


def write_curve(path, stats: list[EpisodeStats]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "mean_abs_error"])
        for s in stats:
            w.writerow([s.episode, _fmt(s.mean_abs_error)])


def write_diagnostics(path, stats: list[EpisodeStats]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "actor_loss", "critic_loss", "alpha", "mean_abs_error",
                    "staterep_loss", "buffer_size"])
        for s in stats:
            w.writerow([s.episode, _fmt(s.actor_loss), _fmt(s.critic_loss), _fmt(s.alpha),
                        _fmt(s.mean_abs_error), _fmt(s.staterep_loss), s.buffer_size])
