"""Soft actor-critic on (hidden state, normalized target) inputs.

Actions live in [0, 1]: a = 0.5 * (tanh(u) + 1) with u ~ N(mu, sigma). The
log-density of a includes the Jacobian of that squash. Agent transitions are
rebuilt from regenerated hidden states after every episode and held in a
temporary buffer that is cleared before each rebuild.
"""
from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamo import Adam, DenseParams, NonFiniteGradientError, Tape, Tensor, backward, ops, parameter
from .neurosim.env import reward as tracking_reward

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


class UpdateDivergedError(FloatingPointError):
    """A loss or gradient went non-finite during an update run."""

    def __init__(self, batch_index: int, what: str):
        super().__init__(f"non-finite {what} at update batch {batch_index}")
        self.batch_index = batch_index


# ---------------------------------------------------------------- networks


def _squash_log_jacobian(u):
    """log |da/du| for a = (tanh(u) + 1) / 2, written to stay finite for large |u|."""
    if isinstance(u, Tensor):
        return _LOG2 - 2.0 * u - 2.0 * ops.softplus(-2.0 * u)
    return _LOG2 - 2.0 * u - 2.0 * np.logaddexp(0.0, -2.0 * u)


def squash(u):
    return 0.5 * (np.tanh(u) + 1.0)


class GaussianPolicy:
    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 width: int = 64, name: str = "policy"):
        self.state_dim, self.action_dim = state_dim, action_dim
        self.l1 = DenseParams.init(state_dim, width, "tanh", rng, f"{name}.l1")
        self.l2 = DenseParams.init(width, width, "tanh", rng, f"{name}.l2")
        self.mean_head = DenseParams.init(width, action_dim, "identity", rng, f"{name}.mean")
        self.log_std_head = DenseParams.init(width, action_dim, "identity", rng, f"{name}.log_std")

    def tensors(self) -> list[Tensor]:
        return (self.l1.tensors() + self.l2.tensors() + self.mean_head.tensors()
                + self.log_std_head.tensors())

    def forward(self, x):
        """(mu, log_std) as recorded tensors."""
        z = self.l2(self.l1(x))
        return self.mean_head(z), ops.clip(self.log_std_head(z), LOG_STD_MIN, LOG_STD_MAX)

    def forward_np(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = self.l2.apply(self.l1.apply(x))
        return (self.mean_head.apply(z),
                np.clip(self.log_std_head.apply(z), LOG_STD_MIN, LOG_STD_MAX))

    def rsample(self, x, noise: np.ndarray):
        """Reparameterized sample: (action, log_prob) as tensors, given standard-normal noise."""
        mu, log_std = self.forward(x)
        u = mu + ops.exp(log_std) * noise
        per_dim = (-0.5 * noise * noise - _HALF_LOG_2PI) - log_std - _squash_log_jacobian(u)
        return 0.5 * (ops.tanh(u) + 1.0), ops.sum(per_dim, axis=-1)

    def sample_np(self, x: np.ndarray, noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu, log_std = self.forward_np(x)
        u = mu + np.exp(log_std) * noise
        per_dim = -0.5 * noise * noise - _HALF_LOG_2PI - log_std - _squash_log_jacobian(u)
        return squash(u), per_dim.sum(axis=-1)

    def log_prob(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Density of a given action in (0, 1); used for checks, not training."""
        mu, log_std = self.forward_np(x)
        u = np.arctanh(2.0 * np.asarray(a, float) - 1.0)
        noise = (u - mu) / np.exp(log_std)
        per_dim = -0.5 * noise * noise - _HALF_LOG_2PI - log_std - _squash_log_jacobian(u)
        return per_dim.sum(axis=-1)


def sample_action(policy: GaussianPolicy, x, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=float)
    a, logp = policy.sample_np(x, rng.standard_normal(policy.action_dim))
    return a, float(logp)


def act_deterministic(policy: GaussianPolicy, x) -> np.ndarray:
    mu, _ = policy.forward_np(np.asarray(x, dtype=float))
    return squash(mu)


class QNetwork:
    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 width: int = 64, name: str = "q"):
        self.layers = [
            DenseParams.init(state_dim + action_dim, width, "relu", rng, f"{name}.l1"),
            DenseParams.init(width, width, "relu", rng, f"{name}.l2"),
            DenseParams.init(width, 1, "identity", rng, f"{name}.out"),
        ]

    def tensors(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer.tensors()]

    def __call__(self, x, a) -> Tensor:
        z = ops.concat([x, a], axis=-1)
        for layer in self.layers:
            z = layer(z)
        return ops.sum(z, axis=-1)

    def apply(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        z = np.concatenate([x, a], axis=-1)
        for layer in self.layers:
            z = layer.apply(z)
        return z[..., 0]


class TwinCritics:
    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 width: int = 64, tau: float = 0.005):
        self.q1 = QNetwork(state_dim, action_dim, rng, width, "critic.q1")
        self.q2 = QNetwork(state_dim, action_dim, rng, width, "critic.q2")
        self.target1 = copy.deepcopy(self.q1)
        self.target2 = copy.deepcopy(self.q2)
        for net, tag in ((self.target1, "q1"), (self.target2, "q2")):
            for t in net.tensors():
                t.name = t.name.replace(f"critic.{tag}", f"critic.target_{tag}")
                t.requires_grad = False
        self.tau = tau

    def tensors(self) -> list[Tensor]:
        return self.q1.tensors() + self.q2.tensors()

    def target_tensors(self) -> list[Tensor]:
        return self.target1.tensors() + self.target2.tensors()

    def target_min(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        return np.minimum(self.target1.apply(x, a), self.target2.apply(x, a))

    def polyak(self) -> None:
        """target <- (1 - tau) * target + tau * online, in place."""
        for online, target in zip(self.tensors(), self.target_tensors()):
            target.value *= 1.0 - self.tau
            target.value += self.tau * online.value


# ---------------------------------------------------------------- transitions


@dataclass
class AgentTransition:
    x: np.ndarray
    a: np.ndarray
    r: float
    x_next: np.ndarray
    done: bool


@dataclass
class TransitionBatch:
    """Column-stored agent transitions."""

    x: np.ndarray
    a: np.ndarray
    r: np.ndarray
    x_next: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.r)

    def __getitem__(self, i: int) -> AgentTransition:
        return AgentTransition(self.x[i], self.a[i], float(self.r[i]), self.x_next[i],
                               bool(self.done[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def normalize_target(target, target_range: tuple[float, float]):
    lo, hi = target_range
    return 2.0 * (np.asarray(target, dtype=float) - lo) / (hi - lo) - 1.0


def hindsight_relabel(trace):
    """Copy of a trace whose target at every step is the outcome actually reached.

    target_t is set to the controlled coordinate of the observation that
    followed action t, so every recomputed reward is exactly zero.
    """
    obs = np.asarray(trace.observations)
    T = len(trace.actions)
    targets = obs[1:T + 1, 0].copy()
    rewards = np.array([tracking_reward(obs[t + 1], targets[t]) for t in range(T)])
    meta = dict(getattr(trace, "metadata", {}) or {})
    meta["relabeled"] = True
    return dataclasses.replace(trace, targets=targets, rewards=rewards, metadata=meta)


def build_agent_transitions(hidden: np.ndarray, trace,
                            target_range: tuple[float, float]) -> TransitionBatch:
    """x_t = h_t ++ normalized target_t; pairs (x_t, x_{t+1}) for t < T - 1."""
    hidden = np.asarray(hidden, dtype=float)
    T = len(trace.actions)
    if len(hidden) != T:
        raise ValueError(f"{len(hidden)} hidden states for a trace of {T} steps")
    if T < 2:
        empty = np.zeros((0, hidden.shape[1] + 1)) if hidden.ndim == 2 else np.zeros((0, 1))
        return TransitionBatch(empty, np.zeros((0, np.asarray(trace.actions).shape[-1])),
                               np.zeros(0), empty.copy(), np.zeros(0, dtype=bool))
    tgt = normalize_target(np.asarray(trace.targets[:T]), target_range)[:, None]
    X = np.concatenate([hidden, tgt], axis=1)
    done = np.zeros(T - 1, dtype=bool)
    done[-1] = True
    return TransitionBatch(X[:-1], np.asarray(trace.actions[:T - 1], dtype=float),
                           np.asarray(trace.rewards[:T - 1], dtype=float), X[1:], done)


class TempReplayBuffer:
    """Flat transition store, cleared and refilled at every episode end."""

    def __init__(self, capacity: int = 400_000):
        self.capacity = capacity
        self._parts: list[TransitionBatch] = []
        self._data: TransitionBatch | None = None

    def clear(self) -> None:
        self._parts, self._data = [], None

    def add(self, batch: TransitionBatch) -> None:
        if len(self) + len(batch) > self.capacity:
            raise ValueError(f"temporary buffer capacity {self.capacity} exceeded")
        self._parts.append(batch)
        self._data = None

    def __len__(self) -> int:
        return sum(len(p) for p in self._parts)

    @property
    def data(self) -> TransitionBatch:
        if self._data is None:
            if not self._parts:
                raise ValueError("temporary buffer is empty")
            self._data = TransitionBatch(*(np.concatenate([getattr(p, f.name) for p in self._parts])
                                           for f in dataclasses.fields(TransitionBatch)))
        return self._data

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        d = self.data
        idx = rng.integers(0, len(d), size=batch_size)
        return TransitionBatch(d.x[idx], d.a[idx], d.r[idx], d.x_next[idx], d.done[idx])


# ---------------------------------------------------------------- agent


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    updates_per_episode: int = 400
    width: int = 64
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    init_alpha: float = 0.1
    # actions span [0, 1], half the usual [-1, 1], so the entropy target sits lower
    target_entropy_per_dim: float = -3.0
    clip_norm: float | None = 5.0


@dataclass
class UpdateDiagnostics:
    critic_loss: float = math.nan
    actor_loss: float = math.nan
    alpha: float = math.nan
    entropy: float = math.nan
    history: list[tuple[float, float, float]] = field(default_factory=list)


class SacAgent:
    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 config: SacConfig | None = None):
        self.config = config or SacConfig()
        c = self.config
        self.state_dim, self.action_dim = state_dim, action_dim
        self.policy = GaussianPolicy(state_dim, action_dim, rng, c.width)
        self.critics = TwinCritics(state_dim, action_dim, rng, c.width, c.tau)
        self.log_alpha = parameter(np.array(math.log(c.init_alpha)), "alpha.log")
        self.target_entropy = c.target_entropy_per_dim * action_dim
        self.actor_opt = Adam(self.policy.tensors(), lr=c.actor_lr, clip_norm=c.clip_norm)
        self.critic_opt = Adam(self.critics.tensors(), lr=c.critic_lr, clip_norm=c.clip_norm)
        self.alpha_opt = Adam([self.log_alpha], lr=c.alpha_lr, clip_norm=None)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.value))

    def act(self, x, rng: np.random.Generator | None = None) -> np.ndarray:
        """Stochastic action when an rng is given, otherwise the deterministic one."""
        if rng is None:
            return act_deterministic(self.policy, x)
        return sample_action(self.policy, x, rng)[0]

    def critic_targets(self, batch: TransitionBatch, noise: np.ndarray) -> np.ndarray:
        a2, logp2 = self.policy.sample_np(batch.x_next, noise)
        soft_q = self.critics.target_min(batch.x_next, a2) - self.alpha * logp2
        return batch.r + self.config.gamma * (~batch.done) * soft_q

    def tensors(self) -> list[Tensor]:
        return (self.policy.tensors() + self.critics.tensors() + self.critics.target_tensors()
                + [self.log_alpha])

    def state_dict(self) -> dict[str, np.ndarray]:
        return {t.name: t.value.copy() for t in self.tensors()}

    def load_state_dict(self, d: dict[str, np.ndarray]) -> None:
        for t in self.tensors():
            if d[t.name].shape != t.value.shape:
                raise ValueError(f"checkpoint tensor {t.name} has shape {d[t.name].shape}, "
                                 f"expected {t.value.shape}")
            t.value[...] = d[t.name]

    def optimizers(self) -> dict:
        return {"actor": self.actor_opt.state, "critic": self.critic_opt.state,
                "alpha": self.alpha_opt.state}


def _step(opt: Adam, grads, batch_index: int) -> None:
    try:
        opt.step(grads)
    except NonFiniteGradientError as exc:
        raise UpdateDivergedError(batch_index, f"gradient ({exc.tensor_name})") from exc


def update(agent: SacAgent, buffer: TempReplayBuffer, n_updates: int, batch_size: int,
           rng: np.random.Generator) -> UpdateDiagnostics:
    """Run n_updates mini-batch SAC steps; raises UpdateDivergedError on non-finite values."""
    if len(buffer) == 0:
        raise ValueError("cannot update from an empty buffer")
    diag = UpdateDiagnostics(alpha=agent.alpha)
    critics, policy = agent.critics, agent.policy
    critic_params, policy_params = critics.tensors(), policy.tensors()
    for i in range(n_updates):
        b = buffer.sample(batch_size, rng)
        y = agent.critic_targets(b, rng.standard_normal((batch_size, agent.action_dim)))

        with Tape() as tape:
            l_c = (ops.mean(ops.square(critics.q1(b.x, b.a) - y))
                   + ops.mean(ops.square(critics.q2(b.x, b.a) - y)))
        if not np.isfinite(l_c.value):
            raise UpdateDivergedError(i, "critic loss")
        _step(agent.critic_opt, backward(tape, l_c, critic_params), i)

        alpha = agent.alpha
        noise = rng.standard_normal((batch_size, agent.action_dim))
        with Tape() as tape:
            a_pi, logp = policy.rsample(b.x, noise)
            q = ops.minimum(critics.q1(b.x, a_pi), critics.q2(b.x, a_pi))
            l_a = ops.mean(alpha * logp - q)
        if not np.isfinite(l_a.value):
            raise UpdateDivergedError(i, "actor loss")
        _step(agent.actor_opt, backward(tape, l_a, policy_params), i)

        gap = logp.value + agent.target_entropy
        with Tape() as tape:
            l_t = ops.mean(-1.0 * agent.log_alpha * gap)
        if not np.isfinite(l_t.value):
            raise UpdateDivergedError(i, "temperature loss")
        _step(agent.alpha_opt, backward(tape, l_t, [agent.log_alpha]), i)

        critics.polyak()
        diag.history.append((float(l_c.value), float(l_a.value), agent.alpha))
        diag.critic_loss, diag.actor_loss = float(l_c.value), float(l_a.value)
        diag.entropy = float(-np.mean(logp.value))
    diag.alpha = agent.alpha
    return diag


def rebuild_buffer(buffer: TempReplayBuffer, parts: Sequence[TransitionBatch]) -> None:
    buffer.clear()
    for p in parts:
        buffer.add(p)


__all__ = [
    "AgentTransition", "GaussianPolicy", "QNetwork", "SacAgent", "SacConfig", "TempReplayBuffer",
    "TransitionBatch", "TwinCritics", "UpdateDiagnostics", "UpdateDivergedError",
    "act_deterministic", "build_agent_transitions", "hindsight_relabel", "normalize_target",
    "rebuild_buffer", "sample_action", "squash", "update",
]
