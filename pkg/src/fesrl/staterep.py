"""GRU state-representation unit.

At step t the GRU consumes the normalized observation s_t concatenated with
the previous command a_{t-1} (zeros at t = 0) and returns h_t, which the agent
uses as its state. During supervised training a dense head maps h_t to a
prediction of s_{t+1}. Traces are duck-typed: anything with ``observations``
(T+1, obs_dim) and ``actions`` (T, action_dim) arrays works.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamo import Adam, DenseParams, GruParams, Tape, backward, ops


@dataclass(frozen=True)
class Normalizer:
    """Fixed affine map x -> (x - mean) / scale, per channel."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.scale) <= 0):
            raise ValueError("normalization scales must be positive")

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.mean


def normalizers_for(env) -> tuple[Normalizer, Normalizer]:
    """Observation and action normalizers derived from a plant's ranges."""
    plant = env.plant
    if env.is_crank:
        lo, hi = plant.target_range
        obs = Normalizer(np.array([0.5 * (lo + hi), 0.0, 0.0]), np.array([0.5 * (hi - lo) + 2.0, 1.0, 1.0]))
    else:
        mid = 0.5 * (plant.theta_min + plant.theta_max)
        half = 0.5 * (plant.theta_max - plant.theta_min)
        obs = Normalizer(np.array([mid, 0.0]), np.array([half, 5.0]))
    act = Normalizer(np.full(env.action_dim, 0.5), np.full(env.action_dim, 0.5))
    return obs, act


class StateRepUnit:
    def __init__(self, obs_norm: Normalizer, act_norm: Normalizer, rng: np.random.Generator,
                 hidden_size: int = 20, lr: float = 1e-3, bptt_window: int = 50,
                 batch_traces: int = 16, clip_norm: float | None = 5.0):
        self.obs_norm = obs_norm
        self.act_norm = act_norm
        self.obs_dim = len(obs_norm.mean)
        self.action_dim = len(act_norm.mean)
        self.hidden_size = hidden_size
        self.bptt_window = bptt_window
        self.batch_traces = batch_traces
        self.gru = GruParams.init(self.obs_dim + self.action_dim, hidden_size, rng, "staterep.gru")
        self.head = DenseParams.init(hidden_size, self.obs_dim, "identity", rng, "staterep.head")
        self.optimizer = Adam(self.tensors(), lr=lr, clip_norm=clip_norm)

    @classmethod
    def for_env(cls, env, rng: np.random.Generator, **kwargs) -> "StateRepUnit":
        obs_norm, act_norm = normalizers_for(env)
        return cls(obs_norm, act_norm, rng, **kwargs)

    def tensors(self):
        return self.gru.tensors() + self.head.tensors()

    def initial_hidden(self, batch: int | None = None) -> np.ndarray:
        shape = (self.hidden_size,) if batch is None else (batch, self.hidden_size)
        return np.zeros(shape)

    def _inputs(self, obs, prev_action) -> np.ndarray:
        return np.concatenate([self.obs_norm.normalize(obs), self.act_norm.normalize(prev_action)],
                              axis=-1)

    def encode_step(self, obs, prev_action, h) -> np.ndarray:
        obs, prev_action = np.asarray(obs, float), np.asarray(prev_action, float)
        if obs.shape[-1] != self.obs_dim or prev_action.shape[-1] != self.action_dim:
            raise ValueError(f"expected obs dim {self.obs_dim} and action dim {self.action_dim}, "
                             f"got {obs.shape[-1]} and {prev_action.shape[-1]}")
        return self.gru.apply(self._inputs(obs, prev_action), np.asarray(h, float))

    def predict_next(self, h) -> np.ndarray:
        return self.obs_norm.denormalize(self.head.apply(np.asarray(h, float)))

    # -------------------------------------------------------------- sequences

    def sequence_inputs(self, trace) -> np.ndarray:
        """(T, obs+action) GRU inputs for a trace: (s_t, a_{t-1}) with a_{-1} = 0."""
        T = len(trace.actions)
        prev = np.zeros((T, self.action_dim))
        if T > 1:
            prev[1:] = trace.actions[:-1]
        return self._inputs(trace.observations[:T], prev)

    def regenerate_hidden(self, trace) -> np.ndarray:
        """Hidden states h_0..h_{T-1} for a stored trace, from a zero carry.

        Runs the same single-row computation as online encoding, so with
        unchanged parameters the result equals the rollout's states bit for bit.
        """
        X = self.sequence_inputs(trace)
        H = np.empty((len(X), self.hidden_size))
        h = self.initial_hidden()
        for t in range(len(X)):
            h = self.gru.apply(X[t], h)
            H[t] = h
        return H

    def regenerate_many(self, traces: Sequence) -> list[np.ndarray]:
        """Batched regeneration across traces (equal to the single path up to rounding)."""
        out: list[np.ndarray | None] = [None] * len(traces)
        for T, idx in _group_by_length(traces).items():
            X = np.stack([self.sequence_inputs(traces[i]) for i in idx], axis=1)  # (T, B, in)
            H = np.empty((T, len(idx), self.hidden_size))
            h = self.initial_hidden(len(idx))
            for t in range(T):
                h = self.gru.apply(X[t], h)
                H[t] = h
            for j, i in enumerate(idx):
                out[i] = H[:, j]
        return out

    # -------------------------------------------------------------- training

    def prediction_mse(self, traces: Sequence) -> float:
        """Mean squared one-step prediction error in normalized units."""
        total, count = 0.0, 0
        for trace, H in zip(traces, self.regenerate_many(traces)):
            if len(H) == 0:
                continue
            pred = self.head.apply(H)
            err = pred - self.obs_norm.normalize(trace.observations[1:len(H) + 1])
            total += float(np.sum(err * err))
            count += err.size
        return total / max(count, 1)

    def train_supervised(self, episodes: Sequence, epochs: int,
                         rng: np.random.Generator) -> list[float]:
        """Truncated-BPTT regression of s_{t+1} from h_t; returns per-epoch mean loss."""
        if not episodes:
            raise ValueError("train_supervised needs at least one episode")
        for tr in episodes:
            if len(tr.actions) < 2 or len(tr.observations) != len(tr.actions) + 1:
                raise ValueError("each trace needs >= 2 steps and T+1 observations")
        groups = _group_by_length(episodes)
        data = {
            T: (np.stack([self.sequence_inputs(episodes[i]) for i in idx], axis=1),
                np.stack([self.obs_norm.normalize(episodes[i].observations[1:T + 1]) for i in idx],
                         axis=1))
            for T, idx in groups.items()
        }
        history = []
        for _ in range(epochs):
            losses, weights = [], []
            for T in sorted(data):
                X, Y = data[T]
                order = rng.permutation(X.shape[1])
                for start in range(0, len(order), self.batch_traces):
                    cols = order[start:start + self.batch_traces]
                    for loss, n in self._train_sequence(X[:, cols], Y[:, cols]):
                        losses.append(loss)
                        weights.append(n)
            history.append(float(np.average(losses, weights=weights)))
        return history

    def _train_sequence(self, X: np.ndarray, Y: np.ndarray):
        T, B, _ = X.shape
        h = self.initial_hidden(B)
        params = self.tensors()
        for start in range(0, T, self.bptt_window):
            stop = min(T, start + self.bptt_window)
            with Tape() as tape:
                hs = []
                ht = h
                for t in range(start, stop):
                    ht = self.gru(X[t], ht)
                    hs.append(ht)
                pred = self.head(ops.concat(hs, axis=0))  # rows ordered (t, trace)
                loss = ops.mean(ops.square(pred - Y[start:stop].reshape(-1, Y.shape[-1])))
            grads = backward(tape, loss, params)
            self.optimizer.step(grads)
            h = ht.value  # detached carry into the next window
            yield float(loss.value), (stop - start) * B

    # -------------------------------------------------------------- persistence

    def state_dict(self) -> dict[str, np.ndarray]:
        d = {t.name: t.value.copy() for t in self.tensors()}
        d["staterep.obs_mean"], d["staterep.obs_scale"] = self.obs_norm.mean, self.obs_norm.scale
        d["staterep.act_mean"], d["staterep.act_scale"] = self.act_norm.mean, self.act_norm.scale
        return d

    def load_state_dict(self, d: dict[str, np.ndarray]) -> None:
        for t in self.tensors():
            if d[t.name].shape != t.value.shape:
                raise ValueError(f"checkpoint tensor {t.name} has shape {d[t.name].shape}, "
                                 f"expected {t.value.shape}")
            t.value[...] = d[t.name]
        self.obs_norm = Normalizer(d["staterep.obs_mean"], d["staterep.obs_scale"])
        self.act_norm = Normalizer(d["staterep.act_mean"], d["staterep.act_scale"])


def _group_by_length(traces: Sequence) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, tr in enumerate(traces):
        groups.setdefault(len(tr.actions), []).append(i)
    return groups


def export_loss_history(path, history: Sequence[float]) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mse"])
        for i, v in enumerate(history, 1):
            w.writerow([i, repr(float(v))])


__all__ = ["Normalizer", "StateRepUnit", "export_loss_history", "normalizers_for"]
