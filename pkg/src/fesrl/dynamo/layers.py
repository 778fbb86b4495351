"""Dense layers and the GRU cell as fused tape primitives.

Both accept a single vector or a (batch, features) matrix. The GRU uses the
convention where the update gate weighs the candidate:

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    c  = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * c
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, Tensor, _sigmoid, as_tensor, parameter, record

ACTIVATIONS = ("identity", "tanh", "relu", "sigmoid")


def _activate(kind: str, pre: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return pre
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "sigmoid":
        return _sigmoid(pre)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(kind: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return np.ones_like(pre)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "relu":
        return (pre > 0).astype(DTYPE)
    return out * (1.0 - out)


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class DenseParams:
    weights: Tensor  # (out, in)
    bias: Tensor  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.value.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator,
             name: str = "dense") -> "DenseParams":
        return cls(
            parameter(uniform_fan_in(rng, (n_out, n_in), n_in), f"{name}.W"),
            parameter(uniform_fan_in(rng, (n_out,), n_in), f"{name}.b"),
            activation,
        )

    @classmethod
    def zeros(cls, n_in: int, n_out: int, activation: str = "identity",
              name: str = "dense") -> "DenseParams":
        return cls(parameter(np.zeros((n_out, n_in)), f"{name}.W"),
                   parameter(np.zeros(n_out), f"{name}.b"), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.weights, self.bias]

    def __call__(self, x) -> Tensor:
        return dense_forward(self, x)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on raw arrays; never records."""
        return _activate(self.activation, x @ self.weights.value.T + self.bias.value)


def dense_forward(p: DenseParams, x) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != p.n_in:
        raise ValueError(f"dense input has {x.shape[-1]} features, layer expects {p.n_in}")
    W, b = p.weights.value, p.bias.value
    pre = x.value @ W.T + b
    out = _activate(p.activation, pre)

    def back(g):
        dpre = g * _activation_grad(p.activation, pre, out)
        if dpre.ndim == 1:
            dW = np.outer(dpre, x.value)
            db = dpre
        else:
            dW = dpre.T @ x.value
            db = dpre.sum(axis=0)
        return dpre @ W, dW, db

    return record(out, (x, p.weights, p.bias), back)


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")

    def __post_init__(self):
        hid, inp = self.W_z.shape
        for name in self.NAMES:
            t = getattr(self, name)
            expected = (hid, inp) if name[0] == "W" else (hid, hid) if name[0] == "U" else (hid,)
            if t.shape != expected:
                raise ValueError(f"GRU tensor {name} has shape {t.shape}, expected {expected}")

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
             name: str = "gru") -> "GruParams":
        shapes = {"W": (hidden_size, input_size), "U": (hidden_size, hidden_size), "b": (hidden_size,)}
        fan_in = {"W": input_size, "U": hidden_size, "b": hidden_size}
        return cls(**{
            n: parameter(uniform_fan_in(rng, shapes[n[0]], fan_in[n[0]]), f"{name}.{n}")
            for n in cls.NAMES
        })

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, name: str = "gru") -> "GruParams":
        shapes = {"W": (hidden_size, input_size), "U": (hidden_size, hidden_size), "b": (hidden_size,)}
        return cls(**{n: parameter(np.zeros(shapes[n[0]]), f"{name}.{n}") for n in cls.NAMES})

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    def tensors(self) -> list[Tensor]:
        return [getattr(self, n) for n in self.NAMES]

    def __call__(self, x, h) -> Tensor:
        return gru_step(self, x, h)

    def apply(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        return _gru_values(self, x, h)[-1]


def _gru_values(p: GruParams, x: np.ndarray, h: np.ndarray):
    z = _sigmoid(x @ p.W_z.value.T + h @ p.U_z.value.T + p.b_z.value)
    r = _sigmoid(x @ p.W_r.value.T + h @ p.U_r.value.T + p.b_r.value)
    rh = r * h
    c = np.tanh(x @ p.W_h.value.T + rh @ p.U_h.value.T + p.b_h.value)
    return z, r, rh, c, (1.0 - z) * h + z * c


def gru_step(p: GruParams, x, h) -> Tensor:
    x, h = as_tensor(x), as_tensor(h)
    if x.shape[-1] != p.input_size:
        raise ValueError(f"GRU input has {x.shape[-1]} features, cell expects {p.input_size}")
    if h.shape[-1] != p.hidden_size:
        raise ValueError(f"GRU hidden has {h.shape[-1]} entries, cell expects {p.hidden_size}")
    z, r, rh, c, out = _gru_values(p, x.value, h.value)

    def back(g):
        xv, hv = x.value, h.value
        vec = g.ndim == 1
        if vec:
            g, xv, hv = g[None], xv[None], hv[None]
            zz, rr, rrh, cc = z[None], r[None], rh[None], c[None]
        else:
            zz, rr, rrh, cc = z, r, rh, c
        d_az = g * (cc - hv) * zz * (1.0 - zz)
        d_ah = g * zz * (1.0 - cc * cc)
        d_rh = d_ah @ p.U_h.value
        d_ar = d_rh * hv * rr * (1.0 - rr)
        dh = g * (1.0 - zz) + d_rh * rr + d_az @ p.U_z.value + d_ar @ p.U_r.value
        dx = d_az @ p.W_z.value + d_ar @ p.W_r.value + d_ah @ p.W_h.value
        grads = [
            dx[0] if vec else dx,
            dh[0] if vec else dh,
            d_az.T @ xv, d_ar.T @ xv, d_ah.T @ xv,
            d_az.T @ hv, d_ar.T @ hv, d_ah.T @ rrh,
            d_az.sum(axis=0), d_ar.sum(axis=0), d_ah.sum(axis=0),
        ]
        return grads

    return record(out, (x, h, *p.tensors()), back)
