"""Single-file parameter checkpoints.

Layout (an uncompressed ``.npz`` archive):

    format_version        int64 scalar, currently 1
    meta                  uint8 array holding UTF-8 JSON (free-form metadata)
    t/<name>              float64 tensor, shape preserved
    o/<opt>/hyper         float64 [lr, beta1, beta2, eps, clip_norm or NaN]
    o/<opt>/step          int64 scalar
    o/<opt>/m/<k>         first-moment accumulator for the k-th parameter
    o/<opt>/v/<k>         second-moment accumulator for the k-th parameter

Float arrays are stored verbatim, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import OptimizerState

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    optimizers: dict[str, OptimizerState] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    arrays: dict[str, np.ndarray] = {
        "format_version": np.array(FORMAT_VERSION, dtype=np.int64),
        "meta": np.frombuffer(json.dumps(ckpt.meta, sort_keys=True).encode(), dtype=np.uint8),
    }
    for name, value in ckpt.tensors.items():
        arrays[f"t/{name}"] = np.asarray(value, dtype=np.float64)
    for opt_name, st in ckpt.optimizers.items():
        clip = np.nan if st.clip_norm is None else st.clip_norm
        arrays[f"o/{opt_name}/hyper"] = np.array(
            [st.learning_rate, st.beta1, st.beta2, st.eps, clip], dtype=np.float64)
        arrays[f"o/{opt_name}/step"] = np.array(st.step_count, dtype=np.int64)
        for k, (m, v) in enumerate(zip(st.m, st.v)):
            arrays[f"o/{opt_name}/m/{k}"] = m
            arrays[f"o/{opt_name}/v/{k}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        keys = set(archive.files)
        if "format_version" not in keys:
            raise CheckpointError(f"{path} is not a checkpoint (no format_version)")
        version = int(archive["format_version"])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        meta = json.loads(archive["meta"].tobytes().decode())
        tensors = {k[2:]: archive[k] for k in sorted(keys) if k.startswith("t/")}
        optimizers: dict[str, OptimizerState] = {}
        opt_names = sorted({k.split("/")[1] for k in keys if k.startswith("o/")})
        for name in opt_names:
            lr, b1, b2, eps, clip = archive[f"o/{name}/hyper"]
            n = sum(1 for k in keys if k.startswith(f"o/{name}/m/"))
            optimizers[name] = OptimizerState(
                float(lr), float(b1), float(b2), float(eps),
                None if np.isnan(clip) else float(clip),
                int(archive[f"o/{name}/step"]),
                [archive[f"o/{name}/m/{k}"] for k in range(n)],
                [archive[f"o/{name}/v/{k}"] for k in range(n)],
            )
    return Checkpoint(tensors, optimizers, meta)
