"""Save and restore a trained (state-representation unit, agent) pair."""
from __future__ import annotations

import numpy as np
import yaml

from .. import __version__
from ..dynamo import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .episodes import TrainConfig, build_learners, make_env


def save_controller(path, config: TrainConfig, unit, agent, extra_meta: dict | None = None) -> None:
    from ..config import config_to_dict  # the config module imports this package

    tensors = {**unit.state_dict(), **agent.state_dict()}
    optimizers = {"staterep": unit.optimizer.state,
                  **{f"sac.{k}": v for k, v in agent.optimizers().items()}}
    meta = {"kind": "fesrl-controller", "version": __version__, "plant": config.plant,
            "config": config_to_dict(config), **(extra_meta or {})}
    save_checkpoint(path, Checkpoint(tensors, optimizers, meta))


def load_controller(path, params_path: str | None = None):
    """Return (config, env, unit, agent) rebuilt from a controller checkpoint."""
    from ..config import parse_config  # the config module imports this package

    ckpt = load_checkpoint(path)
    if ckpt.meta.get("kind") != "fesrl-controller":
        raise CheckpointError(f"{path} is not a controller checkpoint")
    config = parse_config(yaml.safe_dump(ckpt.meta["config"]), str(path))
    if params_path is not None:
        config.params_path = params_path
    env = make_env(config)
    unit, agent = build_learners(config, env, np.random.default_rng(0))
    try:
        unit.load_state_dict(ckpt.tensors)
        agent.load_state_dict(ckpt.tensors)
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from exc
    for name, opt in (("staterep", unit.optimizer),
                      *((f"sac.{k}", o) for k, o in
                        (("actor", agent.actor_opt), ("critic", agent.critic_opt),
                         ("alpha", agent.alpha_opt)))):
        if name in ckpt.optimizers:
            opt.state = ckpt.optimizers[name]
    return config, env, unit, agent
