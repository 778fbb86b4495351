from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is called with no arguments and must read the current values of
    ``params``; entries are perturbed in place and restored afterwards.
    Relative error is |analytic - numeric| / max(1, |numeric|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss, params)

    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        analytic = grads[p].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(f().value)
            flat[i] = orig - step
            down = float(f().value)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst
