"""Adam optimizer over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gradalarm.errors import ConfigError, NumericError

from .params import FlatParams


@dataclass
class AdamState:
    """First/second moment estimates plus hyperparameters.

    ``m`` and ``v`` start at zero; ``step_count`` increments by exactly one
    per update and drives the bias correction.
    """

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: FlatParams, lr: float = 0.001, **kwargs) -> AdamState:
        n = len(params)
        return cls(
            m=np.zeros(n, dtype=params.dtype),
            v=np.zeros(n, dtype=params.dtype),
            lr=lr,
            **kwargs,
        )


def adam_step(params: FlatParams, grad: np.ndarray, state: AdamState) -> tuple[FlatParams, AdamState]:
    """One in-place Adam update with bias correction.

    Raises NumericError on non-finite gradients instead of corrupting the
    parameters. Returns the mutated ``(params, state)`` for chaining.
    """
    grad = np.asarray(grad)
    if grad.shape != params.values.shape:
        raise ConfigError(
            f"gradient has shape {grad.shape}, parameters have {params.values.shape}"
        )
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient passed to adam_step")

    state.step_count += 1
    t = state.step_count
    state.m[:] = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v[:] = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    params.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
