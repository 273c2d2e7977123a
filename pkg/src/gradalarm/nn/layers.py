"""Layer primitives: dense, batch normalization, activations, losses.

All forward functions return ``(output, cache)`` where the cache carries
exactly what the matching backward function needs. Backward functions are
hand-derived; the test suite checks every one of them against central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gradalarm.errors import ConfigError, UsageError

LAYER_KINDS = ("dense", "lstm", "batchnorm_time_distributed")
ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear")

BXE_CLAMP = 1e-7  # probabilities are clamped to [BXE_CLAMP, 1 - BXE_CLAMP]
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.99  # running = momentum * running + (1 - momentum) * batch


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    ``activation`` applies to dense layers only; LSTM layers use the
    standard gate nonlinearities and batch-norm layers are affine.
    """

    kind: str
    in_dim: int
    out_dim: int
    activation: str = "linear"

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ConfigError(f"layer dims must be positive, got {self}")
        if self.kind == "batchnorm_time_distributed" and self.in_dim != self.out_dim:
            raise ConfigError("batchnorm requires in_dim == out_dim")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LayerSpec:
        return cls(d["kind"], int(d["in_dim"]), int(d["out_dim"]), d["activation"])


def activate(z: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "linear":
        return z
    raise ConfigError(f"unknown activation {name!r}")


def activation_grad(out: np.ndarray, z: np.ndarray, name: str) -> np.ndarray:
    """Derivative of the activation, expressed via its output where cheap."""
    if name == "relu":
        return (z > 0).astype(out.dtype)
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "tanh":
        return 1.0 - out * out
    if name == "linear":
        return np.ones_like(out)
    raise ConfigError(f"unknown activation {name!r}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp for large |z|.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --- dense -----------------------------------------------------------------


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, activation: str):
    """Affine map plus activation: ``y = act(x @ w + b)``."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ConfigError(
            f"dense expects input [B, {w.shape[0]}], got shape {tuple(x.shape)}"
        )
    z = x @ w + b
    y = activate(z, activation)
    return y, (x, w, z, y, activation)


def dense_backward(cache, dy: np.ndarray, skip_activation: bool = False):
    """Gradients of a dense layer.

    ``skip_activation`` treats ``dy`` as the gradient w.r.t. the
    pre-activation ``z`` instead of the output; used for a fused
    sigmoid/cross-entropy path that stays stable under saturation.
    """
    x, w, z, y, activation = cache
    dz = dy if skip_activation else dy * activation_grad(y, z, activation)
    dw = x.T @ dz
    db = dz.sum(axis=0)
    dx = dz @ w.T
    return dx, dw, db


def dense_backward_per_sample(cache, dy: np.ndarray, skip_activation: bool = False):
    """Per-sample parameter gradients: no summation over the batch.

    Returns ``(dx, dw_per_sample [B, in, out], db_per_sample [B, out])``.
    """
    x, w, z, y, activation = cache
    dz = dy if skip_activation else dy * activation_grad(y, z, activation)
    dw = np.einsum("bi,bo->bio", x, dz)
    dx = dz @ w.T
    return dx, dw, dz


# --- batch normalization ----------------------------------------------------


@dataclass
class BatchNormState:
    """Trainable scale/shift plus running statistics for one batch-norm layer.

    ``gamma``/``beta`` may be views into a flat parameter vector. Running
    statistics use the population (biased) variance convention and an
    exponential moving average.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    running_var: np.ndarray = field(default=None)  # type: ignore[assignment]
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    def __post_init__(self) -> None:
        dim = self.gamma.shape[0]
        if self.running_mean is None:
            self.running_mean = np.zeros(dim, dtype=self.gamma.dtype)
        if self.running_var is None:
            self.running_var = np.ones(dim, dtype=self.gamma.dtype)
        if self.epsilon <= 0:
            raise ConfigError("batchnorm epsilon must be positive")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError("batchnorm momentum must lie in (0, 1)")

    def stats_copy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.running_mean.copy(), self.running_var.copy()


def batchnorm_forward(
    state: BatchNormState, x: np.ndarray, mode: str, update_stats: bool = True
):
    """Normalize a batch per feature, then scale and shift.

    In train mode the batch's own (population) statistics are used;
    ``update_stats=False`` still normalizes that way but leaves the running
    statistics untouched, which is how batches of synthetic counterexamples
    are kept out of the running estimates. Infer mode always uses running
    statistics and never updates them.
    """
    if x.ndim != 2:
        raise ConfigError(f"batchnorm expects [B, D] input, got shape {tuple(x.shape)}")
    if x.shape[0] == 0:
        raise UsageError("batchnorm received an empty batch")
    if x.shape[1] != state.gamma.shape[0]:
        raise ConfigError(
            f"batchnorm dim mismatch: state has {state.gamma.shape[0]} features, "
            f"batch has {x.shape[1]}"
        )
    if mode == "train":
        mean = x.mean(axis=0)
        var = x.var(axis=0)  # population variance
        inv_std = 1.0 / np.sqrt(var + state.epsilon)
        xhat = (x - mean) * inv_std
        if update_stats:
            m = state.momentum
            state.running_mean[:] = m * state.running_mean + (1.0 - m) * mean
            state.running_var[:] = m * state.running_var + (1.0 - m) * var
    elif mode == "infer":
        inv_std = 1.0 / np.sqrt(state.running_var + state.epsilon)
        xhat = (x - state.running_mean) * inv_std
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    y = state.gamma * xhat + state.beta
    return y, (xhat, inv_std, state.gamma, mode)


def batchnorm_backward(cache, dy: np.ndarray):
    """Gradients through batch normalization.

    Train mode differentiates through the batch statistics; infer mode is a
    fixed affine map.
    """
    xhat, inv_std, gamma, mode = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if mode == "infer":
        dx = dxhat * inv_std
        return dx, dgamma, dbeta
    n = dy.shape[0]
    dx = (inv_std / n) * (
        n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
    )
    return dx, dgamma, dbeta


# --- losses ------------------------------------------------------------------


def loss_mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    diff = pred - target
    return float(np.mean(diff * diff))


def loss_bxe(label, prob) -> float:
    """Binary cross entropy, averaged over elements, with clamped probabilities."""
    y = np.asarray(label, dtype=np.float64)
    p = np.clip(np.asarray(prob, dtype=np.float64), BXE_CLAMP, 1.0 - BXE_CLAMP)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log1p(-p)))
