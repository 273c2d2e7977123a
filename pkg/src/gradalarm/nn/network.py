"""Feed-forward / recurrent network composed from layer specs.

Composition rules:

* Input is batch-major: ``[B, D]`` for flat data, ``[B, S, D]`` for
  sequences (``S`` = number of time steps).
* ``batchnorm_time_distributed`` applied to a sequence pools statistics
  over batch and time jointly, sharing one set of per-feature parameters.
* ``lstm`` consumes a sequence and emits the full hidden sequence.
* ``dense`` applied to a sequence consumes the last time step's vector;
  this is how the recurrent stack hands over to the dense head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradalarm.errors import ConfigError, NumericError, UsageError

from .layers import (
    BatchNormState,
    LayerSpec,
    batchnorm_backward,
    batchnorm_forward,
    dense_backward,
    dense_backward_per_sample,
    dense_forward,
)
from .lstm import lstm_backward, lstm_forward
from .params import FlatParams, ParamBlock, build_layout


@dataclass
class ForwardCache:
    """Everything backward() needs, bound to the network that produced it."""

    net_id: int
    mode: str
    layer_caches: list
    output_shape: tuple[int, ...]


def _layout_entries(layers: tuple[LayerSpec, ...]):
    entries = []
    for i, spec in enumerate(layers):
        lid = f"{spec.kind.split('_')[0]}{i}"
        if spec.kind == "dense":
            entries.append((lid, "weight", (spec.in_dim, spec.out_dim)))
            entries.append((lid, "bias", (spec.out_dim,)))
        elif spec.kind == "lstm":
            h = spec.out_dim
            entries.append((f"{lid}.x", "lstm_gate", (spec.in_dim, 4 * h)))
            entries.append((f"{lid}.h", "lstm_gate", (h, 4 * h)))
            entries.append((lid, "bias", (4 * h,)))
        elif spec.kind == "batchnorm_time_distributed":
            entries.append((lid, "gamma", (spec.in_dim,)))
            entries.append((lid, "beta", (spec.in_dim,)))
        else:  # pragma: no cover - guarded by LayerSpec
            raise ConfigError(f"unknown layer kind {spec.kind!r}")
    return entries


class Network:
    """A stack of layers backed by one flat parameter vector."""

    def __init__(self, layers, dtype=np.float64, seed: int | None = None):
        layers = tuple(layers)
        if not layers:
            raise ConfigError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigError(
                    f"layer chain breaks between {prev} and {nxt}: "
                    f"{prev.out_dim} != {nxt.in_dim}"
                )
        self.layers = layers
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
            raise ConfigError(f"unsupported dtype {dtype!r}")

        entries = _layout_entries(layers)
        layout = build_layout(entries)
        self.params = FlatParams.zeros(layout, dtype=self.dtype)

        # Map blocks to their owning layer.
        self._blocks_by_layer: list[list[ParamBlock]] = [[] for _ in layers]
        cursor = 0
        for i, spec in enumerate(layers):
            n_blocks = {"dense": 2, "lstm": 3, "batchnorm_time_distributed": 2}[spec.kind]
            self._blocks_by_layer[i] = list(layout[cursor : cursor + n_blocks])
            cursor += n_blocks

        self.bn_states: list[BatchNormState | None] = []
        for i, spec in enumerate(layers):
            if spec.kind == "batchnorm_time_distributed":
                gamma, beta = (self.params.view(b) for b in self._blocks_by_layer[i])
                self.bn_states.append(BatchNormState(gamma=gamma, beta=beta))
            else:
                self.bn_states.append(None)

        if seed is not None:
            self.init_params(seed)
        else:
            self._default_init()

    # --- construction helpers -------------------------------------------

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def _default_init(self) -> None:
        """Structural constants only: BN gamma=1, LSTM forget bias=1."""
        for i, spec in enumerate(self.layers):
            if spec.kind == "batchnorm_time_distributed":
                self.params.view(self._blocks_by_layer[i][0])[:] = 1.0
            elif spec.kind == "lstm":
                h = spec.out_dim
                self.params.view(self._blocks_by_layer[i][2])[h : 2 * h] = 1.0

    def init_params(self, seed: int) -> None:
        """Deterministic initialization from a seed.

        Dense kernels are Glorot-uniform, LSTM kernels uniform within
        ``±1/sqrt(fan_in)`` with forget-gate bias 1, batch-norm starts as
        the identity map.
        """
        rng = np.random.default_rng(seed)
        self.params.values[:] = 0.0
        for i, spec in enumerate(self.layers):
            blocks = self._blocks_by_layer[i]
            if spec.kind == "dense":
                a = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
                self.params.view(blocks[0])[:] = rng.uniform(
                    -a, a, size=(spec.in_dim, spec.out_dim)
                )
            elif spec.kind == "lstm":
                h = spec.out_dim
                ax = 1.0 / np.sqrt(spec.in_dim)
                ah = 1.0 / np.sqrt(h)
                self.params.view(blocks[0])[:] = rng.uniform(-ax, ax, (spec.in_dim, 4 * h))
                self.params.view(blocks[1])[:] = rng.uniform(-ah, ah, (h, 4 * h))
                self.params.view(blocks[2])[h : 2 * h] = 1.0
            elif spec.kind == "batchnorm_time_distributed":
                self.params.view(blocks[0])[:] = 1.0

    def blocks_for_layer(self, index: int) -> list[ParamBlock]:
        return list(self._blocks_by_layer[index])

    def layer_slices(self) -> list[tuple[int, slice]]:
        """Contiguous flat-vector slice per layer (for per-layer features)."""
        out = []
        for i, blocks in enumerate(self._blocks_by_layer):
            out.append((i, slice(blocks[0].offset, blocks[-1].stop)))
        return out

    def gamma_beta_slices(self) -> list[slice]:
        return [
            self.params.block_slice(b)
            for b in self.params.layout
            if b.kind in ("gamma", "beta")
        ]

    def arch_dicts(self) -> list[dict]:
        return [spec.to_dict() for spec in self.layers]

    # --- forward / backward ----------------------------------------------

    def forward(self, x: np.ndarray, mode: str = "train", update_stats: bool | None = None):
        """Run the stack; returns ``(output, cache)``.

        ``update_stats`` controls whether train-mode batch-norm layers
        update their running statistics (defaults to True in train mode).
        """
        if mode not in ("train", "infer"):
            raise ConfigError(f"unknown mode {mode!r}")
        if update_stats is None:
            update_stats = mode == "train"
        a = np.asarray(x, dtype=self.dtype)
        if a.ndim not in (2, 3):
            raise ConfigError(f"expected [B, D] or [B, S, D] input, got {a.shape}")
        if a.shape[-1] != self.input_dim:
            raise ConfigError(
                f"input has {a.shape[-1]} features, first layer expects {self.input_dim}"
            )

        layer_caches = []
        for i, spec in enumerate(self.layers):
            blocks = self._blocks_by_layer[i]
            if spec.kind == "dense":
                seq_shape = a.shape if a.ndim == 3 else None
                a2 = a[:, -1, :] if seq_shape else a
                a, cache = dense_forward(
                    a2,
                    self.params.view(blocks[0]),
                    self.params.view(blocks[1]),
                    spec.activation,
                )
                layer_caches.append(("dense", cache, seq_shape))
            elif spec.kind == "lstm":
                if a.ndim != 3:
                    raise ConfigError("lstm layer requires a [B, S, D] sequence input")
                x_tm = np.ascontiguousarray(a.transpose(1, 0, 2))
                h_tm, _, cache = lstm_forward(
                    self.params.view(blocks[0]),
                    self.params.view(blocks[1]),
                    self.params.view(blocks[2]),
                    x_tm,
                )
                a = h_tm.transpose(1, 0, 2)
                layer_caches.append(("lstm", cache, None))
            else:  # batchnorm_time_distributed
                shape3 = a.shape if a.ndim == 3 else None
                flat = a.reshape(-1, a.shape[-1])
                out, cache = batchnorm_forward(
                    self.bn_states[i], flat, mode, update_stats=update_stats
                )
                a = out.reshape(shape3) if shape3 else out
                layer_caches.append(("batchnorm", cache, shape3))
            if not np.isfinite(a).all():
                raise NumericError(
                    f"non-finite activation leaving layer {i} ({spec.kind})"
                )
        return a, ForwardCache(id(self), mode, layer_caches, tuple(a.shape))

    def backward(self, cache: ForwardCache, upstream: np.ndarray, wrt: str = "output"):
        """Exact gradient of a scalar loss w.r.t. all parameters and the input.

        ``upstream`` is dLoss/dOutput (or dLoss/dPreactivation of the final
        dense layer when ``wrt="logits"``). Returns ``(flat_grad, dx)``.
        """
        self._check_cache(cache, upstream)
        if wrt not in ("output", "logits"):
            raise ConfigError(f"unknown wrt {wrt!r}")
        if wrt == "logits" and self.layers[-1].kind != "dense":
            raise UsageError("wrt='logits' requires a dense final layer")

        grad = np.zeros(self.n_params, dtype=self.dtype)
        d = np.asarray(upstream, dtype=self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            kind, lcache, extra = cache.layer_caches[i]
            blocks = self._blocks_by_layer[i]
            if kind == "dense":
                skip = wrt == "logits" and i == len(self.layers) - 1
                dx, dw, db = dense_backward(lcache, d, skip_activation=skip)
                grad[self.params.block_slice(blocks[0])] += dw.ravel()
                grad[self.params.block_slice(blocks[1])] += db
                if extra:  # input was a sequence; gradient flows to last step only
                    d3 = np.zeros(extra, dtype=self.dtype)
                    d3[:, -1, :] = dx
                    d = d3
                else:
                    d = dx
            elif kind == "lstm":
                d_tm = np.ascontiguousarray(d.transpose(1, 0, 2))
                dx_tm, dwx, dwh, db = lstm_backward(lcache, d_tm)
                grad[self.params.block_slice(blocks[0])] += dwx.ravel()
                grad[self.params.block_slice(blocks[1])] += dwh.ravel()
                grad[self.params.block_slice(blocks[2])] += db
                d = dx_tm.transpose(1, 0, 2)
            else:  # batchnorm
                shape3 = extra
                dflat = d.reshape(-1, d.shape[-1])
                dx, dgamma, dbeta = batchnorm_backward(lcache, dflat)
                grad[self.params.block_slice(blocks[0])] += dgamma
                grad[self.params.block_slice(blocks[1])] += dbeta
                d = dx.reshape(shape3) if shape3 else dx
        return grad, d

    def backward_per_sample(self, cache: ForwardCache, upstream: np.ndarray):
        """Per-sample parameter gradients ``[B, n_params]`` (dense-only nets).

        Equivalent to running backward() on each sample separately; used to
        extract individual loss gradients in one vectorized pass.
        """
        self._check_cache(cache, upstream)
        if any(spec.kind != "dense" for spec in self.layers):
            raise UsageError("per-sample gradients are implemented for dense-only nets")
        batch = upstream.shape[0]
        out = np.zeros((batch, self.n_params), dtype=self.dtype)
        d = np.asarray(upstream, dtype=self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            _, lcache, _ = cache.layer_caches[i]
            blocks = self._blocks_by_layer[i]
            d, dw, db = dense_backward_per_sample(lcache, d)
            out[:, self.params.block_slice(blocks[0])] = dw.reshape(batch, -1)
            out[:, self.params.block_slice(blocks[1])] = db
        return out

    def _check_cache(self, cache: ForwardCache, upstream: np.ndarray) -> None:
        if not isinstance(cache, ForwardCache) or cache.net_id != id(self):
            raise UsageError("backward() called with a cache from another network")
        if tuple(np.asarray(upstream).shape) != cache.output_shape:
            raise UsageError(
                f"upstream gradient shape {np.asarray(upstream).shape} does not match "
                f"forward output shape {cache.output_shape}"
            )

    # --- state snapshots ---------------------------------------------------

    def bn_stats(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Copies of (running_mean, running_var) for every batch-norm layer."""
        return [s.stats_copy() for s in self.bn_states if s is not None]

    def aux_values(self) -> np.ndarray:
        """Running statistics flattened in layer order (for checkpoints)."""
        parts = []
        for s in self.bn_states:
            if s is not None:
                parts.extend([s.running_mean, s.running_var])
        if not parts:
            return np.zeros(0, dtype=np.float64)
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])

    def set_aux_values(self, aux: np.ndarray) -> None:
        cursor = 0
        for s in self.bn_states:
            if s is None:
                continue
            d = s.running_mean.shape[0]
            s.running_mean[:] = aux[cursor : cursor + d]
            s.running_var[:] = aux[cursor + d : cursor + 2 * d]
            cursor += 2 * d
        if cursor != aux.size:
            raise ConfigError(
                f"auxiliary state has {aux.size} values, network expects {cursor}"
            )
