"""Flat parameter vectors with a named block layout.

Every network stores its trainable parameters as one contiguous 1-D array.
The layout maps named blocks (per layer, per parameter kind) onto slices of
that array, so optimizers operate on the flat vector while layers see
reshaped views. The layout is a pure function of the architecture, which
makes serialization and cross-run comparisons byte-stable.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from gradalarm.errors import ConfigError

PARAM_KINDS = ("weight", "bias", "gamma", "beta", "lstm_gate")


@dataclass(frozen=True)
class ParamBlock:
    """One named slice of the flat parameter vector."""

    layer_id: str
    kind: str
    shape: tuple[int, ...]
    offset: int

    def __post_init__(self) -> None:
        if self.kind not in PARAM_KINDS:
            raise ConfigError(f"unknown parameter kind {self.kind!r}")
        if any(d <= 0 for d in self.shape):
            raise ConfigError(f"non-positive dimension in shape {self.shape}")

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def stop(self) -> int:
        return self.offset + self.size


def build_layout(entries: list[tuple[str, str, tuple[int, ...]]]) -> tuple[ParamBlock, ...]:
    """Assign consecutive offsets to (layer_id, kind, shape) entries."""
    blocks = []
    offset = 0
    for layer_id, kind, shape in entries:
        block = ParamBlock(layer_id=layer_id, kind=kind, shape=tuple(shape), offset=offset)
        blocks.append(block)
        offset += block.size
    return tuple(blocks)


def layout_size(layout: tuple[ParamBlock, ...]) -> int:
    return sum(b.size for b in layout)


class FlatParams:
    """A model's trainable parameters as one flat vector plus its layout.

    ``values`` is always 1-D and contiguous; ``view`` hands out reshaped
    views into it, so in-place optimizer updates are visible to every layer
    without copying.
    """

    __slots__ = ("values", "layout")

    def __init__(self, values: np.ndarray, layout: tuple[ParamBlock, ...]):
        values = np.asarray(values)
        if values.ndim != 1:
            raise ConfigError(f"values must be 1-D, got shape {values.shape}")
        expected = layout_size(layout)
        if values.size != expected:
            raise ConfigError(
                f"values has {values.size} entries but layout requires {expected}"
            )
        self.values = values
        self.layout = tuple(layout)

    @classmethod
    def zeros(cls, layout: tuple[ParamBlock, ...], dtype=np.float64) -> FlatParams:
        return cls(np.zeros(layout_size(layout), dtype=dtype), layout)

    def __len__(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def view(self, block: ParamBlock) -> np.ndarray:
        """Reshaped view of one block; writes go through to ``values``."""
        return self.values[block.offset : block.stop].reshape(block.shape)

    def block_slice(self, block: ParamBlock) -> slice:
        return slice(block.offset, block.stop)

    def copy(self) -> FlatParams:
        return FlatParams(self.values.copy(), self.layout)

    def set_values(self, values: np.ndarray) -> None:
        """Copy new values in place so existing views stay valid."""
        values = np.asarray(values)
        if values.shape != self.values.shape:
            raise ConfigError(
                f"expected {self.values.shape[0]} values, got shape {values.shape}"
            )
        self.values[:] = values

    def hash_hex(self) -> str:
        """Content hash of the raw parameter bytes (little-endian float64)."""
        data = np.ascontiguousarray(self.values, dtype="<f8").tobytes()
        return hashlib.sha256(data).hexdigest()

    def __repr__(self) -> str:
        return f"FlatParams(n={len(self)}, blocks={len(self.layout)}, dtype={self.dtype})"
