"""Source-key / target-value memory pair and the losses that train it.

Addressing vectors are stored as the trailing axis of a tensor: a tensor of
shape ``(..., T, N)`` holds one distribution over the ``N`` slots per step.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import (Tensor, as_tensor, cosine_address, kl_divergence, matmul,
                       sum_squares)
from .errors import AlignmentError, DimensionError

DEFAULT_SCALE = 16.0


@dataclass
class MemoryPair:
    key: Tensor    # N x C, addressed by source features
    value: Tensor  # N x D, addressed by target features, read by both
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        if self.key.ndim != 2 or self.value.ndim != 2:
            raise DimensionError("memories must be matrices")
        if self.key.shape[0] != self.value.shape[0] or self.key.shape[0] < 1:
            raise DimensionError(
                f"key {self.key.shape} and value {self.value.shape} must share "
                "a positive slot count")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def slot_count(self):
        return self.key.shape[0]

    @classmethod
    def initialize(cls, slots, key_dim, value_dim, rng, scale=DEFAULT_SCALE):
        """Unit-norm Gaussian rows for both memories."""
        def unit_rows(n, d):
            m = rng.standard_normal((n, d))
            return m / np.linalg.norm(m, axis=1, keepdims=True)

        return cls(Tensor(unit_rows(slots, key_dim), True),
                   Tensor(unit_rows(slots, value_dim), True), scale)


@dataclass
class BridgeOutput:
    a_src: Tensor
    recalled: Tensor
    a_tgt: Optional[Tensor] = None
    reconstructed: Optional[Tensor] = None


def address(memory_matrix, query, r):
    """Softmax over slots of ``r`` times the cosine similarity to ``query``."""
    return cosine_address(query, memory_matrix, r)


def _read(weights, value_memory):
    weights, value_memory = as_tensor(weights), as_tensor(value_memory)
    if weights.shape[-1] != value_memory.shape[0]:
        raise DimensionError(
            f"{weights.shape[-1]} addressing weights for "
            f"{value_memory.shape[0]} memory slots")
    return matmul(weights, value_memory)


def reconstruct(a_tgt, value_memory):
    """Target-driven read of the value memory."""
    return _read(a_tgt, value_memory)


def recall(a_src, value_memory):
    """Source-driven read of the value memory; needs no target input."""
    return _read(a_src, value_memory)


def saving_loss(f_tgt, reconstructed):
    """Sum over steps (and batch) of squared reconstruction error."""
    f_tgt, reconstructed = as_tensor(f_tgt), as_tensor(reconstructed)
    if f_tgt.shape != reconstructed.shape:
        raise DimensionError(
            f"shape mismatch {f_tgt.shape} vs {reconstructed.shape}")
    return sum_squares(f_tgt - reconstructed)


def bridging_loss(a_tgt, a_src, detach_target=True):
    """Sum over steps of KL(a_tgt || a_src).

    With ``detach_target`` the target distribution is a constant, so no
    gradient reaches the target encoder or value memory through this term.
    """
    a_tgt, a_src = as_tensor(a_tgt), as_tensor(a_src)
    if a_tgt.shape != a_src.shape:
        raise DimensionError(
            f"addressing sequences differ: {a_tgt.shape} vs {a_src.shape}")
    if detach_target:
        a_tgt = a_tgt.detach()
    return kl_divergence(a_tgt, a_src, validate=False)


def bridge_forward(f_src, f_tgt, mem):
    """Address both memories and read the value memory for every step.

    ``f_src`` is ``(..., T, C)``. When ``f_tgt`` is None only the
    source-driven path runs, which is the inference contract.
    """
    f_src = as_tensor(f_src)
    f_tgt = None if f_tgt is None else as_tensor(f_tgt)
    if f_src.ndim < 2 or f_src.shape[-2] < 1:
        raise DimensionError("f_src must have at least one temporal step")
    a_src = address(mem.key, f_src, mem.scale)
    out = BridgeOutput(a_src=a_src, recalled=recall(a_src, mem.value))
    if f_tgt is not None:
        if f_tgt.shape[:-1] != f_src.shape[:-1]:
            raise AlignmentError(
                f"source steps {f_src.shape[:-1]} vs target steps "
                f"{f_tgt.shape[:-1]}")
        out.a_tgt = address(mem.value, f_tgt, mem.scale)
        out.reconstructed = reconstruct(out.a_tgt, mem.value)
    return out
