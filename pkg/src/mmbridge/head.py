"""Fusion layer, pooled classifier and the downstream losses."""
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concat, cross_entropy, matmul, mean
from .errors import AlignmentError, DimensionError, DomainError


@dataclass
class HeadParams:
    fusion_w: Tensor  # (C [+ D]) x F
    fusion_b: Tensor
    cls_w: Tensor     # F x K
    cls_b: Tensor

    @property
    def num_classes(self):
        return self.cls_w.shape[1]

    def named(self, prefix):
        return {f"{prefix}.{k}": getattr(self, k)
                for k in ("fusion_w", "fusion_b", "cls_w", "cls_b")}


def init_head(input_dim, fusion_dim, num_classes, rng):
    return HeadParams(
        fusion_w=Tensor(rng.standard_normal((input_dim, fusion_dim)) / np.sqrt(input_dim), True),
        fusion_b=Tensor(np.zeros(fusion_dim), True),
        cls_w=Tensor(rng.standard_normal((fusion_dim, num_classes)) / np.sqrt(fusion_dim), True),
        cls_b=Tensor(np.zeros(num_classes), True),
    )


def fuse(f_src, tgt_like, params):
    """Per-step concatenation followed by the affine fusion map.

    ``tgt_like`` may be None for the source-only baseline head.
    """
    f_src = as_tensor(f_src)
    if tgt_like is None:
        x = f_src
    else:
        tgt_like = as_tensor(tgt_like)
        if f_src.shape[:-1] != tgt_like.shape[:-1]:
            raise AlignmentError(
                f"cannot fuse {f_src.shape} with {tgt_like.shape}")
        x = concat([f_src, tgt_like], axis=-1)
    if x.shape[-1] != params.fusion_w.shape[0]:
        raise DimensionError(
            f"fused width {x.shape[-1]} != fusion input {params.fusion_w.shape[0]}")
    return matmul(x, params.fusion_w) + params.fusion_b


def classify(fused, params):
    """Mean-pool over the step axis, then map to class logits."""
    fused = as_tensor(fused)
    if fused.ndim < 2 or fused.shape[-2] < 1:
        raise DimensionError("need at least one step to pool")
    pooled = mean(fused, axis=-2)
    return matmul(pooled, params.cls_w) + params.cls_b


def task_loss(logits_recalled, logits_oracle, y):
    """Cross-entropy on the recalled-feature logits plus on the true-feature logits."""
    logits_recalled, logits_oracle = as_tensor(logits_recalled), as_tensor(logits_oracle)
    k = logits_recalled.shape[-1]
    labels = np.asarray(y).reshape(-1)
    if np.any(labels < 0) or np.any(labels >= k):
        raise DomainError(f"label out of range [0, {k})")
    return cross_entropy(logits_recalled, labels) + cross_entropy(logits_oracle, labels)


def total_loss(l_save, l_bridge, l_task, steps):
    if steps < 1:
        raise DomainError("step count must be at least 1")
    return l_save / steps + l_bridge / steps + l_task
