"""Per-step two-layer MLP encoders standing in for the modality frontends."""
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, matmul, tanh
from .errors import DimensionError


@dataclass
class EncoderParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def input_dim(self):
        return self.w1.shape[0]

    @property
    def output_dim(self):
        return self.w2.shape[1]

    def named(self, prefix):
        return {f"{prefix}.{k}": getattr(self, k) for k in ("w1", "b1", "w2", "b2")}


def init_encoder(input_dim, hidden_dim, output_dim, rng):
    """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    return EncoderParams(
        w1=Tensor(rng.standard_normal((input_dim, hidden_dim)) / np.sqrt(input_dim), True),
        b1=Tensor(np.zeros(hidden_dim), True),
        w2=Tensor(rng.standard_normal((hidden_dim, output_dim)) / np.sqrt(hidden_dim), True),
        b2=Tensor(np.zeros(output_dim), True),
    )


def encode(x, params, activation=tanh):
    """Apply the MLP to every step of ``x[..., T, d_in]``.

    ``activation=None`` makes the map purely affine (used in tests).
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise DimensionError("input must have at least one temporal step")
    if x.shape[-1] != params.input_dim:
        raise DimensionError(
            f"input width {x.shape[-1]} != encoder input {params.input_dim}")
    h = matmul(x, params.w1) + params.b1
    if activation is not None:
        h = activation(h)
    return matmul(h, params.w2) + params.b2


def encode_source(x, params, activation=tanh):
    return encode(x, params, activation)


def encode_target(x, params, activation=tanh):
    return encode(x, params, activation)
