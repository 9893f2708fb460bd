"""Parameter containers and initializers shared by the network blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor


def conv_weight(rng: np.random.Generator, c_out: int, c_in: int, k: int = 1, gain: float = 1.0) -> Tensor:
    """He-style normal init, std = gain * sqrt(2 / fan_in)."""
    std = gain * np.sqrt(2.0 / (c_in * k * k))
    return Tensor(rng.normal(0.0, std, size=(c_out, c_in, k, k)), requires_grad=True)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def create(cls, c: int) -> "NormParams":
        return cls(ones(c), zeros(c))


def layer_norm(x: Tensor, p: NormParams | None) -> Tensor:
    return x if p is None else ops.layer_norm_channels(x, p.gamma, p.beta)


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor

    @classmethod
    def create(cls, c: int) -> "BatchNormParams":
        return cls(ones(c), zeros(c), Tensor(np.zeros(c)), Tensor(np.ones(c)))


BN_MOMENTUM = 0.1


def batch_norm(x: Tensor, p: BatchNormParams, training: bool = False) -> Tensor:
    out, mu, var = ops.batch_norm(x, p.gamma, p.beta, p.running_mean.data, p.running_var.data, training)
    if training:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * n / max(n - 1, 1)
        p.running_mean = Tensor((1 - BN_MOMENTUM) * p.running_mean.data + BN_MOMENTUM * mu)
        p.running_var = Tensor((1 - BN_MOMENTUM) * p.running_var.data + BN_MOMENTUM * unbiased)
    return out


@dataclass
class ConvBNParams:
    weight: Tensor
    bn: BatchNormParams
    stride: int = 1

    @classmethod
    def create(cls, rng, c_out: int, c_in: int, k: int, stride: int = 1) -> "ConvBNParams":
        return cls(conv_weight(rng, c_out, c_in, k), BatchNormParams.create(c_out), stride)


def conv_bn_relu(x: Tensor, p: ConvBNParams, training: bool = False) -> Tensor:
    k = p.weight.shape[-1]
    y = ops.conv2d(x, p.weight, stride=p.stride, padding=k // 2)
    return ops.relu(batch_norm(y, p.bn, training))
