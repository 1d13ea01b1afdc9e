"""Convolutional and self-organized (generative-neuron) layers and blocks.

A self-organized layer (SOL) of order q replaces each convolution kernel by
a truncated power series in the input::

    y = bias + sum_{n=1..q} conv(x ** n, kernel_n)

with the expansion point fixed at zero and no activation inside the layer.
With q = 1 it is an ordinary convolution.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from .autograd import Tensor, activation, add, add_scalar, conv2d, elem_pow, pixel_shuffle


@dataclass
class ConvParams:
    kernel: Tensor
    bias: Tensor

    def tensors(self):
        return [("kernel", self.kernel), ("bias", self.bias)]


@dataclass
class SolParams:
    kernels: List[Tensor]
    bias: Tensor
    a: float = 0.0

    def __post_init__(self):
        if not self.kernels:
            raise ValueError("SolParams needs at least one kernel bank")
        shape = self.kernels[0].shape
        for k in self.kernels:
            if k.shape != shape:
                raise ValueError(f"kernel banks differ in shape: {shape} vs {k.shape}")

    @property
    def q(self):
        return len(self.kernels)

    def tensors(self):
        named = [(f"kernel{n}", k) for n, k in enumerate(self.kernels, start=1)]
        return named + [("bias", self.bias)]


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" or "sol"
    c_in: int
    c_out: int
    q: int = 1
    ksize: int = 3

    def count(self):
        per_bank = self.c_out * self.c_in * self.ksize * self.ksize
        return (self.q if self.kind == "sol" else 1) * per_bank + self.c_out


def sol_forward(x, p):
    xa = x if p.a == 0 else add_scalar(x, -p.a)
    out = conv2d(xa, p.kernels[0], p.bias)
    for n, kernel in enumerate(p.kernels[1:], start=2):
        out = add(out, conv2d(elem_pow(xa, n), kernel))
    return out


def conv_forward(x, p):
    return conv2d(x, p.kernel, p.bias)


def layer_forward(x, p):
    if isinstance(p, SolParams):
        return sol_forward(x, p)
    return conv_forward(x, p)


def res_block_forward(x, p1, p2):
    """EDSR residual block: x + conv(relu(conv(x))), no activation after the sum."""
    return add(x, conv_forward(activation(conv_forward(x, p1), "relu"), p2))


def sor_block_forward(x, p1, p2):
    """Self-organized residual block: tanh(x + sol(tanh(sol(x))))."""
    branch = sol_forward(activation(sol_forward(x, p1), "tanh"), p2)
    return activation(add(x, branch), "tanh")


def upsampler_forward(x, scale, stages):
    """Feature expansion (C -> 4C) then 2x pixel shuffle, once per factor of two.

    ``stages`` is a list of ConvParams/SolParams, one per x2 stage.
    """
    n_stages = {2: 1, 4: 2}.get(scale)
    if n_stages is None:
        raise ValueError(f"unsupported scale {scale}; expected 2 or 4")
    if len(stages) != n_stages:
        raise ValueError(f"scale {scale} needs {n_stages} upsampler stage(s), got {len(stages)}")
    for p in stages:
        x = pixel_shuffle(layer_forward(x, p), 2)
    return x


def init_params(spec, rng):
    """Uniform(-b, b) kernels with b = sqrt(6 / fan_in); SOL bank n scaled by 1/n; zero bias."""
    k = spec.ksize
    bound = np.sqrt(6.0 / (spec.c_in * k * k))
    shape = (spec.c_out, spec.c_in, k, k)
    bias = Tensor(np.zeros(spec.c_out), requires_grad=True)
    if spec.kind == "conv":
        kernel = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
        return ConvParams(kernel, bias)
    if spec.kind == "sol":
        kernels = [Tensor(rng.uniform(-bound, bound, size=shape) / n, requires_grad=True)
                   for n in range(1, spec.q + 1)]
        return SolParams(kernels, bias)
    raise ValueError(f"unknown layer kind {spec.kind!r}")
