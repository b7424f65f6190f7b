"""Neural-network building blocks on top of the autodiff substrate.

Modules own their parameter tensors and expose them by dotted path for the
optimizer and the checkpoint container. Forward passes are functional; the
training flag (dropout, batch-norm statistics) is passed explicitly.
"""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nm
from .numerics import Tensor


class Module:
    """Base class providing named parameter / buffer traversal."""

    def _children(self):
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        """Yield (path, tensor) for every trainable parameter."""
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        """Yield (path, tensor) for non-trainable state (e.g. running stats)."""
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and not val.requires_grad:
                yield prefix + name, val
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def named_state(self, prefix: str = ""):
        yield from self.named_parameters(prefix)
        yield from self.named_buffers(prefix)

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


def _uniform(rng: np.random.Generator, shape, bound: float, dtype) -> Tensor:
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    """Affine map on the last axis: (..., d_in) -> (..., d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32, zero_init: bool = False):
        bound = 1.0 / math.sqrt(d_in)
        if zero_init:
            self.weight = Tensor(np.zeros((d_in, d_out), dtype=dtype), requires_grad=True)
        else:
            self.weight = _uniform(rng, (d_in, d_out), bound, dtype)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim > 2:
            # one 2-d GEMM instead of a batched loop over leading dims
            lead = x.shape[:-1]
            flat = nm.matmul(nm.reshape(x, (-1, x.shape[-1])), self.weight)
            return nm.add(nm.reshape(flat, lead + (self.weight.shape[1],)), self.bias)
        return nm.add(nm.matmul(x, self.weight), self.bias)


class Conv1d(Module):
    """Dilated same-padded 1-d convolution with bias: (B,Cin,T) -> (B,Cout,T)."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 dilation: int = 1, dtype=np.float32, zero_init: bool = False):
        bound = 1.0 / math.sqrt(c_in * kernel)
        if zero_init:
            self.weight = Tensor(np.zeros((c_out, c_in, kernel), dtype=dtype), requires_grad=True)
            self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        else:
            self.weight = _uniform(rng, (c_out, c_in, kernel), bound, dtype)
            self.bias = _uniform(rng, (c_out,), bound, dtype)
        self.dilation = dilation

    def __call__(self, x: Tensor) -> Tensor:
        out = nm.conv1d(x, self.weight, dilation=self.dilation, padding="same")
        return nm.add(out, nm.reshape(self.bias, (1, -1, 1)))


class PointwiseConv(Module):
    """1x1 convolution over any spatial layout: (B,Cin,*sp) -> (B,Cout,*sp)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 dtype=np.float32, zero_init: bool = False):
        self.conv = Conv1d(c_in, c_out, 1, rng, dtype=dtype, zero_init=zero_init)

    def __call__(self, x: Tensor) -> Tensor:
        spatial = x.shape[2:]
        flat = nm.reshape(x, (x.shape[0], x.shape[1], -1))
        out = self.conv(flat)
        return nm.reshape(out, (x.shape[0], out.shape[1]) + spatial)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nm.layer_norm(x, self.gamma, self.beta)


class BatchNorm1d(Module):
    """Per-channel normalization of (N,C,T) over the (N,T) axes.

    Training mode normalizes with batch statistics and updates the running
    buffers; eval mode uses the running buffers.
    """

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1,
                 eps: float = 1e-5):
        self.gamma = Tensor(np.ones((1, channels, 1), dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1), dtype=dtype), requires_grad=True)
        self.running_mean = Tensor(np.zeros((1, channels, 1), dtype=dtype))
        self.running_var = Tensor(np.ones((1, channels, 1), dtype=dtype))
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mu = nm.tmean(x, axis=(0, 2), keepdims=True)
            xc = nm.sub(x, mu)
            var = nm.tmean(nm.mul(xc, xc), axis=(0, 2), keepdims=True)
            m = self.momentum
            self.running_mean.data = (1 - m) * self.running_mean.data + m * mu.data
            self.running_var.data = (1 - m) * self.running_var.data + m * var.data
        else:
            mu = self.running_mean
            xc = nm.sub(x, mu)
            var = self.running_var
        inv = nm.div(Tensor(np.asarray(1.0, dtype=x.dtype)),
                     nm.sqrt(var + float(self.eps)))
        return nm.add(nm.mul(nm.mul(xc, inv), self.gamma), self.beta)


class MultiheadSelfAttention(Module):
    """Scaled dot-product self-attention over (N, L, C) sequences."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        if channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = channels // heads
        self.wq = Linear(channels, channels, rng, dtype)
        self.wk = Linear(channels, channels, rng, dtype)
        self.wv = Linear(channels, channels, rng, dtype)
        self.wo = Linear(channels, channels, rng, dtype)

    def _split(self, x: Tensor) -> Tensor:
        N, L, _ = x.shape
        return nm.transpose(nm.reshape(x, (N, L, self.heads, self.head_dim)),
                            (0, 2, 1, 3))  # (N,H,L,hd)

    def __call__(self, x: Tensor, return_weights: bool = False):
        N, L, C = x.shape
        q = self._split(self.wq(x))
        k = self._split(self.wk(x))
        v = self._split(self.wv(x))
        scale = 1.0 / math.sqrt(self.head_dim)
        scores = nm.mul(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))),
                        Tensor(np.asarray(scale, dtype=x.dtype)))
        attn = nm.softmax(scores, axis=-1)              # (N,H,L,L)
        mixed = nm.matmul(attn, v)                      # (N,H,L,hd)
        merged = nm.reshape(nm.transpose(mixed, (0, 2, 1, 3)), (N, L, C))
        out = self.wo(merged)
        if return_weights:
            return out, attn
        return out


class TransformerEncoderLayer(Module):
    """Pre-norm encoder layer: residual attention + residual 4x feed-forward."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32, ff_mult: int = 4):
        self.norm1 = LayerNorm(channels, dtype)
        self.attn = MultiheadSelfAttention(channels, heads, rng, dtype)
        self.norm2 = LayerNorm(channels, dtype)
        self.ff1 = Linear(channels, ff_mult * channels, rng, dtype)
        self.ff2 = Linear(ff_mult * channels, channels, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = nm.add(x, self.attn(self.norm1(x)))
        return nm.add(h, self.ff2(nm.relu(self.ff1(self.norm2(h)))))


class GatedConvLayer(Module):
    """One gated dilated convolution layer with residual and skip outputs."""

    def __init__(self, channels: int, kernel: int, dilation: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.conv_filter = Conv1d(channels, channels, kernel, rng, dilation, dtype)
        self.conv_gate = Conv1d(channels, channels, kernel, rng, dilation, dtype)
        self.conv_res = Conv1d(channels, channels, 1, rng, dtype=dtype)
        self.conv_skip = Conv1d(channels, channels, 1, rng, dtype=dtype)
        self.norm = BatchNorm1d(channels, dtype)

    def __call__(self, v: Tensor, training: bool):
        y = nm.mul(nm.tanh(self.conv_filter(v)), nm.sigmoid(self.conv_gate(v)))
        res = self.norm(nm.add(v, self.conv_res(y)), training)
        return res, self.conv_skip(y)


class GatedConvStack(Module):
    """WaveNet-style stack: gated layers with exponentially growing dilation,
    summed skip connections, then two ReLU projection convolutions."""

    def __init__(self, channels: int, layers: int, kernel: int, dilation_base: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.layers = [GatedConvLayer(channels, kernel, dilation_base ** i, rng, dtype)
                       for i in range(layers)]
        self.conv_inter = Conv1d(channels, channels, 1, rng, dtype=dtype)
        self.conv_final = Conv1d(channels, channels, 1, rng, dtype=dtype)

    def __call__(self, v: Tensor, training: bool) -> Tensor:
        skip_total = None
        for layer in self.layers:
            v, skip = layer(v, training)
            skip_total = skip if skip_total is None else nm.add(skip_total, skip)
        h = nm.relu(skip_total)
        h = nm.relu(self.conv_inter(h))
        return self.conv_final(h)
