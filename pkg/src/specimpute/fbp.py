"""Series decomposition and spectral bias projection.

The input feature map (B,D,C,T) is split into a moving-average trend and a
residual; each branch is pushed through a fixed spectral transform, its
real/imaginary parts are combined against fixed cosine/sine bases, and a
learned linear head maps the flattened (F*L) spectral features back to the
T time steps. Branch outputs are summed. Only the linear heads are
trainable; bases and windows are fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from . import spectral as sp
from .layers import Module
from .numerics import Tensor

__all__ = [
    "DecompositionConfig", "decompose", "FourierBases", "bias_project",
    "FbpHead", "fbp_forward",
]

FBP_KINDS = ("none", "dft", "stft", "frsst")


@dataclass(frozen=True)
class DecompositionConfig:
    """Moving-average kernel size; odd so the pad width (K_d-1)/2 is exact."""

    kernel: int = 5

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"decomposition kernel must be odd and >= 1, got {self.kernel}")

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2


def decompose(x: Tensor, cfg: DecompositionConfig):
    """Split (..., T) into (trend, residual) with trend + residual == x.

    The trend is an edge-replicated moving average along the last axis.
    """
    if cfg.kernel == 1:
        return x, nm.sub(x, x)
    lead = x.shape[:-1]
    T = x.shape[-1]
    flat = nm.reshape(x, (-1, 1, T))
    padded = nm.pad1d(flat, cfg.pad, cfg.pad, mode="edge")
    kernel = Tensor(np.full((1, 1, cfg.kernel), 1.0 / cfg.kernel, dtype=x.dtype))
    trend = nm.conv1d(padded, kernel, dilation=1, padding="valid")
    trend = nm.reshape(trend, lead + (T,))
    return trend, nm.sub(x, trend)


class FourierBases:
    """Fixed cosine/sine bases b_cos[f,l] = cos(2 pi f l / L),
    b_sin[f,l] = -sin(2 pi f l / L); never trained."""

    def __init__(self, bins: int, frames: int, dtype=np.float32):
        f = np.arange(bins)[:, None]
        ell = np.arange(frames)[None, :]
        angle = 2.0 * np.pi * f * ell / frames
        self.b_cos = Tensor(np.cos(angle).astype(dtype))
        self.b_sin = Tensor((-np.sin(angle)).astype(dtype))
        self.bins = bins
        self.frames = frames


def bias_project(gram: sp.SpectralGram, bases: FourierBases) -> Tensor:
    """Combine a gram against the bases: Re(X)*b_cos + Im(X)*b_sin -> (...,F,L).

    For a dft gram the (...,F) coefficients broadcast across the L frame
    axis (L is the number of time steps there).
    """
    re, im = gram.coeffs.re, gram.coeffs.im
    if gram.kind == "dft":
        if re.shape[-1] != bases.bins:
            raise ValueError(f"gram bins {re.shape[-1]} != bases bins {bases.bins}")
        re = nm.reshape(re, re.shape + (1,))
        im = nm.reshape(im, im.shape + (1,))
    else:
        if re.shape[-2] != bases.bins or re.shape[-1] != bases.frames:
            raise ValueError(
                f"gram (F,L)=({re.shape[-2]},{re.shape[-1]}) != bases "
                f"({bases.bins},{bases.frames})")
    return nm.add(nm.mul(re, bases.b_cos), nm.mul(im, bases.b_sin))


class _BranchHead(Module):
    """Linear head of one branch, initialized near zero (uniform +/-1/sqrt(F*L),
    zero bias) so the surrounding residual blocks start near identity."""

    def __init__(self, feat: int, T: int, rng: np.random.Generator, dtype):
        bound = 1.0 / math.sqrt(feat)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(feat, T)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(T, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nm.add(nm.matmul(x, self.weight), self.bias)


class FbpHead(Module):
    """Spectral projection head for a fixed series length.

    kind 'none' short-circuits to an identity pass-through; otherwise the
    head owns one linear map per branch (trend and residual) from the
    flattened spectral features to the T output steps. ``max_bins``
    optionally keeps only the lowest-frequency bins.
    """

    def __init__(self, kind: str, T: int, rng: np.random.Generator,
                 dtype=np.float32, window: sp.WindowSpec | None = None,
                 max_bins: int | None = None, dropout: float = 0.1):
        if kind not in FBP_KINDS:
            raise ValueError(f"fbp kind must be one of {FBP_KINDS}, got {kind!r}")
        self.kind = kind
        self.T = T
        self.dropout = dropout
        self.window = None
        if kind == "none":
            return
        if kind == "dft":
            full_bins = T // 2 + 1
            frames = T
        else:
            if window is None:
                window = (sp.default_stft_window(T) if kind == "stft"
                          else sp.default_frsst_window(T))
            self.window = window
            full_bins = window.length // 2 + 1
            frames = window.frame_count(T)
        self.bins = full_bins if max_bins is None else min(full_bins, max_bins)
        self.frames = frames
        self.bases = FourierBases(self.bins, frames, dtype)
        feat = self.bins * frames
        self.trend_head = _BranchHead(feat, T, rng, dtype)
        self.resid_head = _BranchHead(feat, T, rng, dtype)

    def _transform(self, x: Tensor) -> sp.SpectralGram:
        if self.kind == "dft":
            return sp.rdft(x)
        if self.kind == "stft":
            return sp.stft(x, self.window)
        return sp.frsst(x, self.window)

    def _truncate(self, gram: sp.SpectralGram):
        full = gram.coeffs.re.shape[-1 if gram.kind == "dft" else -2]
        if self.bins == full:
            return gram.coeffs.re, gram.coeffs.im, gram.kind
        if gram.kind == "dft":
            return gram.coeffs.re[..., :self.bins], gram.coeffs.im[..., :self.bins], gram.kind
        return (gram.coeffs.re[..., :self.bins, :],
                gram.coeffs.im[..., :self.bins, :], gram.kind)

    def _branch_unfused(self, x: Tensor, head: _BranchHead, training: bool,
                        rng: np.random.Generator | None) -> Tensor:
        """Literal pipeline: bias projection, flatten, dropout, linear."""
        gram = self._transform(x)
        re, im, kind = self._truncate(gram)
        if kind == "dft":
            re = nm.reshape(re, re.shape + (1,))
            im = nm.reshape(im, im.shape + (1,))
        total = nm.add(nm.mul(re, self.bases.b_cos), nm.mul(im, self.bases.b_sin))
        flat = nm.reshape(total, total.shape[:-2] + (self.bins * self.frames,))
        flat = nm.dropout(flat, self.dropout, rng, training)
        return head(flat)

    def _branch_fused(self, x: Tensor, head: _BranchHead) -> Tensor:
        """Bases folded into the head weights (same linear map, no dropout):
        out = re @ (b_cos * W) + im @ (b_sin * W) + bias, which avoids the
        large (..., F, L) intermediate entirely."""
        gram = self._transform(x)
        re, im, kind = self._truncate(gram)
        F, L, T = self.bins, self.frames, self.T
        w3 = nm.reshape(head.weight, (F, L, T))
        if kind == "dft":
            # (..., F) @ (F, T): frame axis contracted into the weights
            bc = nm.reshape(self.bases.b_cos, (F, L, 1))
            bs = nm.reshape(self.bases.b_sin, (F, L, 1))
            w_cos = nm.tsum(nm.mul(w3, bc), axis=1)
            w_sin = nm.tsum(nm.mul(w3, bs), axis=1)
            out = nm.add(nm.matmul(re, w_cos), nm.matmul(im, w_sin))
        else:
            flat_shape = re.shape[:-2] + (F * L,)
            bc = nm.reshape(self.bases.b_cos, (F * L, 1))
            bs = nm.reshape(self.bases.b_sin, (F * L, 1))
            w_cos = nm.mul(nm.reshape(w3, (F * L, T)), bc)
            w_sin = nm.mul(nm.reshape(w3, (F * L, T)), bs)
            out = nm.add(nm.matmul(nm.reshape(re, flat_shape), w_cos),
                         nm.matmul(nm.reshape(im, flat_shape), w_sin))
        return nm.add(out, head.bias)

    def _branch(self, x: Tensor, head: _BranchHead, training: bool,
                rng: np.random.Generator | None) -> Tensor:
        if training and rng is not None and self.dropout > 0.0:
            return self._branch_unfused(x, head, training, rng)
        return self._branch_fused(x, head)


def fbp_forward(x: Tensor, head: FbpHead, cfg: DecompositionConfig,
                training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Decompose, project both branches through the head, sum the outputs.

    Shape-preserving on (B,D,C,T); kind 'none' returns x unchanged.
    """
    if head.kind == "none":
        return x
    if x.shape[-1] != head.T:
        raise ValueError(f"fbp head built for T={head.T}, got T={x.shape[-1]}")
    trend, resid = decompose(x, cfg)
    out_t = head._branch(trend, head.trend_head, training, rng)
    out_r = head._branch(resid, head.resid_head, training, rng)
    return nm.add(out_t, out_r)
