"""Noise-prediction network for the conditional diffusion imputer.

Input is a two-channel stack (conditional values, noisy target values) over
a (T, D) grid. A stack of residual blocks — each combining a temporal
module (spectral bias projection followed by attention or a gated
convolution stack), feature-axis attention, and a gated filter — emits skip
tensors that are pooled into the predicted noise. The final projection is
zero-initialized so an untrained model predicts exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .fbp import DecompositionConfig, FbpHead, fbp_forward
from .layers import (
    GatedConvStack,
    Linear,
    Module,
    PointwiseConv,
    TransformerEncoderLayer,
)
from .numerics import Tensor
from .spectral import WindowSpec

BACKBONES = ("attention", "conv")
FBP_KINDS = ("none", "dft", "stft", "frsst")


@dataclass
class DenoiserConfig:
    """Architecture hyperparameters of the denoiser."""

    channels: int = 64
    blocks: int = 4
    heads: int = 8
    backbone: str = "attention"
    fbp_kind: str = "dft"
    decomp_kernel: int = 5
    tcn_layers: int = 4
    tcn_dilation_base: int = 2
    tcn_kernel: int = 3
    d_time: int = 128
    d_feature: int = 16
    cond_channels: int = 32
    step_embed_dim: int = 128
    fbp_dropout: float = 0.1
    fbp_max_bins: int | None = None
    fbp_window_len: int | None = None
    fbp_hop: int | None = None

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.fbp_kind not in FBP_KINDS:
            raise ValueError(f"fbp_kind must be one of {FBP_KINDS}, got {self.fbp_kind!r}")
        if self.channels % self.heads != 0:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.cond_channels < 1:
            raise ValueError("cond_channels must be >= 1")
        if self.step_embed_dim % 2 != 0 or self.step_embed_dim < 4:
            raise ValueError("step_embed_dim must be even and >= 4")
        if self.d_time % 2 != 0:
            raise ValueError("d_time must be even")
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")


def sinusoid_table(positions: int, dim: int, dtype=np.float32) -> np.ndarray:
    """(positions, dim) fixed sinusoidal embedding over 0..positions-1."""
    pos = np.arange(positions, dtype=np.float64)[:, None]
    half = dim // 2
    div = 1.0 / np.power(10000.0, np.arange(half, dtype=np.float64) * 2.0 / dim)
    table = np.zeros((positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div)
    return table.astype(dtype)


class StepEmbedding(Module):
    """Diffusion-step conditioning: sinusoid of s through two SiLU linears."""

    def __init__(self, num_steps: int, dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.num_steps = num_steps
        half = dim // 2
        s = np.arange(1, num_steps + 1, dtype=np.float64)[:, None]
        freq = 10.0 ** (np.arange(half, dtype=np.float64) * 4.0 / max(half - 1, 1))
        table = s / freq
        self.table = Tensor(np.concatenate([np.sin(table), np.cos(table)], axis=1)
                            .astype(dtype))
        self.lin1 = Linear(dim, dim, rng, dtype)
        self.lin2 = Linear(dim, dim, rng, dtype)

    def __call__(self, s: int) -> Tensor:
        if not 1 <= s <= self.num_steps:
            raise ValueError(f"diffusion step {s} outside [1, {self.num_steps}]")
        emb = self.table[s - 1:s]                           # (1, dim)
        out = nm.silu(self.lin2(nm.silu(self.lin1(emb))))
        return nm.reshape(out, (out.shape[-1],))


@dataclass
class SideInfo:
    """Conditioning channels shared by all blocks."""

    time_embedding: Tensor       # (T, d_time), fixed sinusoid
    feature_embedding: Tensor    # (D, d_feature), learned
    mask_channel: Tensor         # (B, T, D) in {0,1}


class TemporalModule(Module):
    """Spectral projection followed by the temporal backbone over (B,C,T,D)."""

    def __init__(self, cfg: DenoiserConfig, T: int, rng: np.random.Generator,
                 dtype=np.float32):
        window = None
        if cfg.fbp_window_len is not None:
            window = WindowSpec(length=cfg.fbp_window_len,
                                hop=cfg.fbp_hop or cfg.fbp_window_len // 2)
        self.fbp_head = FbpHead(cfg.fbp_kind, T, rng, dtype=dtype, window=window,
                                max_bins=cfg.fbp_max_bins, dropout=cfg.fbp_dropout)
        self.decomp = DecompositionConfig(cfg.decomp_kernel)
        self.backbone = cfg.backbone
        if cfg.backbone == "attention":
            self.encoder = TransformerEncoderLayer(cfg.channels, cfg.heads, rng, dtype)
        else:
            self.encoder = GatedConvStack(cfg.channels, cfg.tcn_layers, cfg.tcn_kernel,
                                          cfg.tcn_dilation_base, rng, dtype)

    def __call__(self, v: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        B, C, T, D = v.shape
        x = nm.transpose(v, (0, 3, 1, 2))                   # (B,D,C,T)
        if self.fbp_head.kind != "none":
            # frequency features fuse residually so blocks start near identity
            x = nm.add(x, fbp_forward(x, self.fbp_head, self.decomp, training, rng))
        x = nm.reshape(x, (B * D, C, T))
        if self.backbone == "attention":
            seq = nm.transpose(x, (0, 2, 1))                # (B*D,T,C)
            seq = self.encoder(seq)
            x = nm.transpose(seq, (0, 2, 1))
        else:
            x = self.encoder(x, training)
        x = nm.reshape(x, (B, D, C, T))
        return nm.transpose(x, (0, 2, 3, 1))                # (B,C,T,D)


class FeatureAttention(Module):
    """Self-attention across the D feature axis at every time step."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.encoder = TransformerEncoderLayer(channels, heads, rng, dtype)

    def __call__(self, v: Tensor) -> Tensor:
        B, C, T, D = v.shape
        seq = nm.reshape(nm.transpose(v, (0, 2, 3, 1)), (B * T, D, C))
        seq = self.encoder(seq)
        return nm.transpose(nm.reshape(seq, (B, T, D, C)), (0, 3, 1, 2))


class ResidualBlock(Module):
    """One denoising block: step-modulated temporal/feature mixing gated with
    the conditional pathway; emits the (h + residual)/sqrt(2) state and a skip."""

    def __init__(self, cfg: DenoiserConfig, T: int, cond_dim: int,
                 rng: np.random.Generator, dtype=np.float32):
        C = cfg.channels
        self.step_proj = Linear(cfg.step_embed_dim, C, rng, dtype)
        self.temporal = TemporalModule(cfg, T, rng, dtype)
        self.feature_attn = FeatureAttention(C, cfg.heads, rng, dtype)
        self.mid_proj = PointwiseConv(C, 2 * C, rng, dtype)
        self.cond_proj = PointwiseConv(cond_dim, 2 * C, rng, dtype)
        self.out_proj = PointwiseConv(C, 2 * C, rng, dtype)
        self.channels = C

    def __call__(self, h: Tensor, step_emb: Tensor, cond: Tensor,
                 training: bool, rng: np.random.Generator | None):
        C = self.channels
        emb = self.step_proj(nm.reshape(step_emb, (1, -1)))
        y = nm.add(h, nm.reshape(emb, (1, C, 1, 1)))
        y = self.temporal(y, training, rng)
        y = self.feature_attn(y)
        y = nm.add(self.mid_proj(y), self.cond_proj(cond))
        filt = y[:, :C]
        gate = y[:, C:]
        z = nm.mul(nm.tanh(filt), nm.sigmoid(gate))
        o = self.out_proj(z)
        res = o[:, :C]
        skip = o[:, C:]
        inv_sqrt2 = Tensor(np.asarray(1.0 / math.sqrt(2.0), dtype=h.dtype))
        return nm.mul(nm.add(h, res), inv_sqrt2), skip


class Denoiser(Module):
    """Full noise-prediction network for fixed (T, D) and S diffusion steps."""

    def __init__(self, cfg: DenoiserConfig, T: int, D: int, num_steps: int,
                 rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.T = T
        self.D = D
        self.dtype = dtype
        C = cfg.channels
        self.input_proj = PointwiseConv(2, C, rng, dtype)
        self.cond_extractor = PointwiseConv(2, cfg.cond_channels, rng, dtype)
        self.step_embedding = StepEmbedding(num_steps, cfg.step_embed_dim, rng, dtype)
        self.feature_embedding = Tensor(
            rng.uniform(-1.0, 1.0, size=(D, cfg.d_feature)).astype(dtype) /
            math.sqrt(cfg.d_feature), requires_grad=True)
        self.time_table = Tensor(sinusoid_table(T, cfg.d_time, dtype))
        cond_dim = cfg.cond_channels + cfg.d_time + cfg.d_feature + 1
        self.blocks = [ResidualBlock(cfg, T, cond_dim, rng, dtype)
                       for _ in range(cfg.blocks)]
        self.out1 = PointwiseConv(C, C, rng, dtype)
        self.out2 = PointwiseConv(C, 1, rng, dtype, zero_init=True)

    # ------------------------------------------------------------------
    def cond_features(self, x_co: Tensor, m_co: Tensor) -> Tensor:
        """(B,T,D) conditional values + mask -> (B,C_cf,T,D) feature map."""
        if x_co.shape != m_co.shape:
            raise ValueError(f"x_co {x_co.shape} vs m_co {m_co.shape}")
        B, T, D = x_co.shape
        stacked = nm.concat([nm.reshape(x_co, (B, 1, T, D)),
                             nm.reshape(m_co, (B, 1, T, D))], axis=1)
        return nm.relu(self.cond_extractor(stacked))

    def side_info(self, m_co: Tensor) -> SideInfo:
        return SideInfo(time_embedding=self.time_table,
                        feature_embedding=self.feature_embedding,
                        mask_channel=m_co)

    def _cond_stack(self, x_cf: Tensor, side: SideInfo) -> Tensor:
        B, _, T, D = x_cf.shape
        ones = Tensor(np.ones((B, 1, T, D), dtype=self.dtype))
        time_b = nm.reshape(nm.transpose(side.time_embedding, (1, 0)),
                            (1, -1, T, 1))
        time_b = nm.mul(time_b, ones)                       # (B,d_time,T,D)
        feat_b = nm.reshape(nm.transpose(side.feature_embedding, (1, 0)),
                            (1, -1, 1, D))
        feat_b = nm.mul(feat_b, ones)                       # (B,d_feature,T,D)
        mask_b = nm.reshape(side.mask_channel, (B, 1, T, D))
        return nm.concat([x_cf, time_b, feat_b, mask_b], axis=1)

    def predict_eps(self, x_in: Tensor, s: int, x_cf: Tensor, side: SideInfo,
                    training: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
        """Predict the injected noise from the 2-channel input (B,2,T,D)."""
        if x_in.ndim != 4 or x_in.shape[1] != 2:
            raise ValueError(f"x_in must be (B,2,T,D), got {x_in.shape}")
        B, _, T, D = x_in.shape
        emb = self.step_embedding(s)
        cond = self._cond_stack(x_cf, side)
        h = nm.relu(self.input_proj(x_in))
        skip_sum = None
        for block in self.blocks:
            h, skip = block(h, emb, cond, training, rng)
            skip_sum = skip if skip_sum is None else nm.add(skip_sum, skip)
        scale = Tensor(np.asarray(1.0 / math.sqrt(len(self.blocks)), dtype=self.dtype))
        out = nm.relu(nm.mul(skip_sum, scale))
        out = nm.relu(self.out1(out))
        out = self.out2(out)                                # (B,1,T,D)
        return nm.reshape(out, (B, T, D))

    def forward(self, x_in: Tensor, s: int, x_co: Tensor, m_co: Tensor,
                training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Convenience wrapper assembling conditional features and side info."""
        x_cf = self.cond_features(x_co, m_co)
        side = self.side_info(m_co)
        return self.predict_eps(x_in, s, x_cf, side, training, rng)
