"""Real DFT, windowed STFT, and synchrosqueezing transform.

All three transforms are differentiable: forwards run on numpy (rFFT), and
each op carries its exact adjoint so gradients flow through the spectral
path. Conventions:

* rdft output is normalized by 2/T.
* stft uses a periodic Hann window, intra-frame phase reference
  (exp(-2*pi*i*f*k/K) with k the offset inside the frame), frames are the
  maximal hop-aligned set fully inside the signal, and coefficients are
  divided by the window energy E_w = sum w(k)^2.
* frsst reassigns each STFT coefficient to the bin of its estimated local
  frequency (phase derivative across frames, central differences scaled by
  1/hop); coefficients below a relative magnitude floor keep their own bin.
  The reassignment indices are treated as constants by the tape, so the
  scatter-add itself stays differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor, from_op

__all__ = [
    "WindowSpec", "ComplexTensor", "SpectralGram",
    "hann_periodic", "default_stft_window", "default_frsst_window",
    "rdft", "stft", "frsst", "reassignment_bins",
]

MAG_FLOOR_SCALE = 1e-8


def hann_periodic(length: int) -> np.ndarray:
    """Periodic Hann samples w(k) = 0.5 - 0.5 cos(2 pi k / K)."""
    k = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / length)


@dataclass(frozen=True)
class WindowSpec:
    """Analysis window: periodic Hann of ``length`` samples, stride ``hop``."""

    length: int
    hop: int
    kind: str = "hann-periodic"

    def __post_init__(self):
        if self.kind != "hann-periodic":
            raise ValueError(f"unsupported window kind {self.kind!r}")
        if self.length < 2:
            raise ValueError("window length must be >= 2")
        if not 1 <= self.hop <= self.length:
            raise ValueError(f"hop {self.hop} outside [1, {self.length}]")

    def samples(self) -> np.ndarray:
        return hann_periodic(self.length)

    @property
    def energy(self) -> float:
        """E_w = sum_k w(k)^2, recomputed from the samples."""
        w = self.samples()
        return float(np.sum(w * w))

    def frame_count(self, signal_len: int) -> int:
        if self.length > signal_len:
            raise ValueError(
                f"window length {self.length} exceeds signal length {signal_len}")
        return (signal_len - self.length) // self.hop + 1


def default_stft_window(T: int) -> WindowSpec:
    """Window rule used for stft features: K_f = (2/3)T rounded to even, hop K_f/2."""
    K = max(2, 2 * round(T / 3))
    return WindowSpec(length=K, hop=max(1, K // 2))


def default_frsst_window(T: int) -> WindowSpec:
    """Window rule for frsst features: K_f ~ T/2 (even) so >= 3 frames exist."""
    K = max(2, 2 * round(T / 4))
    return WindowSpec(length=K, hop=max(1, K // 2))


@dataclass
class ComplexTensor:
    """Pair of same-shape real tensors holding real/imaginary parts."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(f"re/im shape mismatch: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self) -> tuple:
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data.astype(np.complex128) + 1j * self.im.data


@dataclass
class SpectralGram:
    """Complex time-frequency coefficients with their transform metadata.

    ``coeffs`` has shape (..., F) for kind 'dft' and (..., F, L) otherwise;
    ``length`` is the transform length (T for dft, window length for
    stft/frsst), so F == length//2 + 1 always holds.
    """

    coeffs: ComplexTensor
    kind: str
    length: int
    window: WindowSpec | None = None
    bins: int = field(init=False)
    frames: int | None = field(init=False)

    def __post_init__(self):
        if self.kind not in ("dft", "stft", "frsst"):
            raise ValueError(f"unknown gram kind {self.kind!r}")
        expect_f = self.length // 2 + 1
        if self.kind == "dft":
            self.bins = self.coeffs.shape[-1]
            self.frames = None
        else:
            self.bins = self.coeffs.shape[-2]
            self.frames = self.coeffs.shape[-1]
        if self.bins != expect_f:
            raise ValueError(f"bin count {self.bins} != {expect_f} for length {self.length}")


def _split_stack(stacked: Tensor) -> ComplexTensor:
    return ComplexTensor(re=stacked[0], im=stacked[1])


def rdft(x: Tensor) -> SpectralGram:
    """Normalized real DFT along the last axis: coeffs = (2/T) rfft(x)."""
    T = x.shape[-1]
    if T < 2:
        raise ValueError("rdft needs at least 2 samples")
    F = T // 2 + 1
    c = np.fft.rfft(x.data, axis=-1) * (2.0 / T)
    data = np.stack([c.real, c.imag], axis=0).astype(x.dtype)

    def vjp(g):
        gc = g[0] + 1j * g[1]
        z = np.zeros(gc.shape[:-1] + (T,), dtype=np.complex128)
        z[..., :F] = gc
        # adjoint of (2/T)*rfft: 2 * Re(T-point inverse DFT of zero-padded bins)
        gx = 2.0 * np.real(np.fft.ifft(z, axis=-1))
        return (gx.astype(x.dtype),)

    stacked = from_op(data, (x,), vjp, "rdft")
    return SpectralGram(coeffs=_split_stack(stacked), kind="dft", length=T)


def _frame_view(xd: np.ndarray, win: WindowSpec) -> np.ndarray:
    """(..., L, K) view of hop-aligned frames fully inside the signal."""
    L = win.frame_count(xd.shape[-1])
    sw = np.lib.stride_tricks.sliding_window_view(xd, win.length, axis=-1)
    return sw[..., ::win.hop, :][..., :L, :]


def _stft_stack(x: Tensor, win: WindowSpec) -> Tensor:
    T = x.shape[-1]
    K, H = win.length, win.hop
    L = win.frame_count(T)
    F = K // 2 + 1
    w = win.samples()
    ew = win.energy
    frames = _frame_view(x.data, win) * w            # (..., L, K)
    c = np.fft.rfft(frames, axis=-1) / ew            # (..., L, F)
    c = np.moveaxis(c, -1, -2)                       # (..., F, L)
    data = np.stack([c.real, c.imag], axis=0).astype(x.dtype)

    def vjp(g):
        gc = np.moveaxis(g[0] + 1j * g[1], -2, -1)   # (..., L, F)
        z = np.zeros(gc.shape[:-1] + (K,), dtype=np.complex128)
        z[..., :F] = gc
        seg = K * np.real(np.fft.ifft(z, axis=-1)) * w / ew   # (..., L, K)
        gx = np.zeros(g.shape[1:-2] + (T,), dtype=np.float64)
        for ell in range(L):
            gx[..., ell * H:ell * H + K] += seg[..., ell, :]
        return (gx.astype(x.dtype),)

    return from_op(data, (x,), vjp, "stft")


def stft(x: Tensor, win: WindowSpec) -> SpectralGram:
    """Windowed transform with coefficients divided by the window energy."""
    stacked = _stft_stack(x, win)
    return SpectralGram(coeffs=_split_stack(stacked), kind="stft",
                        length=win.length, window=win)


def reassignment_bins(coeffs: np.ndarray, win: WindowSpec) -> np.ndarray:
    """Target frequency bin for every STFT coefficient of a (..., F, L) gram.

    The local frequency is Re(dS / (i S)) with dS the central difference of
    neighboring frames divided by the hop (one-sided at the two boundary
    frames), mapped to bins via round(K/(2 pi) * omega) and clipped to
    [0, F-1]. Coefficients with |S| < 1e-8*(frame RMS + 1e-12) keep bin f.
    """
    S = np.asarray(coeffs)
    F, L = S.shape[-2], S.shape[-1]
    if L < 3:
        raise ValueError(f"synchrosqueezing needs at least 3 frames, got {L}")
    H = win.hop
    dS = np.empty_like(S)
    dS[..., 1:-1] = (S[..., 2:] - S[..., :-2]) / (2.0 * H)
    dS[..., 0] = (S[..., 1] - S[..., 0]) / H
    dS[..., -1] = (S[..., -1] - S[..., -2]) / H
    mag = np.abs(S)
    rms = np.sqrt(np.mean(mag * mag, axis=-2, keepdims=True))
    small = mag < MAG_FLOOR_SCALE * (rms + 1e-12)
    safe = np.where(small, 1.0, S)
    omega = np.where(small, 0.0, np.real(dS / (1j * safe)))
    xi = np.clip(np.rint(win.length / (2.0 * np.pi) * omega), 0, F - 1).astype(np.int64)
    own = np.broadcast_to(np.arange(F, dtype=np.int64)[:, None], xi.shape)
    return np.where(small, own, xi)


def _reassign_stack(stacked: Tensor, win: WindowSpec) -> Tensor:
    S = stacked.data[0].astype(np.complex128) + 1j * stacked.data[1]
    F, L = S.shape[-2], S.shape[-1]
    xi = reassignment_bins(S, win)
    lead = S.shape[:-2]
    S2 = S.reshape(-1, F, L)
    xi2 = xi.reshape(-1, F, L)
    N = S2.shape[0]
    out = np.zeros_like(S2)
    bidx = np.arange(N)[:, None, None]
    lidx = np.arange(L)[None, None, :]
    np.add.at(out, (bidx, xi2, lidx), S2)
    out = out.reshape(lead + (F, L))
    data = np.stack([out.real, out.imag], axis=0).astype(stacked.dtype)

    def vjp(g):
        # adjoint of scatter-add with fixed indices: gather at the targets
        g0 = np.take_along_axis(g[0].reshape(-1, F, L), xi2, axis=1)
        g1 = np.take_along_axis(g[1].reshape(-1, F, L), xi2, axis=1)
        return (np.stack([g0.reshape(lead + (F, L)),
                          g1.reshape(lead + (F, L))], axis=0).astype(stacked.dtype),)

    return from_op(data, (stacked,), vjp, "frsst-reassign")


def frsst(x: Tensor, win: WindowSpec) -> SpectralGram:
    """Synchrosqueezed STFT: per-frame scatter-add of coefficients into the
    bins of their estimated local frequencies (needs >= 3 frames)."""
    L = win.frame_count(x.shape[-1])
    if L < 3:
        raise ValueError(f"frsst needs at least 3 frames, got {L} "
                         f"(T={x.shape[-1]}, window={win.length}, hop={win.hop})")
    stacked = _stft_stack(x, win)
    squeezed = _reassign_stack(stacked, win)
    return SpectralGram(coeffs=_split_stack(squeezed), kind="frsst",
                        length=win.length, window=win)
