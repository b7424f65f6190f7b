"""Noise schedule, masked training objective, and the ancestral sampler.

The data plane (noising, reverse updates, mask sampling) runs on plain
numpy arrays; gradients only ever flow through the network's noise
prediction, so tensors enter the tape at the model boundary inside
``training_step``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .denoiser import Denoiser
from .numerics import Tensor

__all__ = [
    "NoiseSchedule", "build_schedule", "TrainingMasks", "sample_conditional_mask",
    "forward_noise", "masked_eps_loss", "training_step", "all_steps_loss",
    "reverse_step", "ImputationResult", "impute",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step diffusion coefficients; arrays are indexed by s-1 for s in [1,S]."""

    num_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def _at(self, table: np.ndarray, s: int) -> float:
        if not 1 <= s <= self.num_steps:
            raise ValueError(f"diffusion step {s} outside [1, {self.num_steps}]")
        return float(table[s - 1])

    def beta_at(self, s: int) -> float:
        return self._at(self.beta, s)

    def alpha_at(self, s: int) -> float:
        return self._at(self.alpha, s)

    def alpha_bar_at(self, s: int) -> float:
        return self._at(self.alpha_bar, s)

    def sigma_at(self, s: int) -> float:
        return self._at(self.sigma, s)


def build_schedule(num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.5,
                   kind: str = "quad") -> NoiseSchedule:
    """Variance schedule between the endpoints; 'quad' interpolates sqrt(beta)
    linearly (so beta is quadratic in s), 'linear' interpolates beta itself.

    sigma_s^2 is the posterior variance (1 - abar_{s-1})/(1 - abar_s) * beta_s
    with sigma_1 = 0.
    """
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if kind == "quad":
        beta = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), num_steps) ** 2
    elif kind == "linear":
        beta = np.linspace(beta_start, beta_end, num_steps)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    # endpoints are contractual values; squaring the sqrt grid can drift an ulp
    beta[0] = beta_start
    beta[-1] = beta_end
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    prev_bar = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma2 = (1.0 - prev_bar) / (1.0 - alpha_bar) * beta
    sigma2[0] = 0.0
    return NoiseSchedule(num_steps=num_steps, beta=beta, alpha=alpha,
                         alpha_bar=alpha_bar, sigma=np.sqrt(sigma2))


@dataclass
class TrainingMasks:
    """Observed / conditional / target mask triple with M_ta = M - M_co."""

    observed: np.ndarray
    conditional: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if np.any(self.conditional > self.observed):
            raise ValueError("conditional mask is not a subset of the observed mask")
        if np.any(self.target != self.observed - self.conditional):
            raise ValueError("target mask must equal observed - conditional")


def sample_conditional_mask(observed: np.ndarray, rng: np.random.Generator,
                            ratio_lo: float = 0.1, ratio_hi: float = 0.9) -> TrainingMasks:
    """Hide a per-sample uniform fraction of the observed entries.

    Each batch element draws r ~ U(ratio_lo, ratio_hi) and keeps every
    observed entry with probability 1 - r (element-wise), producing a
    mixture of isolated points and short gaps.
    """
    B = observed.shape[0]
    r = rng.uniform(ratio_lo, ratio_hi, size=(B,) + (1,) * (observed.ndim - 1))
    keep = (rng.random(observed.shape) >= r).astype(observed.dtype)
    cond = observed * keep
    return TrainingMasks(observed=observed, conditional=cond,
                         target=observed - cond)


def forward_noise(x0: np.ndarray, s: int, eps: np.ndarray,
                  sched: NoiseSchedule) -> np.ndarray:
    """x_s = sqrt(abar_s) x0 + sqrt(1 - abar_s) eps."""
    ab = sched.alpha_bar_at(s)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def masked_eps_loss(eps: Tensor, eps_hat: Tensor, target_mask: Tensor) -> Tensor:
    """Mean squared error between true and predicted noise on target entries.

    A batch whose target mask is empty contributes zero loss and zero
    weight (the denominator counts masked entries only, floored at one).
    """
    count = float(target_mask.data.sum())
    diff = nm.mul(nm.sub(eps, eps_hat), target_mask)
    scale = Tensor(np.asarray(1.0 / max(count, 1.0), dtype=eps.dtype))
    return nm.mul(nm.tsum(nm.square(diff)), scale)


def training_step(x: np.ndarray, observed: np.ndarray, model: Denoiser,
                  sched: NoiseSchedule, rng: np.random.Generator,
                  masks: TrainingMasks | None = None, s: int | None = None,
                  eps: np.ndarray | None = None) -> Tensor:
    """One masked denoising objective evaluation (loss tensor, tape attached).

    Samples one diffusion step per batch, a conditional/target mask split,
    and Gaussian noise; all three are injectable for tests.
    """
    dtype = x.dtype
    if masks is None:
        masks = sample_conditional_mask(observed, rng)
    if s is None:
        s = int(rng.integers(1, sched.num_steps + 1))
    if eps is None:
        eps = rng.standard_normal(x.shape).astype(dtype)
    m_co = masks.conditional
    x_s = forward_noise(x, s, eps, sched).astype(dtype)
    x_in = np.stack([m_co * x, (1.0 - m_co) * x_s], axis=1)
    eps_hat = model.forward(Tensor(x_in), s, Tensor(m_co * x), Tensor(m_co),
                            training=True, rng=rng)
    return masked_eps_loss(Tensor(eps), eps_hat, Tensor(masks.target))


def all_steps_loss(x: np.ndarray, masks: TrainingMasks, model: Denoiser,
                   sched: NoiseSchedule, rng: np.random.Generator) -> float:
    """Validation objective: denoising loss averaged over every step."""
    total = 0.0
    with nm.no_grad():
        for s in range(1, sched.num_steps + 1):
            loss = training_step(x, masks.observed, model, sched, rng,
                                 masks=masks, s=s)
            total += loss.item()
    return total / sched.num_steps


def reverse_step(x_s: np.ndarray, s: int, eps_hat: np.ndarray,
                 sched: NoiseSchedule, zeta: np.ndarray | None) -> np.ndarray:
    """One ancestral update:
    x_{s-1} = (x_s - (1-alpha_s)/sqrt(1-abar_s) * eps_hat) / sqrt(alpha_s) + sigma_s * zeta.

    zeta is ignored at s = 1 where the posterior scale is zero.
    """
    a = sched.alpha_at(s)
    ab = sched.alpha_bar_at(s)
    mean = (x_s - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    if s == 1 or zeta is None:
        return mean
    return mean + sched.sigma_at(s) * zeta


@dataclass
class ImputationResult:
    """K sampled trajectories with their mean and per-entry quantiles."""

    samples: np.ndarray                  # (K, B, T, D)
    mean: np.ndarray                     # (B, T, D)
    quantile_levels: tuple
    quantiles: np.ndarray                # (Q, B, T, D)


def impute(x: np.ndarray, m_co: np.ndarray, model: Denoiser, sched: NoiseSchedule,
           num_samples: int, rng: np.random.Generator,
           quantile_levels: tuple = (0.05, 0.25, 0.5, 0.75, 0.95)) -> ImputationResult:
    """Sample ``num_samples`` reverse chains conditioned on the observed part.

    Chains are vectorized into the batch axis; observed entries of every
    output sample are overwritten with their true values.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    K = num_samples
    B, T, D = x.shape
    dtype = x.dtype
    x_rep = np.repeat(x[None], K, axis=0).reshape(K * B, T, D).astype(dtype)
    m_rep = np.repeat(m_co[None], K, axis=0).reshape(K * B, T, D).astype(dtype)
    cond_vals = m_rep * x_rep

    with nm.no_grad():
        x_cf = model.cond_features(Tensor(cond_vals), Tensor(m_rep))
        side = model.side_info(Tensor(m_rep))
        x_ta = rng.standard_normal((K * B, T, D)).astype(dtype)
        for s in range(sched.num_steps, 0, -1):
            x_in = np.stack([cond_vals, (1.0 - m_rep) * x_ta], axis=1)
            eps_hat = model.predict_eps(Tensor(x_in), s, x_cf, side,
                                        training=False).data
            zeta = rng.standard_normal((K * B, T, D)).astype(dtype) if s > 1 else None
            x_ta = reverse_step(x_ta, s, eps_hat, sched, zeta).astype(dtype)

    samples = (cond_vals + (1.0 - m_rep) * x_ta).reshape(K, B, T, D)
    # f64 accumulation keeps the mean of identical observed entries bit-exact
    mean = samples.mean(axis=0, dtype=np.float64).astype(dtype)
    levels = tuple(quantile_levels)
    quants = np.quantile(samples, levels, axis=0) if levels else np.empty((0, B, T, D))
    return ImputationResult(samples=samples, mean=mean,
                            quantile_levels=levels, quantiles=quants)
