"""Optimizer and the masked-diffusion training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffusion as df
from .denoiser import Denoiser
from .numerics import backward

__all__ = ["NumericError", "Adam", "TrainHistory", "train_model"]


class NumericError(Exception):
    """Non-finite values encountered during optimization."""


class Adam:
    """Adam with bias correction over a named parameter list."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for _, p in self.params]
        self._v = [np.zeros_like(p.data) for _, p in self.params]

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for (name, p), m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - update.astype(p.data.dtype)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")


def _decayed_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Base rate cut by 10x at 75% and again at 90% of the epoch budget."""
    lr = base_lr
    if epochs >= 2 and epoch >= int(0.75 * epochs):
        lr *= 0.1
    if epochs >= 2 and epoch >= int(0.9 * epochs):
        lr *= 0.1
    return lr


def train_model(model: Denoiser, train_values: np.ndarray, train_observed: np.ndarray,
                val_values: np.ndarray, val_observed: np.ndarray,
                sched: df.NoiseSchedule, epochs: int, batch_size: int,
                lr: float, seed: int, log=None, val_every: int = 1) -> tuple:
    """Optimize the denoiser; returns (history, best state dict).

    Deterministic given the seed: batch shuffling, mask/noise draws, and the
    per-epoch validation stream each use generators derived from it. The
    best-validation parameter snapshot is returned alongside the history.
    Raises NumericError as soon as a loss turns non-finite.
    """
    if train_values.shape[0] < 1:
        raise ValueError("empty training set")
    opt = Adam(list(model.named_parameters()), lr=lr)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA]))
    step_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB]))
    val_mask_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC]))
    val_masks = df.sample_conditional_mask(val_observed, val_mask_rng) \
        if val_values.shape[0] else None

    history = TrainHistory()
    best_state: dict[str, np.ndarray] = {}
    n = train_values.shape[0]
    for epoch in range(epochs):
        epoch_lr = _decayed_lr(lr, epoch, epochs)
        opt.lr = epoch_lr
        order = shuffle_rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = train_values[idx]
            mb = train_observed[idx]
            opt.zero_grad()
            loss = df.training_step(xb, mb, model, sched, step_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite training loss {value} at epoch {epoch + 1}, "
                    f"batch {batches + 1}")
            backward(loss)
            opt.step()
            total += value
            batches += 1
        history.train_loss.append(total / max(batches, 1))
        history.lr.append(epoch_lr)

        validate_now = val_masks is not None and (
            (epoch + 1) % val_every == 0 or epoch == epochs - 1)
        if validate_now:
            # fixed masks and identically reseeded noise keep epochs comparable
            val_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD]))
            vloss = df.all_steps_loss(val_values, val_masks, model, sched, val_rng)
            if not np.isfinite(vloss):
                raise NumericError(f"non-finite validation loss at epoch {epoch + 1}")
            history.val_loss.append(vloss)
            if vloss < history.best_val_loss:
                history.best_val_loss = vloss
                history.best_epoch = epoch
                best_state = {name: t.data.copy()
                              for name, t in model.named_state()}
        if log is not None:
            vtxt = f" val={history.val_loss[-1]:.5f}" if validate_now else ""
            log(f"epoch {epoch + 1}/{epochs} loss={history.train_loss[-1]:.5f}{vtxt} "
                f"lr={epoch_lr:g}")

    if not best_state:
        best_state = {name: t.data.copy() for name, t in model.named_state()}
        history.best_epoch = epochs - 1
    return history, best_state


def load_state(model: Denoiser, state: dict) -> None:
    """Copy a named state dict into the model, validating names and shapes."""
    own = dict(model.named_state())
    missing = set(own) - set(state)
    extra = set(state) - set(own)
    if missing or extra:
        raise ValueError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, arr in state.items():
        t = own[name]
        if t.data.shape != arr.shape:
            raise ValueError(f"{name}: shape {arr.shape} != expected {t.data.shape}")
        t.data = arr.astype(t.data.dtype).copy()
