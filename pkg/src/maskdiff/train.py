"""Optimizer and the pretraining loops (masked diffusion and AR baseline)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .model import CAUSAL, DIFFUSION, Model, ar_loss, make_pretrain_batch, pretrain_loss

log = logging.getLogger(__name__)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if not np.isfinite(total):
        raise NumericError("non-finite gradient norm")
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(scale)
    return total


class Adam:
    """Adam with a fixed step size and no weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


@dataclass
class PretrainParams:
    steps: int = 1000
    batch_size: int = 8
    lr: float = 1e-3
    warmup: int = 50
    max_grad_norm: float = 1.0
    p_range: tuple = (0.05, 0.95)
    seed: int = 0
    stratified: bool = True
    betas: tuple = (0.9, 0.99)
    log_every: int = 50
    history: list = field(default_factory=list)

    def validate(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("steps >= 0, batch_size >= 1 and lr > 0 are required")
        lo, hi = self.p_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError("p_range must satisfy 0 < low <= high <= 1")
        if not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("Adam betas must lie in [0, 1)")
        return self


def pretrain(model: Model, sequences: np.ndarray, params: PretrainParams, callback=None) -> list[dict]:
    """Train ``model`` in place on rows of ``sequences`` (N, T).

    Diffusion models minimise the 1/p-weighted masked loss, causal models the
    next-token loss. Returns one log record per step.
    """
    params.validate()
    seqs = np.asarray(sequences)
    if seqs.ndim != 2 or len(seqs) == 0:
        raise ConfigError("pretraining corpus must be a non-empty (N, T) array")
    rng = np.random.default_rng(params.seed)
    opt = Adam(model.parameters(), lr=params.lr, betas=params.betas)
    records = []
    for step in range(params.steps):
        idx = rng.integers(0, len(seqs), size=params.batch_size)
        opt.lr = params.lr * min(1.0, (step + 1) / max(1, params.warmup))
        opt.zero_grad()
        if model.config.mode == DIFFUSION:
            batch = make_pretrain_batch(seqs[idx], rng, model.config.mask_id, params.p_range, params.stratified)
            loss = pretrain_loss(model, batch)
        elif model.config.mode == CAUSAL:
            loss = ar_loss(model, seqs[idx])
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss at step {step}")
        loss.backward()
        gnorm = clip_grad_norm(model.parameters(), params.max_grad_norm)
        opt.step()
        rec = {"step": step, "loss": value, "grad_norm": gnorm, "lr": opt.lr}
        records.append(rec)
        if params.log_every and step % params.log_every == 0:
            log.info("pretrain step %d loss %.4f", step, value)
        if callback is not None:
            callback(rec)
    return records
