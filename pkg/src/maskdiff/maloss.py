"""Mask-agnostic fine-tuning: paired CE + TV loss, mask-length curriculum, training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corruption import MaskedPair, PromptAnswer, assemble_pair, noise_answer, sample_pair_lengths
from .errors import ConfigError, ContractError, DataError, NumericError
from .model import DIFFUSION, Model
from .train import Adam, clip_grad_norm

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "ce", "tv", "total", "lr", "max_masks_current")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    beta: float = 1.0
    p_low: float = 0.2
    p_high: float = 0.8
    max_masks: int = 128
    curriculum_steps: int = 500
    max_context: int = 768

    def validate(self) -> "LossConfig":
        if not 0.0 <= self.p_low <= self.p_high <= 1.0:
            raise ConfigError("need 0 <= p_low <= p_high <= 1")
        if self.p_low <= 0.0:
            raise ConfigError("p_low must be positive: the loss divides by p")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.max_masks < 1 or self.curriculum_steps < 1:
            raise ConfigError("max_masks and curriculum_steps must be >= 1")
        return self


@dataclass
class LossBreakdown:
    ce: Tensor
    tv: Tensor
    total: Tensor

    def values(self) -> tuple[float, float, float]:
        return self.ce.item(), self.tv.item(), self.total.item()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _masked_rows(pair: MaskedPair) -> np.ndarray:
    idx = pair.masked_answer
    if len(idx) == 0 or pair.n_m == 0:
        raise ContractError("no masked answer position")
    if not np.all(pair.x2[idx] == pair.mask_id):
        raise ContractError("x1 and x2 disagree on the masked answer positions")
    return idx


def _ce_rows(r1: Tensor, r2: Tensor, targets: np.ndarray, p: float, n_m: int) -> Tensor:
    s = ad.cross_entropy(r1, targets).sum() + ad.cross_entropy(r2, targets).sum()
    return s * (1.0 / (2.0 * p * n_m))


def _tv_rows(r1: Tensor, r2: Tensor, p: float, n_m: int) -> Tensor:
    diff = ad.tensor_abs(ad.softmax(r1) - ad.softmax(r2))
    return diff.sum() * (0.5 * p / n_m)


def ce_term(logits1, logits2, pair: MaskedPair) -> Tensor:
    """Cross-entropy on the masked answer tokens, averaged over both inputs, weighted 1/p."""
    idx = _masked_rows(pair)
    l1, l2 = _as_tensor(logits1), _as_tensor(logits2)
    return _ce_rows(l1[idx], l2[idx], pair.labels[idx], pair.p, pair.n_m)


def tv_term(logits1, logits2, pair: MaskedPair) -> Tensor:
    """Half-L1 distance between the two predictive distributions, weighted p/n_m."""
    idx = _masked_rows(pair)
    l1, l2 = _as_tensor(logits1), _as_tensor(logits2)
    return _tv_rows(l1[idx], l2[idx], pair.p, pair.n_m)


def ma_loss(logits1, logits2, pair: MaskedPair, cfg: LossConfig) -> LossBreakdown:
    ce = ce_term(logits1, logits2, pair)
    tv = tv_term(logits1, logits2, pair)
    return LossBreakdown(ce, tv, ce * cfg.alpha + tv * cfg.beta)


def pair_loss(model: Model, pair: MaskedPair, cfg: LossConfig) -> LossBreakdown:
    """ma_loss with both inputs in one (2, L) forward, computing only the needed logit rows."""
    idx = _masked_rows(pair)
    L = len(pair.x1)
    rows = np.concatenate([idx, L + idx])
    out = model.forward(np.stack([pair.x1, pair.x2]), rows=rows)
    m = len(idx)
    r1, r2 = out[:m], out[m:]
    ce = _ce_rows(r1, r2, pair.labels[idx], pair.p, pair.n_m)
    tv = _tv_rows(r1, r2, pair.p, pair.n_m)
    return LossBreakdown(ce, tv, ce * cfg.alpha + tv * cfg.beta)


def curriculum_max_masks(step: int, cfg: LossConfig) -> int:
    """Linear ramp from 1 at step 0 to ``max_masks`` at ``curriculum_steps``, rounded down."""
    if step < 0:
        raise ContractError("step must be non-negative")
    M, C = cfg.max_masks, cfg.curriculum_steps
    if step >= C:
        return M
    if step == 0 or C == 1:
        return 1
    return max(1, 1 + ((step - 1) * (M - 1)) // (C - 1))


@dataclass
class FinetuneParams:
    steps: int = 100
    lr: float = 1e-4
    grad_accum: int = 8
    batch_size: int = 2
    max_grad_norm: float = 1.0
    seed: int = 0

    def validate(self) -> "FinetuneParams":
        if self.steps < 0 or self.grad_accum < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("steps >= 0, grad_accum >= 1, batch_size >= 1 and lr > 0 are required")
        return self


def make_pair(
    pa: PromptAnswer, step: int, cfg: LossConfig, rng: np.random.Generator, mask_id: int, eos_id: int
) -> MaskedPair:
    p = float(rng.uniform(cfg.p_low, cfg.p_high))
    draw = noise_answer(pa, p, rng, mask_id)
    l1, l2 = sample_pair_lengths(pa.n_q, pa.n_a, cfg.max_context, curriculum_max_masks(step, cfg), rng)
    return assemble_pair(pa, draw, l1, l2, mask_id, eos_id, cfg.max_context)


def finetune(
    model: Model,
    dataset: list[PromptAnswer],
    cfg: LossConfig,
    params: FinetuneParams,
    log_path=None,
    callback=None,
) -> tuple[Model, list[dict]]:
    """Fine-tune ``model`` in place with the mask-agnostic loss.

    Each optimizer step accumulates ``grad_accum * batch_size`` examples,
    each with its own p and its own pair of appended-mask lengths.
    """
    cfg.validate()
    params.validate()
    if model.config.mode != DIFFUSION:
        raise ContractError("fine-tuning needs a diffusion-mode model")
    if not dataset:
        raise DataError("fine-tuning dataset is empty")
    mask_id, eos_id = model.config.mask_id, model.config.eos_id
    N = min(cfg.max_context, model.config.max_context)
    if N != cfg.max_context:
        cfg = LossConfig(**{**cfg.__dict__, "max_context": N})
    for pa in dataset:
        pa.validate(mask_id, N - 1)

    rng = np.random.default_rng(params.seed)
    opt = Adam(model.parameters(), lr=params.lr)
    per_step = params.grad_accum * params.batch_size
    records = []
    for step in range(params.steps):
        opt.zero_grad()
        ce_sum = tv_sum = tot_sum = 0.0
        for _ in range(per_step):
            pa = dataset[int(rng.integers(len(dataset)))]
            pair = make_pair(pa, step, cfg, rng, mask_id, eos_id)
            br = pair_loss(model, pair, cfg)
            ce, tv, tot = br.values()
            if not np.isfinite(tot):
                raise NumericError(f"non-finite fine-tuning loss at step {step}")
            ce_sum, tv_sum, tot_sum = ce_sum + ce, tv_sum + tv, tot_sum + tot
            (br.total * (1.0 / per_step)).backward()
        clip_grad_norm(model.parameters(), params.max_grad_norm)
        opt.step()
        rec = {
            "step": step,
            "ce": ce_sum / per_step,
            "tv": tv_sum / per_step,
            "total": tot_sum / per_step,
            "lr": params.lr,
            "max_masks_current": curriculum_max_masks(step, cfg),
        }
        records.append(rec)
        log.debug("finetune step %d total %.5f", step, rec["total"])
        if callback is not None:
            callback(rec)
    if log_path is not None:
        write_log(records, log_path)
    return model, records


def write_log(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in records:
            w.writerow([r["step"], repr(r["ce"]), repr(r["tv"]), repr(r["total"]), repr(r["lr"]), r["max_masks_current"]])
