"""Greedy single-step decoding, iterative unmasking, and answer-slot diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .errors import ConfigError, ContractError

STRATEGIES = ("random", "confidence")


@dataclass(frozen=True)
class DecodeConfig:
    steps: int = 1
    strategy: str = "confidence"
    seed: int = 0

    def validate(self) -> "DecodeConfig":
        if self.steps < 1:
            raise ConfigError("decoding needs at least one step")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        return self


@dataclass
class DecodeDiagnostics:
    confidence: dict[int, float] = field(default_factory=dict)
    entropy: dict[int, float] = field(default_factory=dict)
    order: list[tuple[int, int]] = field(default_factory=list)


def _log_probs(logits: np.ndarray) -> np.ndarray:
    x = logits.astype(np.float64)
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def distribution_stats(logits: np.ndarray):
    """Greedy token, its probability and the entropy (nats) for each logit row.

    ``np.argmax`` returns the first maximum, so ties go to the lowest id.
    """
    lp = _log_probs(np.atleast_2d(logits))
    p = np.exp(lp)
    tok = lp.argmax(axis=-1)
    conf = p[np.arange(len(p)), tok]
    ent = -(p * np.where(p > 0, lp, 0.0)).sum(axis=-1)
    return tok, conf, np.maximum(ent, 0.0)


def _rows_logits(model, seqs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    with no_grad():
        return model.forward(seqs, rows=rows).data


def _as_batch(seq, mask_id: int) -> np.ndarray:
    x = np.array(seq, dtype=np.int64, copy=True)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ContractError("expected a token sequence or a (B, T) batch")
    if np.any((x == mask_id).sum(axis=1) == 0):
        raise ContractError("every sequence needs at least one MASK to decode")
    return x


def decode_batch(model, seqs, cfg: DecodeConfig = DecodeConfig(), seeds=None, dump=None):
    """Decode a (B, T) batch; returns (tokens, [DecodeDiagnostics] * B).

    At every step the remaining masks of each row are re-scored from a fresh
    forward pass and ``ceil(remaining / steps_left)`` of them are filled with
    their argmax. ``seeds`` keys the random order per row (default
    ``[cfg.seed, row]``). ``dump``, if a list, receives one record per
    decoded position and step for logit-dump files.
    """
    cfg.validate()
    mask_id = model.config.mask_id
    x = _as_batch(seqs, mask_id)
    B, T = x.shape
    diags = [DecodeDiagnostics() for _ in range(B)]
    rngs = None
    if cfg.strategy == "random":
        keys = seeds if seeds is not None else [[cfg.seed, b] for b in range(B)]
        rngs = [np.random.default_rng(k) for k in keys]
    for step in range(cfg.steps):
        masked = [np.flatnonzero(x[b] == mask_id) for b in range(B)]
        if not any(len(m) for m in masked):
            break
        rows = np.concatenate([b * T + m for b, m in enumerate(masked)])
        logits_rows = _rows_logits(model, x, rows)
        tok, conf, ent = distribution_stats(logits_rows)
        off = 0
        steps_left = cfg.steps - step
        for b, pos in enumerate(masked):
            n = len(pos)
            sl = slice(off, off + n)
            off += n
            if n == 0:
                continue
            g = n if steps_left == 1 else math.ceil(n / steps_left)
            if cfg.strategy == "confidence":
                pick = np.lexsort((pos, -conf[sl]))[:g]
            else:
                pick = np.sort(rngs[b].choice(n, size=g, replace=False))
            t, c, e = tok[sl], conf[sl], ent[sl]
            for k in pick:
                j = int(pos[k])
                x[b, j] = t[k]
                d = diags[b]
                d.confidence[j] = float(c[k])
                d.entropy[j] = float(e[k])
                d.order.append((step, j))
            if dump is not None:
                _dump_rows(dump, b, step, pos, logits_rows[sl])
    return x, diags


def _dump_rows(dump: list, b: int, step: int, positions, logits, top_k: int = 5):
    lp = _log_probs(logits)
    for j, row in zip(positions, lp):
        order = np.lexsort((np.arange(len(row)), -row))[:top_k]
        for rank, t in enumerate(order):
            dump.append({"row": b, "step": step, "position": int(j), "rank": rank, "token": int(t), "prob": float(np.exp(row[t]))})


def write_logit_dump(records, path) -> None:
    cols = ("row", "step", "position", "rank", "token", "prob")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            w.writerow([r[c] if c != "prob" else repr(r[c]) for c in cols])


def decode_single_step(model, seq):
    """One forward pass; every MASK becomes its greedy argmax."""
    toks, diags = decode_batch(model, seq, DecodeConfig(steps=1))
    return (toks[0], diags[0]) if np.ndim(seq) == 1 else (toks, diags)


def iterative_unmask(model, seq, cfg: DecodeConfig):
    toks, diags = decode_batch(model, seq, cfg)
    return (toks[0], diags[0]) if np.ndim(seq) == 1 else (toks, diags)


def slot_distributions(model, seqs, slots) -> np.ndarray:
    """Log-probabilities (B, V) at one position per sequence, from a single forward."""
    x = np.asarray(seqs, dtype=np.int64)
    if x.ndim == 1:
        x = x[None]
    slots = np.broadcast_to(np.asarray(slots, dtype=np.int64), (len(x),))
    mask_id = model.config.mask_id
    if np.any(x[np.arange(len(x)), slots] != mask_id):
        raise ContractError("the answer slot must hold a MASK")
    rows = np.arange(len(x)) * x.shape[1] + slots
    return _log_probs(_rows_logits(model, x, rows))


def answer_confidence_entropy(model, seq, slot: int | None = None) -> tuple[float, float]:
    """Greedy-token probability and entropy at the answer slot (the first MASK by default)."""
    ids = np.asarray(seq, dtype=np.int64)
    if ids.ndim != 1:
        raise ContractError("expected one token sequence")
    if slot is None:
        masks = np.flatnonzero(ids == model.config.mask_id)
        if len(masks) == 0:
            raise ContractError("prompt holds no MASK")
        slot = int(masks[0])
    _, conf, ent = distribution_stats(slot_distributions(model, ids, slot))
    return float(conf[0]), float(ent[0])
