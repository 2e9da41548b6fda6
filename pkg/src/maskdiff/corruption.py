"""Answer noising and paired mask-extended inputs for the mask-agnostic loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContextOverflowError, ContractError, NumericDomainError


@dataclass(frozen=True)
class PromptAnswer:
    q: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.int64))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.int64))
        if self.a.ndim != 1 or self.q.ndim != 1 or len(self.a) < 1:
            raise ContractError("prompt and answer must be 1-D with a non-empty answer")

    @property
    def n_q(self) -> int:
        return len(self.q)

    @property
    def n_a(self) -> int:
        return len(self.a)

    def validate(self, mask_id: int, max_context: int | None = None) -> "PromptAnswer":
        if np.any(self.q == mask_id) or np.any(self.a == mask_id):
            raise ContractError("prompt and answer must not contain MASK")
        if max_context is not None and self.n_q + self.n_a > max_context:
            raise ContextOverflowError(f"example of {self.n_q + self.n_a} tokens exceeds context {max_context}")
        return self


@dataclass(frozen=True)
class MaskingDraw:
    p: float
    u: np.ndarray  # (n_a,) 0/1
    noised: np.ndarray  # (n_a,) ids


@dataclass(frozen=True)
class MaskedPair:
    x1: np.ndarray
    x2: np.ndarray
    labels: np.ndarray  # clean q + a
    answer_idx: np.ndarray  # positions n_q .. n_q + n_a - 1
    l1: int
    l2: int
    n_m: int
    p: float
    mask_id: int

    @property
    def masked_answer(self) -> np.ndarray:
        """Answer positions holding MASK (identical in x1 and x2)."""
        return self.answer_idx[self.x1[self.answer_idx] == self.mask_id]


def noise_answer(pa: PromptAnswer, p: float, rng: np.random.Generator, mask_id: int) -> MaskingDraw:
    """Mask each answer token independently with probability ``p``.

    A draw that masks nothing is redrawn, so at least one token is masked.
    """
    if not 0.0 < p <= 1.0:
        raise NumericDomainError(f"masking probability must lie in (0, 1], got {p}")
    while True:
        u = (rng.random(pa.n_a) < p).astype(np.int64)
        if u.any():
            break
    noised = np.where(u == 1, mask_id, pa.a)
    return MaskingDraw(float(p), u, noised)


def pair_length_bound(n_q: int, n_a: int, max_context: int, max_masks: int) -> int:
    return min(max_context - (n_q + n_a), max_masks)


def sample_pair_lengths(n_q: int, n_a: int, max_context: int, max_masks: int, rng: np.random.Generator):
    """Two distinct appended-mask counts, uniform without replacement on [0, bound]."""
    bound = pair_length_bound(n_q, n_a, max_context, max_masks)
    if bound < 1:
        raise ContractError(f"mask-length bound {bound} < 1 leaves no two distinct lengths")
    l1, l2 = rng.choice(bound + 1, size=2, replace=False)
    return int(l1), int(l2)


def assemble_pair(
    pa: PromptAnswer,
    draw: MaskingDraw,
    l1: int,
    l2: int,
    mask_id: int,
    eos_id: int,
    max_context: int | None = None,
) -> MaskedPair:
    """``q + noised answer + MASK * l_i``, EOS-padded to a common length."""
    if l1 == l2:
        raise ContractError("l1 and l2 must differ")
    if min(l1, l2) < 0:
        raise ContractError("appended mask counts must be non-negative")
    base = np.concatenate([pa.q, draw.noised])
    L = len(base) + max(l1, l2)
    if max_context is not None and L > max_context:
        raise ContextOverflowError(f"paired input of {L} tokens exceeds context {max_context}")

    def build(l):
        x = np.full(L, eos_id, dtype=np.int64)
        x[: len(base)] = base
        x[len(base) : len(base) + l] = mask_id
        return x

    answer_idx = np.arange(pa.n_q, pa.n_q + pa.n_a)
    x1, x2 = build(l1), build(l2)
    n_m = int(np.count_nonzero(x1[answer_idx] == mask_id))
    if n_m < 1:
        raise ContractError("the noised answer holds no MASK")
    return MaskedPair(
        x1=x1,
        x2=x2,
        labels=np.concatenate([pa.q, pa.a]),
        answer_idx=answer_idx,
        l1=int(l1),
        l2=int(l2),
        n_m=n_m,
        p=draw.p,
        mask_id=mask_id,
    )
