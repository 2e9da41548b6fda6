"""Closed vocabulary and greedy longest-match tokenizer.

Words and integers carry their leading space (``" knit"``, ``" 915"``), so
formatted prompts split into tokens without any separate whitespace token
and detokenisation is plain concatenation.
"""

from __future__ import annotations

import numpy as np

from ..errors import VocabularyError
from .tasks import LABELS, NUMBER_RANGE
from .words import WordBank, load_word_bank

MASK = "<|mask|>"
EOS = "<|eos|>"
STRUCTURAL = (
    "Options:",
    " (A)",
    " (B)",
    " (C)",
    ",",
    "\n",
    "\n\n",
    "Answer:[",
    "].",
    ".",
    "Input:",
    "Label:[",
)
CLASS_LABELS = ("Above", "Below")


class Vocab:
    def __init__(self, tokens):
        self.tokens = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.mask_id = self.index[MASK]
        self.eos_id = self.index[EOS]
        self._maxlen = max(len(t) for t in self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def id(self, tok: str) -> int:
        try:
            return self.index[tok]
        except KeyError:
            raise VocabularyError(f"no vocabulary token {tok!r}") from None

    def tokenize(self, text: str) -> list[int]:
        """Greedy longest-prefix match; raises on any unmatched character."""
        ids, i, n = [], 0, len(text)
        index, maxlen = self.index, self._maxlen
        while i < n:
            for L in range(min(maxlen, n - i), 0, -1):
                tid = index.get(text[i : i + L])
                if tid is not None:
                    ids.append(tid)
                    i += L
                    break
            else:
                raise VocabularyError(f"unknown text at offset {i}: {text[i:i + 20]!r}")
        return ids

    def detokenize(self, ids) -> str:
        toks = self.tokens
        return "".join(toks[int(i)] for i in ids)

    def encode(self, text: str) -> np.ndarray:
        return np.asarray(self.tokenize(text), dtype=np.int64)


def build_vocab(bank: WordBank | None = None) -> Vocab:
    """Vocabulary covering every word, integer, label and structural token."""
    bank = bank or load_word_bank()
    lo, hi = NUMBER_RANGE
    toks = [MASK, EOS, *STRUCTURAL, *LABELS, *CLASS_LABELS]
    toks += [" " + w for w in bank.all_words()]
    toks += [f" {n}" for n in range(lo, hi + 1)]
    seen, out = set(), []
    for t in toks:
        if t not in seen:
            seen.add(t)
            out.append(t)
    return Vocab(out)


_cache: dict[int, Vocab] = {}


def default_vocab() -> Vocab:
    """Vocabulary over the active word bank (cached per bank)."""
    bank = load_word_bank()
    if id(bank) not in _cache:
        _cache[id(bank)] = build_vocab(bank)
    return _cache[id(bank)]
