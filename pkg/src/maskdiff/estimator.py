"""scikit-learn style wrappers: tokenizer transformer, pretraining and fine-tuning estimators."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corruption import PromptAnswer
from .decoding import DecodeConfig, decode_batch
from .errors import ConfigError, DataError
from .maloss import FinetuneParams, LossConfig, finetune
from .model import DIFFUSION, Model, ModelConfig, init_model
from .train import PretrainParams, pretrain


def check_token_matrix(X, vocab_size: int | None = None, name: str = "X") -> np.ndarray:
    """A non-empty 2-D integer array of token ids."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DataError(f"{name} must be a non-empty (n_sequences, length) array")
    if arr.dtype.kind not in "iu":
        raise DataError(f"{name} must hold integer token ids")
    if vocab_size is not None and (arr.min() < 0 or arr.max() >= vocab_size):
        raise DataError(f"{name} holds ids outside [0, {vocab_size})")
    return arr.astype(np.int64, copy=False)


def check_sequences(X, name: str = "X") -> list[np.ndarray]:
    """A non-empty list of 1-D integer id sequences (ragged allowed)."""
    seqs = list(X)
    if not seqs:
        raise DataError(f"{name} is empty")
    out = []
    for s in seqs:
        a = np.asarray(s)
        if a.ndim != 1 or a.dtype.kind not in "iu":
            raise DataError(f"every element of {name} must be a 1-D integer sequence")
        out.append(a.astype(np.int64, copy=False))
    return out


class Tokenizer(TransformerMixin, BaseEstimator):
    """Text <-> token-id transformer over the closed task vocabulary."""

    def __init__(self, wordlist=None):
        self.wordlist = wordlist

    def fit(self, X=None, y=None):
        from .taskgen import build_vocab, load_word_bank

        self.vocab_ = build_vocab(load_word_bank(self.wordlist))
        self.vocab_size_ = len(self.vocab_)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocab_")
        if isinstance(X, str):
            raise DataError("transform expects an iterable of strings")
        return [self.vocab_.encode(t) for t in X]

    def inverse_transform(self, X):
        check_is_fitted(self, "vocab_")
        return [self.vocab_.detokenize(s) for s in X]


class _DecodeMixin:
    def predict(self, X):
        """Fill every MASK of each prompt; returns a list of token arrays."""
        check_is_fitted(self, "model_")
        seqs = check_sequences(X)
        cfg = DecodeConfig(self.decode_steps, self.decode_strategy, self.seed)
        out: list = [None] * len(seqs)
        by_len: dict = {}
        for i, s in enumerate(seqs):
            by_len.setdefault(len(s), []).append(i)
        for idx in by_len.values():
            toks, _ = decode_batch(self.model_, np.stack([seqs[i] for i in idx]), cfg, seeds=[[self.seed, i] for i in idx])
            for k, i in enumerate(idx):
                out[i] = toks[k]
        return out


class MaskedDiffusionLM(_DecodeMixin, BaseEstimator):
    """Pretrains a toy masked diffusion LM on a token corpus with ``fit(X)``."""

    def __init__(
        self,
        vocab_size=None,
        n_layers=4,
        d_model=128,
        n_heads=4,
        d_ff=512,
        max_context=768,
        mode=DIFFUSION,
        mask_id=0,
        eos_id=1,
        steps=600,
        batch_size=8,
        lr=1e-3,
        warmup=50,
        p_low=0.05,
        p_high=0.95,
        precision=32,
        decode_steps=1,
        decode_strategy="confidence",
        seed=0,
    ):
        self.vocab_size = vocab_size
        self.n_layers = n_layers
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.max_context = max_context
        self.mode = mode
        self.mask_id = mask_id
        self.eos_id = eos_id
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.p_low = p_low
        self.p_high = p_high
        self.precision = precision
        self.decode_steps = decode_steps
        self.decode_strategy = decode_strategy
        self.seed = seed

    def _model_config(self, X) -> ModelConfig:
        V = self.vocab_size if self.vocab_size is not None else int(X.max()) + 1
        return ModelConfig(
            vocab_size=V, mode=self.mode, n_layers=self.n_layers, d_model=self.d_model, n_heads=self.n_heads,
            d_ff=self.d_ff, max_context=self.max_context, mask_id=self.mask_id, eos_id=self.eos_id, seed=self.seed,
        ).validate()

    def fit(self, X, y=None):
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        X = check_token_matrix(X, self.vocab_size)
        cfg = self._model_config(X)
        self.model_ = init_model(cfg, np.float64 if self.precision == 64 else np.float32)
        params = PretrainParams(self.steps, self.batch_size, self.lr, self.warmup, 1.0, (self.p_low, self.p_high), self.seed)
        self.history_ = pretrain(self.model_, X, params)
        self.n_features_in_ = X.shape[1]
        return self


class MaskAgnosticFineTuner(_DecodeMixin, BaseEstimator):
    """Fine-tunes a pretrained model with ``fit(X=prompts, y=answers)``.

    ``base`` is a fitted :class:`MaskedDiffusionLM` or a :class:`Model`;
    it is copied, never modified.
    """

    def __init__(
        self,
        base=None,
        alpha=0.1,
        beta=1.0,
        p_low=0.2,
        p_high=0.8,
        max_masks=128,
        curriculum_steps=500,
        steps=100,
        lr=1e-4,
        grad_accum=8,
        batch_size=2,
        decode_steps=1,
        decode_strategy="confidence",
        seed=0,
    ):
        self.base = base
        self.alpha = alpha
        self.beta = beta
        self.p_low = p_low
        self.p_high = p_high
        self.max_masks = max_masks
        self.curriculum_steps = curriculum_steps
        self.steps = steps
        self.lr = lr
        self.grad_accum = grad_accum
        self.batch_size = batch_size
        self.decode_steps = decode_steps
        self.decode_strategy = decode_strategy
        self.seed = seed

    def _base_model(self) -> Model:
        if isinstance(self.base, Model):
            return self.base
        if self.base is not None and hasattr(self.base, "model_"):
            return self.base.model_
        raise ConfigError("base must be a Model or a fitted MaskedDiffusionLM")

    def fit(self, X, y):
        prompts, answers = check_sequences(X, "X"), check_sequences(y, "y")
        if len(prompts) != len(answers):
            raise DataError(f"X has {len(prompts)} prompts but y has {len(answers)} answers")
        model = self._base_model().copy()
        data = [PromptAnswer(q, a) for q, a in zip(prompts, answers)]
        cfg = LossConfig(self.alpha, self.beta, self.p_low, self.p_high, self.max_masks, self.curriculum_steps,
                         model.config.max_context)
        params = FinetuneParams(self.steps, self.lr, self.grad_accum, self.batch_size, 1.0, self.seed)
        self.model_, self.history_ = finetune(model, data, cfg, params)
        return self
