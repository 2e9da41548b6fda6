"""Toy transformer in bidirectional (masked diffusion) and causal modes."""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointFormatError, ConfigError, ContextOverflowError, ContractError

DIFFUSION = "diffusion-bidirectional"
CAUSAL = "causal-ar"
MODES = (DIFFUSION, CAUSAL)

CHECKPOINT_MAGIC = b"MDLB"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    mode: str = DIFFUSION
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    max_context: int = 768
    positional: str = "rotary"
    rope_base: float = 10000.0
    mask_id: int = 0
    eos_id: int = 1
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("vocab_size", "n_layers", "d_model", "n_heads", "d_ff", "max_context"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if (self.d_model // self.n_heads) % 2:
            raise ConfigError("rotary positions need an even head dimension")
        if self.positional != "rotary":
            raise ConfigError("only rotary positions are supported")
        for name in ("mask_id", "eos_id"):
            if not 0 <= getattr(self, name) < self.vocab_size:
                raise ConfigError(f"{name} outside the vocabulary")
        if self.mask_id == self.eos_id:
            raise ConfigError("mask_id and eos_id must differ")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_record(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_record(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line:
                continue
            key, _, val = line.partition("=")
            if key not in types:
                raise CheckpointFormatError(f"unknown config key {key!r}")
            t = types[key]
            kw[key] = int(val) if t in (int, "int") else float(val) if t in (float, "float") else val
        return cls(**kw).validate()


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes, in storage order."""
    d, f, V = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes = {"tok_emb": (V, d)}
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes.update(
            {
                p + "ln1.g": (d,),
                p + "ln1.b": (d,),
                p + "attn.wq": (d, d),
                p + "attn.wk": (d, d),
                p + "attn.wv": (d, d),
                p + "attn.wo": (d, d),
                p + "ln2.g": (d,),
                p + "ln2.b": (d,),
                p + "mlp.w1": (d, f),
                p + "mlp.w2": (f, d),
            }
        )
    shapes.update({"ln_f.g": (d,), "ln_f.b": (d,), "out": (d, V)})
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


class Model:
    """Parameters plus architecture config. Parameters are autodiff leaves."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self._rope_cache: dict = {}

    @property
    def dtype(self):
        return self.params["tok_emb"].dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def copy(self) -> "Model":
        return Model(self.config, {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()})

    def astype(self, dtype) -> "Model":
        return Model(self.config, {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.params.items()})

    # -- forward -------------------------------------------------------
    def _rope(self, T: int):
        key = (T, self.dtype)
        if key not in self._rope_cache:
            self._rope_cache[key] = ad.rope_tables(np.arange(T), self.config.head_dim, self.config.rope_base, self.dtype)
        return self._rope_cache[key]

    def embed(self, tokens) -> Tensor:
        ids = self.check_tokens(tokens)
        return ad.embedding(self.params["tok_emb"], ids)

    def check_tokens(self, tokens) -> np.ndarray:
        ids = np.asarray(tokens)
        if ids.dtype.kind not in "iu":
            raise ContractError("tokens must be integer ids")
        if ids.ndim not in (1, 2):
            raise ContractError("tokens must be a sequence or a batch of sequences")
        if ids.shape[-1] > self.config.max_context:
            raise ContextOverflowError(f"sequence length {ids.shape[-1]} exceeds context {self.config.max_context}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ContractError("token id outside the vocabulary")
        return ids

    def hidden(self, x: Tensor) -> Tensor:
        """Run the transformer stack on embeddings ``x`` of shape (B, T, d)."""
        cfg = self.config
        B, T, d = x.shape
        if T > cfg.max_context:
            raise ContextOverflowError(f"sequence length {T} exceeds context {cfg.max_context}")
        H, dh = cfg.n_heads, cfg.head_dim
        cos, sin = self._rope(T)
        scale = 1.0 / math.sqrt(dh)
        causal = None
        if cfg.mode == CAUSAL:
            causal = np.broadcast_to(np.tril(np.ones((T, T), dtype=bool)), (B, H, T, T))
        P = self.params
        for i in range(cfg.n_layers):
            p = f"layers.{i}."
            h = ad.layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])

            def heads(w):
                return ad.transpose(ad.reshape(h @ P[p + w], (B, T, H, dh)), (0, 2, 1, 3))

            q = ad.rope(heads("attn.wq"), cos, sin)
            k = ad.rope(heads("attn.wk"), cos, sin)
            v = heads("attn.wv")
            scores = (q @ ad.transpose(k)) * scale
            att = ad.attention_softmax(scores, causal)
            o = ad.reshape(ad.transpose(att @ v, (0, 2, 1, 3)), (B, T, d))
            x = x + o @ P[p + "attn.wo"]
            h = ad.layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
            x = x + ad.gelu(h @ P[p + "mlp.w1"]) @ P[p + "mlp.w2"]
        return ad.layer_norm(x, P["ln_f.g"], P["ln_f.b"])

    def logits_from_embeddings(self, x: Tensor, rows=None) -> Tensor:
        """Logits for embeddings (B, T, d); ``rows`` selects flat (B*T) rows."""
        h = self.hidden(x)
        B, T, d = h.shape
        if rows is None:
            return h @ self.params["out"]
        flat = ad.reshape(h, (B * T, d))
        return ad.index(flat, np.asarray(rows)) @ self.params["out"]

    def forward(self, tokens, rows=None) -> Tensor:
        """Logits of shape (T, V) for one sequence or (B, T, V) for a batch.

        With ``rows`` (flat indices into the B*T positions) only those logit
        rows are computed, returned as (len(rows), V).
        """
        ids = self.check_tokens(tokens)
        single = ids.ndim == 1
        x = ad.embedding(self.params["tok_emb"], ids[None] if single else ids)
        out = self.logits_from_embeddings(x, rows)
        if rows is None and single:
            return ad.reshape(out, out.shape[1:])
        return out

    __call__ = forward


def init_model(config: ModelConfig, dtype=np.float32) -> Model:
    """Normal(0, 0.02) weights; residual output projections scaled by 1/sqrt(2L)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    resid = 0.02 / math.sqrt(2 * config.n_layers)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            arr = np.ones(shape)
        elif name.endswith(".b"):
            arr = np.zeros(shape)
        else:
            std = resid if name.endswith(("attn.wo", "mlp.w2")) else 0.02
            arr = rng.normal(0.0, std, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return Model(config, params)


def forward(model: Model, tokens, rows=None) -> Tensor:
    return model.forward(tokens, rows)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class PretrainBatch:
    """Clean sequences, their masked versions and per-sequence mask rates."""

    clean: np.ndarray  # (B, T) int
    masked: np.ndarray  # (B, T) int
    mask: np.ndarray  # (B, T) bool
    p: np.ndarray  # (B,) float

    def validate(self, mask_id: int) -> "PretrainBatch":
        if self.clean.shape != self.masked.shape or self.mask.shape != self.clean.shape:
            raise ContractError("batch arrays must share one (B, T) shape")
        if self.p.shape != (self.clean.shape[0],) or np.any(self.p <= 0) or np.any(self.p > 1):
            raise ContractError("p must hold one probability in (0, 1] per sequence")
        if np.any(self.mask.sum(axis=1) == 0):
            raise ContractError("every sequence needs at least one masked token")
        expect = np.where(self.mask, mask_id, self.clean)
        if not np.array_equal(expect, self.masked):
            raise ContractError("masked inputs must equal clean inputs outside the mask")
        return self


def make_pretrain_batch(
    clean, rng: np.random.Generator, mask_id: int, p_range=(0.05, 0.95), stratified: bool = False
) -> PretrainBatch:
    """Mask each sequence i.i.d. with its own p ~ U(p_range); redraw empty masks.

    ``stratified`` draws the batch's p values from B equal slices of the
    range with one shared uniform offset, so each p is still U(p_range) but
    every batch covers the whole range.
    """
    clean = np.asarray(clean)
    if clean.ndim == 1:
        clean = clean[None]
    B, T = clean.shape
    lo, hi = p_range
    if stratified:
        p = lo + (hi - lo) * (np.arange(B) + rng.random()) / B
    else:
        p = rng.uniform(lo, hi, size=B)
    mask = np.zeros((B, T), dtype=bool)
    for b in range(B):
        while True:
            m = rng.random(T) < p[b]
            if m.any():
                break
        mask[b] = m
    masked = np.where(mask, mask_id, clean)
    return PretrainBatch(clean=clean, masked=masked, mask=mask, p=p)


def pretrain_loss(model: Model, batch: PretrainBatch) -> Tensor:
    """Mean over sequences of (1/p) times the mean masked-token cross-entropy."""
    if model.config.mode != DIFFUSION:
        raise ContractError("pretrain_loss needs a diffusion-mode model")
    batch.validate(model.config.mask_id)
    B, T = batch.clean.shape
    rows = np.flatnonzero(batch.mask.reshape(-1))
    logits = model.forward(batch.masked, rows=rows)
    nll = ad.cross_entropy(logits, batch.clean.reshape(-1)[rows])
    counts = batch.mask.sum(axis=1)
    seq_of_row = rows // T
    w = 1.0 / (B * batch.p[seq_of_row] * counts[seq_of_row])
    return (nll * Tensor(w.astype(nll.dtype))).sum()


def ar_loss(model: Model, tokens) -> Tensor:
    """Mean next-token cross-entropy (batched inputs average over all positions)."""
    if model.config.mode != CAUSAL:
        raise ContractError("ar_loss needs a causal-mode model")
    ids = np.asarray(tokens)
    if ids.ndim == 1:
        ids = ids[None]
    B, T = ids.shape
    if T < 2:
        raise ContractError("ar_loss needs sequences of length >= 2")
    rows = (np.arange(B)[:, None] * T + np.arange(T - 1)[None, :]).reshape(-1)
    logits = model.forward(ids, rows=rows)
    return ad.cross_entropy(logits, ids[:, 1:].reshape(-1)).mean()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_size(config: ModelConfig, dtype=np.float32) -> int:
    """Exact byte size of a checkpoint for ``config`` stored as ``dtype``."""
    rec = config.to_record().encode()
    size = 4 + 4 + 4 + len(rec) + 4
    for name, shape in param_shapes(config).items():
        size += 2 + len(name.encode()) + 1 + 1 + 4 * len(shape) + math.prod(shape) * np.dtype(dtype).itemsize
    return size + 4


def save_checkpoint(model: Model, path) -> None:
    """Write magic, version, config record, parameter records, then CRC32."""
    rec = model.config.to_record().encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(rec)), rec]
    parts.append(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        arr = np.ascontiguousarray(t.data)
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> Model:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a model checkpoint (bad magic)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    if zlib.crc32(body) != crc:
        raise CheckpointFormatError("checksum mismatch (file truncated or corrupted)")
    try:
        off = 8
        (n,) = struct.unpack_from("<I", body, off)
        off += 4
        config = ModelConfig.from_record(body[off : off + n].decode())
        off += n
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        params = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off : off + ln].decode()
            off += ln
            tag, ndim = struct.unpack_from("<BB", body, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            dt = _TAG_DTYPES[tag]
            nbytes = math.prod(shape) * dt.itemsize
            if off + nbytes > len(body):
                raise CheckpointFormatError("truncated parameter payload")
            arr = np.frombuffer(body, dtype=dt.newbyteorder("<"), count=math.prod(shape), offset=off)
            params[name] = Tensor(arr.astype(dt).reshape(shape), requires_grad=True)
            off += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, ValueError) as exc:
        raise CheckpointFormatError(f"malformed checkpoint: {exc}") from exc
    if off != len(body):
        raise CheckpointFormatError("trailing bytes after parameter records")
    expected = param_shapes(config)
    if list(params) != list(expected) or any(params[k].shape != s for k, s in expected.items()):
        raise CheckpointFormatError("parameter records do not match the stored config")
    return Model(config, params)


def config_dict(config: ModelConfig) -> dict:
    return asdict(config)
