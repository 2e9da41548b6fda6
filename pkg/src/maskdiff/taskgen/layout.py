"""Prompt layouts: example arrangement, question placement, masks and dots."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ContextOverflowError
from .tasks import (
    NUMBER_TASKS,
    WORD_TASKS,
    FewShotExample,
    TaskSpec,
    format_example,
    format_question,
    gen_number_example,
    gen_word_example,
)
from .vocab import MASK, Vocab, default_vocab
from .words import WordBank, load_word_bank

BRACKET = "bracket-single-mask"
OPEN = "open-bracket-plus-masks"
QUESTION_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class PromptLayout:
    """A fully specified few-shot prompt.

    ``arrangement`` is ``"mixed"`` or a block position r in [0, 1] for the
    intact relevant block. ``question_position`` is ``"left"``, ``"right"``
    or a fraction of the example list. With the open-bracket convention
    ``extra_masks`` counts every mask after ``Answer:[`` (the first is the
    answer slot).
    """

    relevant: list[FewShotExample]
    distractors: list[FewShotExample]
    question: FewShotExample
    arrangement: str | float = 1.0
    question_position: str | float = "right"
    extra_masks: int = 0
    extra_dots: int = 0
    answer_convention: str = BRACKET

    def validate(self) -> "PromptLayout":
        if self.extra_masks < 0 or self.extra_dots < 0:
            raise ConfigError("extra_masks and extra_dots must be non-negative")
        if self.extra_masks and self.extra_dots:
            raise ConfigError("extra_masks and extra_dots cannot both be set")
        if self.answer_convention == BRACKET:
            if self.extra_masks:
                raise ConfigError("the bracket convention holds exactly one mask")
        elif self.answer_convention == OPEN:
            if self.extra_masks < 1:
                raise ConfigError("the open-bracket convention needs at least one mask")
            if self.extra_dots:
                raise ConfigError("dots follow a closed answer bracket")
        else:
            raise ConfigError(f"unknown answer convention {self.answer_convention!r}")
        if self.arrangement != "mixed":
            r = float(self.arrangement)
            if not 0.0 <= r <= 1.0:
                raise ConfigError("block position must lie in [0, 1]")
        qp = self.question_position
        if qp not in ("left", "right") and not 0.0 <= float(qp) <= 1.0:
            raise ConfigError("question position must be left, right or a fraction in [0, 1]")
        return self


@dataclass
class PromptRender:
    text: str
    ids: np.ndarray
    answer_slot: int
    gold_label: str
    example_spans: list[tuple[int, int]] = field(default_factory=list)
    example_kinds: list[str] = field(default_factory=list)
    question_span: tuple[int, int] = (0, 0)


def arrange_examples(layout: PromptLayout, rng: np.random.Generator | None = None) -> list[FewShotExample]:
    """Relevant and distractor examples merged, each group keeping its order."""
    rel, dis = list(layout.relevant), list(layout.distractors)
    total = len(rel) + len(dis)
    if layout.arrangement == "mixed":
        if rng is None:
            raise ConfigError("mixed arrangement needs an rng")
        slots = set(int(i) for i in rng.choice(total, size=len(rel), replace=False)) if rel else set()
        out, ri, di = [], 0, 0
        for i in range(total):
            if i in slots:
                out.append(rel[ri])
                ri += 1
            else:
                out.append(dis[di])
                di += 1
        return out
    start = _round_half_up(float(layout.arrangement) * (total - len(rel)))
    return dis[:start] + rel + dis[start:]


def question_index(position, n_examples: int) -> int:
    if position == "left":
        return 0
    if position == "right":
        return n_examples
    return _round_half_up(float(position) * n_examples)


class _ExampleTokens:
    """Tokenises formatted examples once per distinct text."""

    def __init__(self, vocab: Vocab):
        self.vocab = vocab
        self.cache: dict[str, list[int]] = {}

    def __call__(self, text: str) -> list[int]:
        ids = self.cache.get(text)
        if ids is None:
            ids = self.cache[text] = self.vocab.tokenize(text)
        return ids


_tokenizers: dict[int, _ExampleTokens] = {}


def _tok(vocab: Vocab) -> _ExampleTokens:
    t = _tokenizers.get(id(vocab))
    if t is None or t.vocab is not vocab:
        t = _tokenizers[id(vocab)] = _ExampleTokens(vocab)
    return t


def layout_prompt(
    layout: PromptLayout,
    rng: np.random.Generator | None = None,
    vocab: Vocab | None = None,
    max_context: int | None = None,
) -> PromptRender:
    """Render ``layout`` to text and token ids with the answer-slot index."""
    layout.validate()
    vocab = vocab or default_vocab()
    tok = _tok(vocab)
    examples = arrange_examples(layout, rng)
    qpos = question_index(layout.question_position, len(examples))
    ids: list[int] = []
    spans, kinds = [], []
    answer_slot = -1
    qspan = (0, 0)

    def add_question(last: bool):
        nonlocal answer_slot, qspan
        start = len(ids)
        ids.extend(tok(format_question(layout.question)))
        answer_slot = len(ids)
        if layout.answer_convention == BRACKET:
            ids.append(vocab.mask_id)
            ids.append(vocab.id("]."))
            ids.extend([vocab.id(".")] * layout.extra_dots)
        else:
            ids.extend([vocab.mask_id] * layout.extra_masks)
        if not last:
            ids.append(vocab.id("\n\n"))
        qspan = (start, len(ids))

    for i, ex in enumerate(examples):
        if i == qpos:
            add_question(last=False)
        start = len(ids)
        ids.extend(tok(format_example(ex)))
        spans.append((start, len(ids)))
        kinds.append(ex.kind)
    if qpos >= len(examples):
        add_question(last=True)
    arr = np.asarray(ids, dtype=np.int64)
    if max_context is not None and len(arr) > max_context:
        raise ContextOverflowError(f"prompt of {len(arr)} tokens exceeds context {max_context}")
    return PromptRender(
        text=vocab.detokenize(arr),
        ids=arr,
        answer_slot=answer_slot,
        gold_label=layout.question.correct,
        example_spans=spans,
        example_kinds=kinds,
        question_span=qspan,
    )


# ---------------------------------------------------------------------------
# experiment cells
# ---------------------------------------------------------------------------


def task_rng(task: TaskSpec, stream: int) -> np.random.Generator:
    """Independent generator per (seed, task, stream)."""
    w = list(WORD_TASKS).index(task.word_task)
    n = NUMBER_TASKS.index(task.number_task)
    return np.random.default_rng([task.seed, w, n, stream])


@dataclass
class CellExamples:
    """The fixed in-context examples and the test questions of one task."""

    task: TaskSpec
    relevant: list[FewShotExample]
    distractors: list[FewShotExample]
    questions: list[FewShotExample]


def make_cell_examples(
    task: TaskSpec,
    n_relevant: int = 10,
    n_distractors: int = 40,
    n_test: int | None = None,
    bank: WordBank | None = None,
) -> CellExamples:
    """Draw the in-context set once; every test question reuses it unchanged."""
    bank = bank or load_word_bank()
    n_test = task.n_test if n_test is None else n_test
    r_ctx, r_dis, r_q = task_rng(task, 0), task_rng(task, 1), task_rng(task, 2)
    relevant = [gen_word_example(task.word_task, bank, r_ctx) for _ in range(n_relevant)]
    distractors = [gen_number_example(task.number_task, r_dis) for _ in range(n_distractors)]
    questions = [gen_word_example(task.word_task, bank, r_q, kind="question") for _ in range(n_test)]
    return CellExamples(task, relevant, distractors, questions)


def render_cell(
    cell: CellExamples,
    *,
    arrangement="mixed",
    question_position="right",
    extra_masks: int = 0,
    extra_dots: int = 0,
    n_relevant: int | None = None,
    n_distractors: int | None = None,
    order_seed: int = 0,
    vocab: Vocab | None = None,
    max_context: int | None = None,
) -> list[PromptRender]:
    """One prompt per test question; ``extra_masks`` > 0 selects the open convention."""
    rel = cell.relevant[: len(cell.relevant) if n_relevant is None else n_relevant]
    dis = cell.distractors[: len(cell.distractors) if n_distractors is None else n_distractors]
    conv = OPEN if extra_masks > 0 else BRACKET
    out = []
    for q in cell.questions:
        layout = PromptLayout(rel, dis, q, arrangement, question_position, extra_masks, extra_dots, conv)
        rng = np.random.default_rng([order_seed, 7919])
        out.append(layout_prompt(layout, rng, vocab, max_context))
    return out


# ---------------------------------------------------------------------------
# training corpora
# ---------------------------------------------------------------------------


def sample_episode(
    task: TaskSpec,
    rng: np.random.Generator,
    bank: WordBank,
    max_relevant: int = 10,
    max_distractors: int = 20,
    question_last: bool = False,
) -> list[FewShotExample]:
    """A complete few-shot episode with random sizes and arrangement.

    The held-out relevant example goes at a random index, or last when
    ``question_last`` is set.
    """
    n_rel = int(rng.integers(1, max_relevant + 1))
    n_dis = int(rng.integers(0, max_distractors + 1))
    rel = [gen_word_example(task.word_task, bank, rng) for _ in range(n_rel)]
    dis = [gen_number_example(task.number_task, rng) for _ in range(n_dis)]
    arrangement = "mixed" if rng.random() < 0.5 else float(rng.random())
    layout = PromptLayout(rel[:-1], dis, rel[-1], arrangement)
    examples = arrange_examples(layout, rng)
    qpos = len(examples) if question_last else int(rng.integers(0, len(examples) + 1))
    return examples[:qpos] + [rel[-1]] + examples[qpos:]


def episode_ids(examples, vocab: Vocab) -> list[int]:
    tok = _tok(vocab)
    out: list[int] = []
    for ex in examples:
        out.extend(tok(format_example(ex)))
    return out


def build_corpus(
    tasks: list[TaskSpec],
    n_sequences: int,
    seq_len: int,
    seed: int = 0,
    vocab: Vocab | None = None,
    bank: WordBank | None = None,
    max_relevant: int = 10,
    max_distractors: int = 20,
) -> np.ndarray:
    """Rows of ``seq_len`` tokens, each starting at an episode boundary.

    Episodes are joined by EOS and the last one is cut at ``seq_len``.
    """
    if not tasks:
        raise ConfigError("corpus needs at least one task")
    vocab = vocab or default_vocab()
    bank = bank or load_word_bank()
    rng = np.random.default_rng([seed, 31337])
    out = np.empty((n_sequences, seq_len), dtype=np.int64)
    for r in range(n_sequences):
        row: list[int] = []
        while len(row) < seq_len:
            if row:
                row.append(vocab.eos_id)
            task = tasks[int(rng.integers(len(tasks)))]
            row.extend(episode_ids(sample_episode(task, rng, bank, max_relevant, max_distractors), vocab))
        out[r] = row[:seq_len]
    return out


def build_answer_pairs(
    tasks: list[TaskSpec],
    n_pairs: int,
    seed: int = 0,
    vocab: Vocab | None = None,
    bank: WordBank | None = None,
    max_relevant: int = 10,
    max_distractors: int = 10,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(prompt, answer) id pairs for fine-tuning.

    The prompt is a random episode ending in a question up to ``Answer:[``;
    the answer is the gold label followed by ``].``.
    """
    if not tasks:
        raise ConfigError("need at least one task")
    vocab = vocab or default_vocab()
    bank = bank or load_word_bank()
    tok = _tok(vocab)
    rng = np.random.default_rng([seed, 271828])
    close = vocab.id("].")
    out = []
    for _ in range(n_pairs):
        task = tasks[int(rng.integers(len(tasks)))]
        examples = sample_episode(task, rng, bank, max_relevant, max_distractors, question_last=True)
        q = examples[-1]
        ids = episode_ids(examples[:-1], vocab) + tok(format_question(q))
        out.append((np.asarray(ids, dtype=np.int64), np.asarray([vocab.id(q.correct), close], dtype=np.int64)))
    return out


def write_jsonl(records, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec.to_json() if hasattr(rec, "to_json") else rec, sort_keys=True) + "\n")


def count_masks(render: PromptRender, vocab: Vocab | None = None) -> int:
    vocab = vocab or default_vocab()
    return int(np.count_nonzero(render.ids == vocab.mask_id))


__all__ = [
    "BRACKET",
    "OPEN",
    "MASK",
    "QUESTION_GRID",
    "PromptLayout",
    "PromptRender",
    "CellExamples",
    "arrange_examples",
    "layout_prompt",
    "make_cell_examples",
    "render_cell",
    "sample_episode",
    "build_corpus",
    "build_answer_pairs",
    "write_jsonl",
    "count_masks",
]
