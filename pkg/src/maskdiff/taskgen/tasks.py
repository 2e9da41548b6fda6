"""Few-shot multiple-choice examples: word tasks and number distractor tasks."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from .words import WordBank

LABELS = ("A", "B", "C")

# target category -> contrast categories the other two options come from
WORD_TASKS: dict[str, tuple[str, ...]] = {
    "country": ("name",),
    "capitalised": ("lowercase",),
    "verb": ("adjective", "preposition", "object"),
    "adjective": ("verb", "preposition", "object"),
    "animal": ("object", "fruit", "sport"),
    "colour": ("animal", "object"),
    "emotion": ("colour", "object", "animal"),
    "object": ("emotion", "colour", "adjective"),
}
NUMBER_TASKS = ("smallest", "largest")
NUMBER_RANGE = (1, 1000)


@dataclass(frozen=True)
class TaskSpec:
    word_task: str
    number_task: str
    seed: int = 0
    n_test: int = 1000

    def __post_init__(self):
        if self.word_task not in WORD_TASKS:
            raise ConfigError(f"unknown word task {self.word_task!r}")
        if self.number_task not in NUMBER_TASKS:
            raise ConfigError(f"unknown number task {self.number_task!r}")

    @property
    def task_id(self) -> str:
        return f"{self.word_task}-{self.number_task}"

    @classmethod
    def from_id(cls, task_id: str, seed: int = 0, n_test: int = 1000) -> "TaskSpec":
        word, _, number = task_id.partition("-")
        return cls(word, number, seed, n_test)


def all_tasks(seed: int = 0, n_test: int = 1000) -> list[TaskSpec]:
    """The 16 word x number task combinations."""
    return [TaskSpec(w, n, seed, n_test) for w in WORD_TASKS for n in NUMBER_TASKS]


@dataclass(frozen=True)
class FewShotExample:
    options: tuple[str, str, str]
    correct: str
    kind: str = "relevant"

    def __post_init__(self):
        if len(self.options) != 3 or len(set(self.options)) != 3:
            raise DataError(f"options must be three distinct strings: {self.options}")
        if self.correct not in LABELS:
            raise DataError(f"correct label must be one of {LABELS}")

    def to_json(self) -> dict:
        return {"options": list(self.options), "correct": self.correct, "kind": self.kind}


def gen_word_example(task: str, bank: WordBank, rng: np.random.Generator, kind="relevant") -> FewShotExample:
    """One option from the target category, two from its contrast categories."""
    if task not in WORD_TASKS:
        raise ConfigError(f"unknown word task {task!r}")
    targets = bank[task]
    if not targets:
        raise DataError(f"category {task!r} is empty")
    target = targets[rng.integers(len(targets))]
    pool = [w for c in WORD_TASKS[task] for w in bank[c] if w != target]
    if len(pool) < 2:
        raise DataError(f"contrast categories for {task!r} hold fewer than two words")
    others = [pool[i] for i in rng.choice(len(pool), size=2, replace=False)]
    pos = int(rng.integers(3))
    opts = others[:pos] + [target] + others[pos:]
    return FewShotExample(tuple(opts), LABELS[pos], kind)


def gen_number_example(task: str, rng: np.random.Generator, kind="distractor") -> FewShotExample:
    """Three distinct integers from 1..1000; the answer is the smallest or largest."""
    if task not in NUMBER_TASKS:
        raise ConfigError(f"unknown number task {task!r}")
    lo, hi = NUMBER_RANGE
    nums = rng.choice(hi - lo + 1, size=3, replace=False) + lo
    opts = tuple(str(int(n)) for n in nums)
    return FewShotExample(opts, number_label(opts, task), kind)


def number_label(options, task: str) -> str:
    vals = [int(o) for o in options]
    pick = min(vals) if task == "smallest" else max(vals)
    return LABELS[vals.index(pick)]


def word_label(options, task: str, bank: WordBank) -> str:
    hits = [i for i, o in enumerate(options) if bank.category_of(o) == task]
    if len(hits) != 1:
        raise DataError(f"expected exactly one {task!r} option in {options}")
    return LABELS[hits[0]]


def format_example(ex: FewShotExample) -> str:
    o1, o2, o3 = ex.options
    return f"Options: (A) {o1}, (B) {o2}, (C) {o3}\nAnswer:[{ex.correct}].\n\n"


def format_question(ex: FewShotExample) -> str:
    """The question part of an example, up to and including ``Answer:[``."""
    o1, o2, o3 = ex.options
    return f"Options: (A) {o1}, (B) {o2}, (C) {o3}\nAnswer:["


_EXAMPLE_RE = re.compile(r"Options: \(A\) ([^,\n]+), \(B\) ([^,\n]+), \(C\) ([^,\n]+)\nAnswer:\[([ABC])\]\.\n\n")


def parse_examples(text: str) -> list[tuple[tuple[str, str, str], str]]:
    """Recover (options, label) for every complete formatted example in ``text``."""
    return [((m[1], m[2], m[3]), m[4]) for m in _EXAMPLE_RE.finditer(text)]
