"""Evaluation data: word/number few-shot tasks, prompt layouts, vocabulary."""

from .layout import (
    BRACKET,
    OPEN,
    QUESTION_GRID,
    CellExamples,
    PromptLayout,
    PromptRender,
    arrange_examples,
    build_answer_pairs,
    build_corpus,
    layout_prompt,
    make_cell_examples,
    render_cell,
    sample_episode,
    write_jsonl,
)
from .multidim import KINDS, MultiDimDataset, all_multidim_datasets, format_point, gen_multidim_dataset, order_examples
from .tasks import (
    LABELS,
    NUMBER_TASKS,
    WORD_TASKS,
    FewShotExample,
    TaskSpec,
    all_tasks,
    format_example,
    format_question,
    gen_number_example,
    gen_word_example,
    number_label,
    parse_examples,
    word_label,
)
from .vocab import EOS, MASK, Vocab, build_vocab, default_vocab
from .words import WordBank, load_word_bank

__all__ = [
    "BRACKET",
    "OPEN",
    "QUESTION_GRID",
    "CellExamples",
    "PromptLayout",
    "PromptRender",
    "arrange_examples",
    "build_answer_pairs",
    "build_corpus",
    "layout_prompt",
    "make_cell_examples",
    "render_cell",
    "sample_episode",
    "write_jsonl",
    "KINDS",
    "MultiDimDataset",
    "all_multidim_datasets",
    "format_point",
    "gen_multidim_dataset",
    "order_examples",
    "LABELS",
    "NUMBER_TASKS",
    "WORD_TASKS",
    "FewShotExample",
    "TaskSpec",
    "all_tasks",
    "format_example",
    "format_question",
    "gen_number_example",
    "gen_word_example",
    "number_label",
    "parse_examples",
    "word_label",
    "EOS",
    "MASK",
    "Vocab",
    "build_vocab",
    "default_vocab",
    "WordBank",
    "load_word_bank",
]
