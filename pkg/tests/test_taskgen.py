import json
from pathlib import Path

import numpy as np
import pytest

from maskdiff.errors import ConfigError, ContextOverflowError, DataError, VocabularyError
from maskdiff.taskgen import (
    KINDS,
    LABELS,
    WORD_TASKS,
    FewShotExample,
    PromptLayout,
    TaskSpec,
    WordBank,
    all_multidim_datasets,
    all_tasks,
    build_answer_pairs,
    build_corpus,
    default_vocab,
    format_example,
    format_point,
    format_question,
    gen_multidim_dataset,
    gen_number_example,
    gen_word_example,
    layout_prompt,
    load_word_bank,
    make_cell_examples,
    number_label,
    order_examples,
    parse_examples,
    render_cell,
    word_label,
    write_jsonl,
)
from maskdiff.taskgen.layout import BRACKET, OPEN, arrange_examples, question_index

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def bank():
    return load_word_bank()


@pytest.fixture(scope="module")
def vocab():
    return default_vocab()


def test_sixteen_tasks():
    ids = {t.task_id for t in all_tasks()}
    assert len(ids) == 16 and "adjective-smallest" in ids
    assert TaskSpec.from_id("colour-largest").n_test == 1000
    with pytest.raises(ConfigError):
        TaskSpec("fish", "smallest")


def test_adjective_example(bank):
    opts = ("knit", "quirky", "persuade")
    assert word_label(opts, "adjective", bank) == "B"
    ex = FewShotExample(opts, "B")
    assert format_example(ex) == "Options: (A) knit, (B) quirky, (C) persuade\nAnswer:[B].\n\n"


def test_listing_smallest_number():
    assert number_label(("915", "491", "266"), "smallest") == "C"
    assert number_label(("915", "491", "266"), "largest") == "A"


def test_format_is_ascii_and_parses(bank, rng):
    for task in WORD_TASKS:
        ex = gen_word_example(task, bank, rng)
        text = format_example(ex)
        assert text.isascii()
        assert parse_examples(text) == [(ex.options, ex.correct)]
        assert format_question(ex) + f"{ex.correct}].\n\n" == text


def test_word_examples_follow_rule(bank, rng):
    for task in WORD_TASKS:
        for _ in range(50):
            ex = gen_word_example(task, bank, rng)
            assert len(set(ex.options)) == 3
            assert word_label(ex.options, task, bank) == ex.correct
            cats = {bank.category_of(o) for o in ex.options if o != ex.options[LABELS.index(ex.correct)]}
            assert cats <= set(WORD_TASKS[task])


def test_number_examples(rng):
    for _ in range(200):
        ex = gen_number_example("smallest", rng)
        vals = [int(o) for o in ex.options]
        assert len(set(vals)) == 3 and all(1 <= v <= 1000 for v in vals)
        assert vals[LABELS.index(ex.correct)] == min(vals)


def test_single_word_target_list_never_duplicates(rng):
    small = WordBank({"colour": ["red"], "animal": ["cat", "dog"], "object": ["cup"]})
    for _ in range(100):
        ex = gen_word_example("colour", small, rng)
        assert len(set(ex.options)) == 3


def test_tiny_contrast_pool_is_data_error(rng):
    small = WordBank({"colour": ["red"], "animal": ["cat"], "object": []})
    with pytest.raises(DataError):
        gen_word_example("colour", small, rng)


def test_categories_disjoint_and_sized(bank):
    seen = {}
    for cat, words in bank.categories.items():
        assert len(words) >= 40, cat
        for w in words:
            assert w not in seen, (w, cat, seen.get(w))
            seen[w] = cat
    for w in ("knit", "quirky", "persuade"):
        assert w in seen
    # no word looks like a number
    assert not any(w.isdigit() for w in seen)


def test_vocab_single_tokens(vocab):
    assert len(vocab.tokenize("Answer:[")) == 1
    assert len(vocab.tokenize("].")) == 1
    for lab in LABELS + ("Above", "Below"):
        assert len(vocab.tokenize(lab)) == 1
    with pytest.raises(VocabularyError):
        vocab.tokenize("Options: (A) zzqx")


def test_full_suite_tokenizes(vocab):
    for task in all_tasks(n_test=30):
        cell = make_cell_examples(task, 10, 40)
        for r in render_cell(cell, arrangement="mixed"):
            assert vocab.detokenize(vocab.tokenize(r.text)) == r.text
            assert np.array_equal(vocab.encode(r.text), r.ids)


def _layout(n_rel=10, n_dis=40, **kw):
    rel = [FewShotExample(("a", "b", "c"), "A", "relevant") for _ in range(n_rel)]
    dis = [FewShotExample(("1", "2", "3"), "A", "distractor") for _ in range(n_dis)]
    return PromptLayout(rel, dis, rel[0], **kw)


def test_block_position_arithmetic():
    order = arrange_examples(_layout(arrangement=1.0))
    kinds = [e.kind for e in order]
    assert kinds[40:] == ["relevant"] * 10 and kinds[:40] == ["distractor"] * 40
    order = arrange_examples(_layout(arrangement=0.5))
    assert [e.kind for e in order][20:30] == ["relevant"] * 10


def test_mixed_keeps_group_order(rng):
    rel = [FewShotExample((f"r{i}", "x", "y"), "A", "relevant") for i in range(5)]
    dis = [FewShotExample((f"d{i}", "x", "y"), "A", "distractor") for i in range(7)]
    order = arrange_examples(PromptLayout(rel, dis, rel[0], "mixed"), rng)
    assert [e for e in order if e.kind == "relevant"] == rel
    assert [e for e in order if e.kind == "distractor"] == dis


def test_question_index():
    assert question_index("left", 50) == 0
    assert question_index("right", 50) == 50
    assert question_index(0.5, 7) == 4


def test_layout_validation():
    with pytest.raises(ConfigError):
        _layout(extra_masks=2, extra_dots=1, answer_convention=OPEN).validate()
    with pytest.raises(ConfigError):
        _layout(extra_masks=3, answer_convention=BRACKET).validate()
    with pytest.raises(ConfigError):
        _layout(arrangement=1.5).validate()


@pytest.fixture(scope="module")
def cell():
    return make_cell_examples(TaskSpec.from_id("adjective-smallest", seed=3), 10, 40, n_test=5)


def test_bracket_single_mask(cell, vocab):
    for r in render_cell(cell, arrangement=1.0):
        assert int((r.ids == vocab.mask_id).sum()) == 1
        assert r.ids[r.answer_slot] == vocab.mask_id
        assert r.text.endswith("Answer:[<|mask|>].")
        assert r.ids[r.answer_slot + 1] == vocab.id("].")


def test_open_masks_and_dots(cell, vocab):
    r = render_cell(cell, arrangement=1.0, extra_masks=5, n_distractors=10)[0]
    assert r.text.endswith("Answer:[" + "<|mask|>" * 5)
    assert int((r.ids == vocab.mask_id).sum()) == 5
    assert vocab.detokenize(r.ids[: r.answer_slot]).endswith("Answer:[")
    r = render_cell(cell, arrangement=1.0, extra_dots=3, n_distractors=10)[0]
    assert r.text.endswith("Answer:[<|mask|>]....")


def test_cell_shares_examples(cell):
    renders = render_cell(cell, arrangement="mixed", order_seed=4)
    first = [parse_examples(r.text) for r in renders]
    # every prompt carries the same 50 solved examples in the same order
    assert len(renders) == 5
    assert all(f == first[0] for f in first) and len(first[0]) == 50


def test_overflow(cell):
    with pytest.raises(ContextOverflowError):
        render_cell(cell, arrangement=1.0, extra_masks=128, max_context=768)


def test_spans_cover_prompt(cell):
    r = render_cell(cell, arrangement=0.25, question_position=0.5)[0]
    covered = sorted([*r.example_spans, r.question_span])
    assert covered[0][0] == 0 and covered[-1][1] == len(r.ids)
    assert all(a[1] == b[0] for a, b in zip(covered, covered[1:]))


@pytest.mark.parametrize("path", sorted(GOLDEN.glob("*.txt")), ids=lambda p: p.stem)
def test_golden_snapshots(path):
    task, arrangement, qp, k, dots = {
        "adjective-smallest_block1_bracket": ("adjective-smallest", 1.0, "right", 0, 0),
        "colour-largest_mixed_open4": ("colour-largest", "mixed", "right", 4, 0),
        "country-smallest_block0_left": ("country-smallest", 0.0, "left", 0, 0),
        "verb-largest_block05_mid_dots3": ("verb-largest", 0.5, 0.5, 0, 3),
    }[path.stem]
    c = make_cell_examples(TaskSpec.from_id(task, seed=7), n_relevant=3, n_distractors=4, n_test=1)
    r = render_cell(c, arrangement=arrangement, question_position=qp, extra_masks=k, extra_dots=dots, order_seed=7)[0]
    golden = path.read_bytes().decode("utf-8")
    assert r.text == golden
    # audit: the parser finds the 7 solved examples and each label obeys its rule
    bank = load_word_bank()
    parsed = parse_examples(golden)
    assert len(parsed) == 7
    word, number = task.split("-")
    for opts, lab in parsed:
        if opts[0].isdigit():
            assert number_label(opts, number) == lab
        else:
            assert word_label(opts, word, bank) == lab


def test_corpus_rows(vocab):
    X = build_corpus(all_tasks()[:3], 5, 200, seed=1)
    assert X.shape == (5, 200)
    assert np.array_equal(X, build_corpus(all_tasks()[:3], 5, 200, seed=1))
    text = vocab.detokenize(X[0])
    assert text.startswith("Options:")
    assert X.min() >= 0 and X.max() < len(vocab)


def test_answer_pairs(vocab):
    pairs = build_answer_pairs(all_tasks(), 20, seed=2)
    for q, a in pairs:
        assert vocab.detokenize(q).endswith("Answer:[")
        assert vocab.tokens[a[0]] in LABELS and vocab.tokens[a[1]] == "]."
        assert vocab.mask_id not in q


def test_multidim_instances():
    sets = all_multidim_datasets()
    assert len(sets) == 20
    assert {d.kind for d in sets} == set(KINDS)
    for d in sets:
        for xs, ys, n in ((d.train_x, d.train_y, 100), (d.test_x, d.test_y, 1000)):
            assert xs.shape == (n, 3) and xs.dtype.kind == "i"
            assert xs.min() >= 1 and xs.max() <= 100
            assert ys.count("Above") == ys.count("Below") == n // 2


def test_multidim_deterministic():
    a = gen_multidim_dataset("moons", 3)
    b = gen_multidim_dataset("moons", 3)
    assert np.array_equal(a.train_x, b.train_x) and a.test_y == b.test_y


def test_distance_orderings_reverse():
    rng = np.random.default_rng(0)
    pts = rng.permutation(np.arange(1, 101))[:30].reshape(10, 3)
    test_point = np.array([50, 50, 50])
    d = np.linalg.norm(pts - test_point, axis=1)
    assert len(set(d.round(9))) == len(d)
    dec = order_examples(pts, "decreasing-distance", test_point)
    inc = order_examples(pts, "increasing-distance", test_point)
    assert dec.tolist() == inc[::-1].tolist()
    assert d[dec[-1]] == d.min()


def test_point_format():
    assert format_point([3, 14, 15], "Above") == "Input: 3 14 15\nLabel:[Above].\n\n"
    vocab = default_vocab()
    assert vocab.detokenize(vocab.tokenize(format_point([3, 14, 15], "Below"))) == "Input: 3 14 15\nLabel:[Below].\n\n"


def test_jsonl_export(tmp_path, cell):
    path = tmp_path / "x.jsonl"
    write_jsonl(cell.relevant[:2], path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows[0]["kind"] == "relevant" and set(rows[0]) == {"options", "correct", "kind"}


def test_data_dir_override(tmp_path, monkeypatch):
    (tmp_path / "wordlists.tsv").write_text("# test\ncolour\tred\n", encoding="utf-8")
    monkeypatch.setenv("MASKDIFF_DATA_DIR", str(tmp_path))
    assert load_word_bank()["colour"] == ("red",)
    monkeypatch.setenv("MASKDIFF_DATA_DIR", str(tmp_path / "missing"))
    with pytest.raises(DataError):
        load_word_bank()
