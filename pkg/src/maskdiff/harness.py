"""Experiment battery: cell evaluation, sweeps, metrics and gradient attribution."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .decoding import DecodeConfig, decode_batch, distribution_stats, slot_distributions
from .errors import ConfigError, ContractError, UndefinedMetricError
from .taskgen import LABELS, TaskSpec, default_vocab, make_cell_examples, render_cell
from .taskgen.layout import OPEN, PromptLayout, PromptRender, layout_prompt

CSV_COLUMNS = (
    "experiment",
    "task_id",
    "seed",
    "cell_key",
    "cell_value",
    "extra_masks",
    "steps",
    "strategy",
    "accuracy",
    "ci_low",
    "ci_high",
    "confidence",
    "entropy",
)

EXPERIMENTS = (
    "locality",
    "mask-location",
    "extra-mask-sweep",
    "dots-ablation",
    "distractor-sweep",
    "unmask-recovery",
    "locality-x-masks",
    "attribution",
    "mask-gradient-table",
    "confidence-entropy",
    "few-step-robustness",
    "gain-vs-degradation",
)

MASK_GRID = (1, 2, 4, 8, 16, 32, 64, 128)
Z95 = 1.959963984540054


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    experiment: str = "locality"
    tasks: tuple = ()  # task ids; empty means all 16
    seeds: tuple = (0,)
    n_test: int = 50
    n_relevant: int = 10
    n_distractors: int = 40
    block_positions: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    question_positions: tuple = ("left", 0.5, "right")
    mask_grid: tuple = (0,) + MASK_GRID
    distractor_grid: tuple = (0, 10, 20, 40)
    distractor_masks: tuple = (0, 32)
    steps_grid: tuple = (1, 2, 4, 6, 40)
    strategies: tuple = ("random", "confidence")
    shots: tuple = (5, 25)
    degradation_masks: tuple = (1, 200)
    n_orderings: int = 10
    n_questions: int = 20
    appended_masks: int = 50
    batch_size: int = 16
    max_context: int | None = None

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if len(self.seeds) < 1:
            raise ConfigError("at least one seed is required")
        if self.n_test < 1 or self.batch_size < 1:
            raise ConfigError("n_test and batch_size must be >= 1")
        for name in ("block_positions", "question_positions", "mask_grid", "distractor_grid", "steps_grid", "strategies"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"grid {name} is empty")
        if any(k < 0 for k in self.mask_grid):
            raise ConfigError("mask counts must be non-negative")
        for t in self.tasks:
            TaskSpec.from_id(t)
        return self

    def task_specs(self, seed: int) -> list[TaskSpec]:
        from .taskgen import all_tasks

        if not self.tasks:
            return all_tasks(seed=seed, n_test=self.n_test)
        return [TaskSpec.from_id(t, seed=seed, n_test=self.n_test) for t in self.tasks]


@dataclass
class ResultRow:
    experiment: str
    task_id: str
    seed: int
    cell_key: str
    cell_value: str
    extra_masks: int
    steps: int
    strategy: str
    accuracy: float
    ci_low: float
    ci_high: float
    confidence: float | None = None
    entropy: float | None = None

    def as_record(self) -> list[str]:
        def num(x):
            return "" if x is None else f"{x:.6f}"

        return [
            self.experiment,
            self.task_id,
            str(self.seed),
            self.cell_key,
            str(self.cell_value),
            str(self.extra_masks),
            str(self.steps),
            self.strategy,
            num(self.accuracy),
            num(self.ci_low),
            num(self.ci_high),
            num(self.confidence),
            num(self.entropy),
        ]


@dataclass
class CellResult:
    accuracy: float
    n: int
    correct: int
    predictions: list = field(default_factory=list)
    confidence: float = float("nan")
    entropy: float = float("nan")


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.as_record())
    return buf.getvalue()


def write_csv(rows: list[ResultRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(rows_to_csv(rows))


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        rd = csv.DictReader(f)
        if rd.fieldnames is None or tuple(rd.fieldnames) != CSV_COLUMNS:
            raise ContractError(f"{path}: not a results CSV")
        return list(rd)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def binomial_ci(acc: float, n: int) -> tuple[float, float]:
    half = Z95 * math.sqrt(max(acc * (1 - acc), 0.0) / n) if n else 0.0
    return max(0.0, acc - half), min(1.0, acc + half)


def across_task_ci(accs) -> tuple[float, float, float]:
    """Mean and mean +- 1.96 sd / sqrt(n) over per-task accuracies, clipped to [0, 1]."""
    a = np.asarray(accs, dtype=np.float64)
    if a.size == 0:
        raise UndefinedMetricError("no accuracies to aggregate")
    mean = float(a.mean())
    half = Z95 * float(a.std(ddof=1)) / math.sqrt(a.size) if a.size > 1 else 0.0
    return mean, max(0.0, mean - half), min(1.0, mean + half)


def degradation_metric(accs) -> float:
    """(max - min) / max over a mask-count grid, in percent."""
    a = np.asarray(accs, dtype=np.float64)
    if a.size < 2:
        raise UndefinedMetricError("degradation needs at least two accuracies")
    hi = float(a.max())
    if hi <= 0:
        raise UndefinedMetricError("degradation undefined when every accuracy is zero")
    return 100.0 * (hi - float(a.min())) / hi


@dataclass
class GainDegradation:
    task_ids: list
    gain: list
    degradation: list
    r: float | None
    r_defined: bool
    reason: str = ""


def pearson_r(x, y) -> float | None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 3:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    return float(dx @ dy) / math.sqrt(sxx * syy)


def gain_vs_degradation(per_task: dict) -> GainDegradation:
    """``per_task[task] = {"few": a5, "many": a25, "one_mask": a1, "many_masks": a200}``."""
    ids = sorted(per_task)
    gain = [per_task[t]["many"] - per_task[t]["few"] for t in ids]
    deg = [per_task[t]["many_masks"] - per_task[t]["one_mask"] for t in ids]
    if len(ids) < 3:
        return GainDegradation(ids, gain, deg, None, False, "fewer than 3 tasks")
    r = pearson_r(gain, deg)
    if r is None:
        return GainDegradation(ids, gain, deg, None, False, "zero variance")
    return GainDegradation(ids, gain, deg, r, True)


# ---------------------------------------------------------------------------
# cell evaluation
# ---------------------------------------------------------------------------


def extract_label(text: str) -> str | None:
    """First character inside the answer bracket, if it is a label."""
    if text and text[0] in LABELS:
        return text[0]
    return None


def _batches(renders: list[PromptRender], size: int):
    by_len: dict[int, list[int]] = {}
    for i, r in enumerate(renders):
        by_len.setdefault(len(r.ids), []).append(i)
    for length in sorted(by_len):
        idx = by_len[length]
        for s in range(0, len(idx), size):
            yield idx[s : s + size]


def evaluate_cell(
    model,
    renders: list[PromptRender],
    decode: DecodeConfig = DecodeConfig(),
    batch_size: int = 16,
    vocab=None,
) -> CellResult:
    """Decode every prompt and score the label at its answer slot.

    Single-step decoding reads only the answer-slot row (other masks do not
    affect it in one pass). Confidence and entropy are those recorded when
    the slot was filled.
    """
    vocab = vocab or default_vocab()
    decode.validate()
    n = len(renders)
    if n == 0:
        raise ContractError("empty cell")
    preds: list = [None] * n
    conf = np.zeros(n)
    ent = np.zeros(n)
    for chunk in _batches(renders, batch_size):
        ids = np.stack([renders[i].ids for i in chunk])
        slots = np.array([renders[i].answer_slot for i in chunk])
        if decode.steps == 1:
            tok, c, e = distribution_stats(slot_distributions(model, ids, slots))
            filled = [int(t) for t in tok]
            cs, es = c, e
        else:
            out, diags = decode_batch(model, ids, decode, seeds=[[decode.seed, i] for i in chunk])
            filled = [int(out[k, s]) for k, s in enumerate(slots)]
            cs = [d.confidence[int(s)] for d, s in zip(diags, slots)]
            es = [d.entropy[int(s)] for d, s in zip(diags, slots)]
        for k, i in enumerate(chunk):
            text = vocab.detokenize([filled[k]])
            preds[i] = extract_label(text)
            conf[i], ent[i] = cs[k], es[k]
    correct = sum(p == r.gold_label for p, r in zip(preds, renders))
    return CellResult(correct / n, n, correct, preds, float(conf.mean()), float(ent.mean()))


def tv_diagnostic(model, cell, n_relevant=10, n_distractors=10, k: int = 64, arrangement=1.0, batch_size=16) -> float:
    """Mean TV between answer-slot distributions of the bracket prompt and ``k`` open masks."""
    base = render_cell(cell, arrangement=arrangement, n_relevant=n_relevant, n_distractors=n_distractors)
    ext = render_cell(cell, arrangement=arrangement, n_relevant=n_relevant, n_distractors=n_distractors, extra_masks=k)
    tvs = []
    for chunk in _batches(base, batch_size):
        p0 = np.exp(slot_distributions(model, np.stack([base[i].ids for i in chunk]), [base[i].answer_slot for i in chunk]))
        p1 = np.exp(slot_distributions(model, np.stack([ext[i].ids for i in chunk]), [ext[i].answer_slot for i in chunk]))
        tvs.extend(0.5 * np.abs(p0 - p1).sum(axis=1))
    return float(np.mean(tvs))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Cell:
    task: TaskSpec
    seed: int
    cell_key: str
    cell_value: str
    extra_masks: int
    extra_dots: int
    arrangement: object
    question_position: object
    n_relevant: int
    n_distractors: int
    steps: int = 1
    strategy: str = "confidence"


def _run_cells(experiment: str, model, cells: list[_Cell], cfg: ExperimentConfig, parallel: int = 1) -> list[ResultRow]:
    vocab = default_vocab()
    max_ctx = cfg.max_context or model.config.max_context
    examples: dict = {}

    def cell_examples(c: _Cell):
        key = (c.task.task_id, c.seed)
        if key not in examples:
            examples[key] = make_cell_examples(c.task, n_relevant=cfg.n_relevant, n_distractors=max(cfg.n_distractors, max(cfg.distractor_grid)), n_test=cfg.n_test)
        return examples[key]

    for c in cells:
        cell_examples(c)

    def run(c: _Cell) -> ResultRow:
        renders = render_cell(
            cell_examples(c),
            arrangement=c.arrangement,
            question_position=c.question_position,
            extra_masks=c.extra_masks,
            extra_dots=c.extra_dots,
            n_relevant=c.n_relevant,
            n_distractors=c.n_distractors,
            order_seed=c.seed,
            vocab=vocab,
            max_context=max_ctx,
        )
        res = evaluate_cell(model, renders, DecodeConfig(c.steps, c.strategy, c.seed), cfg.batch_size, vocab)
        lo, hi = binomial_ci(res.accuracy, res.n)
        return ResultRow(
            experiment, c.task.task_id, c.seed, c.cell_key, c.cell_value, c.extra_masks, c.steps, c.strategy,
            res.accuracy, lo, hi, res.confidence, res.entropy,
        )

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as ex:
            return list(ex.map(run, cells))
    return [run(c) for c in cells]


def _fmt(v) -> str:
    return v if isinstance(v, str) else f"{float(v):g}"


def _base(cfg: ExperimentConfig, task, seed, **kw) -> _Cell:
    d = dict(
        task=task, seed=seed, cell_key="", cell_value="", extra_masks=0, extra_dots=0, arrangement=1.0,
        question_position="right", n_relevant=cfg.n_relevant, n_distractors=cfg.n_distractors,
    )
    d.update(kw)
    return _Cell(**d)


def _grid(cfg: ExperimentConfig, make):
    cells = []
    for seed in cfg.seeds:
        for task in cfg.task_specs(seed):
            cells.extend(make(task, seed))
    return cells


def run_locality_sweep(model, cfg: ExperimentConfig, parallel: int = 1) -> list[ResultRow]:
    """Relevant-block position grid with the question on the right."""
    return _run_cells("locality", model, _grid(cfg, lambda t, s: [
        _base(cfg, t, s, cell_key="block_position", cell_value=_fmt(r), arrangement=float(r))
        for r in cfg.block_positions
    ]), cfg, parallel)


def run_mask_location_sweep(model, cfg: ExperimentConfig, parallel: int = 1) -> list[ResultRow]:
    """Question position x relevant-block position."""
    return _run_cells("mask-location", model, _grid(cfg, lambda t, s: [
        _base(cfg, t, s, cell_key="question_position/block_position", cell_value=f"{_fmt(q)}/{_fmt(r)}",
              arrangement=float(r), question_position=q)
        for q in cfg.question_positions for r in cfg.block_positions
    ]), cfg, parallel)


def run_extra_mask_sweep(model, cfg: ExperimentConfig, parallel: int = 1, dots: bool = False) -> list[ResultRow]:
    """Single-step decoding with k masks (or dots) after the answer bracket; only the first mask is scored."""
    name = "dots-ablation" if dots else "extra-mask-sweep"
    key = "extra_dots" if dots else "extra_masks"

    def make(t, s):
        out = []
        for k in cfg.mask_grid:
            kw = {"extra_dots": k} if dots else {"extra_masks": k}
            out.append(_base(cfg, t, s, cell_key=key, cell_value=str(k), **kw))
        return out

    return _run_cells(name, model, _grid(cfg, make), cfg, parallel)


def run_distractor_sweep(model, cfg: ExperimentConfig, parallel: int = 1) -> list[ResultRow]:
    """Distractor-count grid with 10 relevant examples in mixed order, with and without extra masks."""
    return _run_cells("distractor-sweep", model, _grid(cfg, lambda t, s: [
        _base(cfg, t, s, cell_key="n_distractors", cell_value=str(d), n_distractors=d, arrangement="mixed", extra_masks=k)
        for k in cfg.distractor_masks for d in cfg.distractor_grid
    ]), cfg, parallel)


def run_unmask_recovery(model, cfg: ExperimentConfig, parallel: int = 1, name: str = "unmask-recovery") -> list[ResultRow]:
    """Extra-mask grid x decoding steps x unmasking strategy."""

    def make(t, s):
        out = []
        for k in cfg.mask_grid:
            for steps in cfg.steps_grid:
                for strat in cfg.strategies:
                    out.append(_base(cfg, t, s, cell_key="steps", cell_value=str(steps), extra_masks=k, steps=steps, strategy=strat))
        return out

    return _run_cells(name, model, _grid(cfg, make), cfg, parallel)


def run_few_step_robustness(model, cfg: ExperimentConfig, parallel: int = 1) -> list[ResultRow]:
    return run_unmask_recovery(model, cfg, parallel, name="few-step-robustness")


def run_locality_x_masks(model, cfg: ExperimentConfig, parallel: int = 1) -> list[ResultRow]:
    return _run_cells("locality-x-masks", model, _grid(cfg, lambda t, s: [
        _base(cfg, t, s, cell_key="block_position", cell_value=_fmt(r), arrangement=float(r), extra_masks=k)
        for k in cfg.mask_grid for r in cfg.block_positions
    ]), cfg, parallel)


def run_confidence_entropy(checkpoints: dict, cfg: ExperimentConfig, parallel: int = 1) -> list[ResultRow]:
    """Answer-slot confidence/entropy over the mask grid for each tagged checkpoint."""
    rows = []
    for tag, model in checkpoints.items():
        rows += _run_cells("confidence-entropy", model, _grid(cfg, lambda t, s: [
            _base(cfg, t, s, cell_key="checkpoint", cell_value=tag, extra_masks=k) for k in cfg.mask_grid
        ]), cfg, parallel)
    return rows


def run_gain_vs_degradation(model, cfg: ExperimentConfig, parallel: int = 1) -> tuple[list[ResultRow], GainDegradation]:
    """Accuracy at few/many shots and at one/many masks per task, plus their correlation."""
    big = max(cfg.shots)
    sub = replace(cfg, n_relevant=big, n_distractors=0, distractor_grid=(0,))

    def make(t, s):
        out = [_base(sub, t, s, cell_key="shots", cell_value=str(n), n_relevant=n, n_distractors=0, extra_masks=1) for n in cfg.shots]
        lo = min(cfg.shots)
        out += [_base(sub, t, s, cell_key="masks", cell_value=str(k), n_relevant=lo, n_distractors=0, extra_masks=k)
                for k in cfg.degradation_masks]
        return out

    rows = _run_cells("gain-vs-degradation", model, _grid(sub, make), sub, parallel)
    per: dict = {}
    for r in rows:
        d = per.setdefault(r.task_id, {})
        key = {("shots", str(min(cfg.shots))): "few", ("shots", str(big)): "many",
               ("masks", str(min(cfg.degradation_masks))): "one_mask", ("masks", str(max(cfg.degradation_masks))): "many_masks"}
        d.setdefault(key[(r.cell_key, r.cell_value)], []).append(r.accuracy)
    per = {t: {k: float(np.mean(v)) for k, v in d.items()} for t, d in per.items()}
    return rows, gain_vs_degradation(per)


def aggregate_rows(rows: list[ResultRow]) -> list[ResultRow]:
    """Cross-task rows (task_id ``ALL``) with the across-task 95% interval."""
    groups: dict = {}
    for r in rows:
        k = (r.experiment, r.seed, r.cell_key, r.cell_value, r.extra_masks, r.steps, r.strategy)
        groups.setdefault(k, []).append(r)
    out = []
    for k, rs in groups.items():
        mean, lo, hi = across_task_ci([r.accuracy for r in rs])
        conf = [r.confidence for r in rs if r.confidence is not None]
        ent = [r.entropy for r in rs if r.entropy is not None]
        out.append(ResultRow(k[0], "ALL", k[1], k[2], k[3], k[4], k[5], k[6], mean, lo, hi,
                             float(np.mean(conf)) if conf else None, float(np.mean(ent)) if ent else None))
    return out


def run_experiment(model, cfg: ExperimentConfig, parallel: int = 1) -> list[ResultRow]:
    """Dispatch an accuracy experiment by name; rows come in (seed, task, cell) order."""
    cfg.validate()
    name = cfg.experiment
    if name == "locality":
        return run_locality_sweep(model, cfg, parallel)
    if name == "mask-location":
        return run_mask_location_sweep(model, cfg, parallel)
    if name == "extra-mask-sweep":
        return run_extra_mask_sweep(model, cfg, parallel)
    if name == "dots-ablation":
        return run_extra_mask_sweep(model, cfg, parallel, dots=True)
    if name == "distractor-sweep":
        return run_distractor_sweep(model, cfg, parallel)
    if name == "unmask-recovery":
        return run_unmask_recovery(model, cfg, parallel)
    if name == "few-step-robustness":
        return run_few_step_robustness(model, cfg, parallel)
    if name == "locality-x-masks":
        return run_locality_x_masks(model, cfg, parallel)
    if name == "confidence-entropy":
        return run_confidence_entropy({"none": model}, cfg, parallel)
    if name == "gain-vs-degradation":
        return run_gain_vs_degradation(model, cfg, parallel)[0]
    raise ConfigError(f"{name!r} is not an accuracy experiment; use the attribution entry points")


# ---------------------------------------------------------------------------
# gradient attribution
# ---------------------------------------------------------------------------


@dataclass
class AttributionResult:
    token_scores: np.ndarray  # normalised, sums to 1
    example_scores: np.ndarray  # one per in-context example
    example_kinds: list
    question_score: float
    predicted_token: int
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "example_scores": [float(x) for x in self.example_scores],
            "example_kinds": list(self.example_kinds),
            "question_score": float(self.question_score),
            "predicted_token": int(self.predicted_token),
            **self.meta,
        }


def token_gradient_norms(model, ids, slot: int, token: int | None = None) -> tuple[np.ndarray, int]:
    """Per-token L2 norm of d(answer logit)/d(input embedding), and the token used.

    ``model`` needs ``params["tok_emb"]`` and ``logits_from_embeddings``;
    the predicted token defaults to the greedy argmax at ``slot``.
    """
    ids = np.asarray(ids, dtype=np.int64)
    emb = model.params["tok_emb"].data[ids]
    x = Tensor(emb[None].copy(), requires_grad=True)
    logits = model.logits_from_embeddings(x, rows=np.array([slot]))
    if token is None:
        token = int(np.argmax(logits.data[0]))
    target = ad.index(logits, (0, token))
    ad.backward(target)
    g = x.grad[0].astype(np.float64)
    return np.sqrt((g * g).sum(axis=1)), token


def gradient_attribution(model, render: PromptRender, token: int | None = None) -> AttributionResult:
    norms, token = token_gradient_norms(model, render.ids, render.answer_slot, token)
    total = norms.sum()
    scores = norms / total if total > 0 else np.full(len(norms), 1.0 / len(norms))
    ex = np.array([scores[a:b].sum() for a, b in render.example_spans])
    qa, qb = render.question_span
    return AttributionResult(scores, ex, list(render.example_kinds), float(scores[qa:qb].sum()), token)


def run_attribution(model, cfg: ExperimentConfig, arrangement="mixed") -> list[dict]:
    """Attribution records over ``n_orderings`` example orders x ``n_questions`` questions per task."""
    vocab = default_vocab()
    out = []
    for seed in cfg.seeds:
        for task in cfg.task_specs(seed):
            cell = make_cell_examples(replace(task, n_test=cfg.n_questions), cfg.n_relevant, cfg.n_distractors)
            for order in range(cfg.n_orderings):
                renders = render_cell(cell, arrangement=arrangement, n_relevant=cfg.n_relevant,
                                      n_distractors=cfg.n_distractors, order_seed=order, vocab=vocab)
                for qi, r in enumerate(renders):
                    res = gradient_attribution(model, r)
                    res.meta = {"task_id": task.task_id, "seed": seed, "ordering": order, "question": qi}
                    out.append(res.to_json())
    return out


@dataclass
class MaskGradientTable:
    masks: float
    last_non_masks: float
    all_non_masks: float
    answer_slot: float
    n_masks: int
    n_last: int
    n_non_masks: int


def mask_gradient_groups(ids, slot: int, mask_id: int, n_last: int = 50):
    """Index groups: answer slot, other masks, last ``n_last`` non-masks, all non-masks."""
    ids = np.asarray(ids)
    is_mask = ids == mask_id
    masks = np.flatnonzero(is_mask)
    masks = masks[masks != slot]
    non = np.flatnonzero(~is_mask)
    return {"answer": np.array([slot]), "masks": masks, "last_non_masks": non[-n_last:], "all_non_masks": non}


def mask_gradient_table(model, render: PromptRender, mask_id: int | None = None, n_last: int = 50) -> MaskGradientTable:
    """Mean normalised gradient score of appended masks versus non-mask tokens.

    The answer slot's own score is reported apart and excluded from the mask group.
    """
    mask_id = model.config.mask_id if mask_id is None else mask_id
    norms, _ = token_gradient_norms(model, render.ids, render.answer_slot)
    scores = norms / norms.sum()
    g = mask_gradient_groups(render.ids, render.answer_slot, mask_id, n_last)

    def mean(ix):
        return float(scores[ix].mean()) if len(ix) else float("nan")

    return MaskGradientTable(mean(g["masks"]), mean(g["last_non_masks"]), mean(g["all_non_masks"]), float(scores[render.answer_slot]),
                             len(g["masks"]), len(g["last_non_masks"]), len(g["all_non_masks"]))


def mask_gradient_prompt(cell, question: int = 0, appended: int = 50, **kw) -> PromptRender:
    """The ``question``-th prompt of ``cell`` with the answer slot plus ``appended`` masks."""
    layout = PromptLayout(
        cell.relevant[: kw.get("n_relevant", len(cell.relevant))],
        cell.distractors[: kw.get("n_distractors", len(cell.distractors))],
        cell.questions[question],
        kw.get("arrangement", 1.0),
        "right",
        appended + 1,
        0,
        OPEN,
    )
    return layout_prompt(layout, np.random.default_rng([kw.get("order_seed", 0), 7919]))


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def config_from_dict(d: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown experiment keys: {sorted(bad)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return ExperimentConfig(**kw).validate()
