"""Command-line entry point: gen-tasks, pretrain, finetune, eval, attribute, report."""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, MaskDiffError, NumericError

log = logging.getLogger("maskdiff")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 3, 4, 5

DEFAULTS: dict = {
    "model": {
        "mode": "diffusion-bidirectional",
        "n_layers": 4,
        "d_model": 128,
        "n_heads": 4,
        "d_ff": 512,
        "max_context": 768,
        "rope_base": 10000.0,
        "seed": 0,
    },
    "pretrain": {
        "steps": 1500,
        "batch_size": 32,
        "lr": 1e-3,
        "warmup": 50,
        "max_grad_norm": 1.0,
        "beta1": 0.9,
        "beta2": 0.99,
        "p_low": 0.05,
        "p_high": 0.95,
        "stratified_p": True,
        "seq_len": 96,
        "n_sequences": 6000,
        "max_relevant": 6,
        "max_distractors": 1,
        "tasks": [],
        "seed": 0,
    },
    "finetune": {
        "checkpoint": "",
        "alpha": 0.1,
        "beta": 1.0,
        "p_low": 0.2,
        "p_high": 0.8,
        "max_masks": 128,
        "curriculum_steps": 500,
        "steps": 100,
        "lr": 1e-4,
        "grad_accum": 8,
        "batch_size": 2,
        "n_pairs": 2000,
        "max_relevant": 10,
        "max_distractors": 10,
        "tasks": [],
        "seed": 0,
    },
    "tasks": {
        "ids": [],
        "seed": 0,
        "n_test": 1000,
        "n_relevant": 10,
        "n_distractors": 40,
        "multidim_seeds": 5,
    },
    "experiments": {
        "checkpoint": "",
        "checkpoints": {},
        "experiment": "locality",
        "tasks": [],
        "seeds": [0],
        "n_test": 50,
        "n_relevant": 10,
        "n_distractors": 40,
        "block_positions": [0.0, 0.25, 0.5, 0.75, 1.0],
        "question_positions": ["left", 0.5, "right"],
        "mask_grid": [0, 1, 2, 4, 8, 16, 32, 64, 128],
        "distractor_grid": [0, 10, 20, 40],
        "distractor_masks": [0, 32],
        "steps_grid": [1, 2, 4, 6, 40],
        "strategies": ["random", "confidence"],
        "shots": [5, 25],
        "degradation_masks": [1, 200],
        "n_orderings": 10,
        "n_questions": 20,
        "appended_masks": 50,
        "batch_size": 16,
        "max_context": None,
    },
    "output": {"dir": "runs", "aggregate": True},
}

SEEDED = ("model", "pretrain", "finetune", "tasks")


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict) and k != "checkpoints":
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def resolve_config(path=None, overrides=(), seed=None) -> dict:
    """Defaults, then the JSON file, then ``--set`` overrides, then ``--seed``."""
    user = {}
    if path:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
    cfg = _merge(DEFAULTS, user)
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        set_dotted(cfg, key.strip(), _parse_value(val))
    if seed is not None:
        for sec in SEEDED:
            cfg[sec]["seed"] = int(seed)
        cfg["experiments"]["seeds"] = [int(seed)]
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    from .harness import config_from_dict
    from .model import ModelConfig

    m = cfg["model"]
    ModelConfig(vocab_size=8, **m).validate()
    pt = cfg["pretrain"]
    if pt["seq_len"] > m["max_context"]:
        raise ConfigError("pretrain.seq_len exceeds model.max_context")
    for sec in ("pretrain", "finetune"):
        s = cfg[sec]
        if not 0 < s["p_low"] <= s["p_high"] <= 1:
            raise ConfigError(f"{sec}: need 0 < p_low <= p_high <= 1")
        if s["steps"] < 0 or s["lr"] <= 0 or s["batch_size"] < 1:
            raise ConfigError(f"{sec}: bad steps / lr / batch_size")
    exp = {k: v for k, v in cfg["experiments"].items() if k not in ("checkpoint", "checkpoints")}
    config_from_dict(exp)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def make_run_dir(cfg: dict, out: str | None, command: str) -> Path:
    root = Path(out or cfg["output"]["dir"])
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    d = root / f"{config_hash({'command': command, **cfg})}-{stamp}"
    n = 1
    while d.exists():
        d = root / f"{config_hash({'command': command, **cfg})}-{stamp}-{n}"
        n += 1
    d.mkdir(parents=True)
    (d / "config.json").write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _dtype(precision: int):
    return np.float64 if precision == 64 else np.float32


def _task_list(ids, seed=0):
    from .taskgen import TaskSpec, all_tasks

    return [TaskSpec.from_id(t, seed=seed) for t in ids] if ids else all_tasks(seed=seed)


def _load(path: str, precision: int):
    from .model import load_checkpoint

    if not path:
        raise ConfigError("a checkpoint path is required")
    if not Path(path).exists():
        raise DataError(f"checkpoint {path} not found")
    return load_checkpoint(path).astype(_dtype(precision))


def cmd_gen_tasks(cfg, run: Path, args) -> None:
    from .taskgen import all_multidim_datasets, make_cell_examples, render_cell, write_jsonl

    t = cfg["tasks"]
    out = run / "tasks"
    out.mkdir()
    golden = {}
    for task in _task_list(t["ids"], t["seed"]):
        task = type(task)(task.word_task, task.number_task, t["seed"], t["n_test"])
        cell = make_cell_examples(task, t["n_relevant"], t["n_distractors"])
        write_jsonl(cell.relevant + cell.distractors, out / f"{task.task_id}.context.jsonl")
        write_jsonl(cell.questions, out / f"{task.task_id}.questions.jsonl")
        first = render_cell(
            type(cell)(task, cell.relevant, cell.distractors, cell.questions[:1]), arrangement=1.0
        )[0]
        golden[task.task_id] = first.text
    (run / "golden_prompts.json").write_text(json.dumps(golden, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    md = run / "multidim"
    md.mkdir()
    for ds in all_multidim_datasets(t["multidim_seeds"]):
        write_jsonl(ds.records("train"), md / f"{ds.kind}-{ds.seed}.train.jsonl")
        write_jsonl(ds.records("test"), md / f"{ds.kind}-{ds.seed}.test.jsonl")


def cmd_pretrain(cfg, run: Path, args) -> None:
    from .model import ModelConfig, init_model, save_checkpoint
    from .taskgen import build_corpus, default_vocab
    from .train import PretrainParams, pretrain

    v = default_vocab()
    mc = ModelConfig(vocab_size=len(v), mask_id=v.mask_id, eos_id=v.eos_id, **cfg["model"])
    model = init_model(mc, _dtype(args.precision))
    p = cfg["pretrain"]
    corpus = build_corpus(
        _task_list(p["tasks"]), p["n_sequences"], p["seq_len"], p["seed"], v,
        max_relevant=p["max_relevant"], max_distractors=p["max_distractors"],
    )
    params = PretrainParams(
        p["steps"], p["batch_size"], p["lr"], p["warmup"], p["max_grad_norm"], (p["p_low"], p["p_high"]), p["seed"],
        stratified=bool(p["stratified_p"]), betas=(p["beta1"], p["beta2"]),
    )
    recs = pretrain(model, corpus, params)
    save_checkpoint(model, run / "model.ckpt")
    with open(run / "pretrain_log.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss", "grad_norm", "lr"])
        for r in recs:
            w.writerow([r["step"], repr(r["loss"]), repr(r["grad_norm"]), repr(r["lr"])])


def cmd_finetune(cfg, run: Path, args) -> None:
    from .corruption import PromptAnswer
    from .maloss import FinetuneParams, LossConfig, finetune
    from .model import save_checkpoint
    from .taskgen import build_answer_pairs

    f = cfg["finetune"]
    model = _load(f["checkpoint"], args.precision)
    pairs = build_answer_pairs(_task_list(f["tasks"]), f["n_pairs"], f["seed"],
                               max_relevant=f["max_relevant"], max_distractors=f["max_distractors"])
    data = [PromptAnswer(q, a) for q, a in pairs]
    lc = LossConfig(f["alpha"], f["beta"], f["p_low"], f["p_high"], f["max_masks"], f["curriculum_steps"], model.config.max_context)
    fp = FinetuneParams(f["steps"], f["lr"], f["grad_accum"], f["batch_size"], 1.0, f["seed"])
    finetune(model, data, lc, fp, log_path=run / "finetune_log.csv")
    save_checkpoint(model, run / "model.ckpt")


def _experiment_config(cfg):
    from .harness import config_from_dict

    return config_from_dict({k: v for k, v in cfg["experiments"].items() if k not in ("checkpoint", "checkpoints")})


def cmd_eval(cfg, run: Path, args) -> None:
    from .harness import aggregate_rows, run_confidence_entropy, run_experiment, run_gain_vs_degradation, write_csv

    e = cfg["experiments"]
    ec = _experiment_config(cfg)
    if ec.experiment in ("attribution", "mask-gradient-table"):
        raise ConfigError(f"use the attribute command for {ec.experiment}")
    if ec.experiment == "confidence-entropy" and e["checkpoints"]:
        models = {tag: _load(p, args.precision) for tag, p in sorted(e["checkpoints"].items())}
        rows = run_confidence_entropy(models, ec, args.parallel)
    else:
        model = _load(e["checkpoint"], args.precision)
        if ec.experiment == "gain-vs-degradation":
            rows, gd = run_gain_vs_degradation(model, ec, args.parallel)
            (run / "gain_vs_degradation.json").write_text(json.dumps(asdict(gd), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        else:
            rows = run_experiment(model, ec, args.parallel)
    if cfg["output"]["aggregate"]:
        rows = rows + aggregate_rows(rows)
    write_csv(rows, run / f"{ec.experiment}.csv")


def cmd_attribute(cfg, run: Path, args) -> None:
    from .harness import mask_gradient_prompt, mask_gradient_table, run_attribution, write_jsonl
    from .taskgen import make_cell_examples

    e = cfg["experiments"]
    ec = _experiment_config(cfg)
    model = _load(e["checkpoint"], args.precision)
    write_jsonl(run_attribution(model, ec), run / "attribution.jsonl")
    with open(run / "mask_gradient_table.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["task_id", "seed", "question", "masks", "last_non_masks", "all_non_masks", "answer_slot"])
        for seed in ec.seeds:
            for task in ec.task_specs(seed):
                cell = make_cell_examples(task, ec.n_relevant, ec.n_distractors, n_test=ec.n_questions)
                for q in range(ec.n_questions):
                    r = mask_gradient_prompt(cell, q, ec.appended_masks, n_distractors=min(ec.n_distractors, 20))
                    t = mask_gradient_table(model, r)
                    w.writerow([task.task_id, seed, q] + [f"{x:.8f}" for x in (t.masks, t.last_non_masks, t.all_non_masks, t.answer_slot)])


def cmd_report(cfg, run: Path, args) -> None:
    from .report import build_report

    inputs = [Path(p) for p in (args.inputs or [])]
    if not inputs:
        raise ConfigError("report needs at least one results CSV")
    build_report(inputs, run)


COMMANDS = {
    "gen-tasks": cmd_gen_tasks,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "attribute": cmd_attribute,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--out", help="root directory for run directories")
    common.add_argument("--parallel", type=int, default=1, help="concurrent experiment cells")
    common.add_argument("--precision", type=int, choices=(32, 64), default=32)
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. pretrain.steps=100")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="maskdiff", description="Toy masked diffusion LM laboratory.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "report":
            sp.add_argument("inputs", nargs="*", help="results CSV files")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.parallel < 1:
            raise ConfigError("--parallel must be >= 1")
        cfg = resolve_config(args.config, args.overrides, args.seed)
        run = make_run_dir(cfg, args.out, args.command)
        COMMANDS[args.command](cfg, run, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except MaskDiffError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(run)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
