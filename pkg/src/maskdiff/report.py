"""Summary tables and static SVG charts from results CSVs."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import DataError, UndefinedMetricError
from .harness import CSV_COLUMNS, degradation_metric, read_csv


def _svg_backend():
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "maskdiff"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _numeric(v: str):
    try:
        return float(v)
    except ValueError:
        return None


def summarize(rows: list[dict]) -> list[dict]:
    """Mean accuracy per (experiment, cell, masks, steps, strategy) over tasks and seeds."""
    groups = defaultdict(list)
    for r in rows:
        if r["task_id"] == "ALL":
            continue
        k = (r["experiment"], r["cell_key"], r["cell_value"], int(r["extra_masks"]), int(r["steps"]), r["strategy"])
        groups[k].append(float(r["accuracy"]))
    return [
        {"experiment": k[0], "cell_key": k[1], "cell_value": k[2], "extra_masks": k[3], "steps": k[4], "strategy": k[5],
         "n": len(v), "accuracy": float(np.mean(v))}
        for k, v in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], str(kv[0][2]), kv[0][3], kv[0][4], kv[0][5]))
    ]


def _line_chart(series: dict, xlabel: str, path: Path, title: str) -> None:
    plt = _svg_backend()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label in sorted(series):
        pts = sorted(series[label])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _bar_chart(values: dict, path: Path, title: str) -> None:
    plt = _svg_backend()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = sorted(values)
    ax.bar(range(len(names)), [values[n] for n in names])
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("degradation (%)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def build_report(inputs: list[Path], out: Path) -> list[Path]:
    """Write summary.csv plus one chart per applicable experiment; returns the files written."""
    rows = []
    for p in inputs:
        if not p.exists():
            raise DataError(f"results file {p} not found")
        try:
            rows += read_csv(p)
        except Exception as e:
            if p.stat().st_size == 0:
                raise DataError(f"{p}: no data") from None
            raise DataError(f"{p}: {e}") from None
    if not rows:
        raise DataError("no data: the results files hold no rows")
    written = []
    summary = summarize(rows)
    spath = out / "summary.csv"
    with open(spath, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(summary[0]) if summary else list(CSV_COLUMNS), lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    written.append(spath)

    by_exp = defaultdict(list)
    for s in summary:
        by_exp[s["experiment"]].append(s)

    for exp in ("locality", "locality-x-masks"):
        if exp in by_exp:
            series = defaultdict(list)
            for s in by_exp[exp]:
                x = _numeric(s["cell_value"])
                if x is not None:
                    series[f"masks={s['extra_masks']}"].append((x, s["accuracy"]))
            p = out / f"{exp}.svg"
            _line_chart(series, "relevant block position", p, exp)
            written.append(p)

    degr = {}
    for exp in ("extra-mask-sweep", "dots-ablation", "unmask-recovery", "few-step-robustness", "confidence-entropy"):
        if exp not in by_exp:
            continue
        series = defaultdict(list)
        for s in by_exp[exp]:
            label = f"{s['strategy']} steps={s['steps']}" if exp in ("unmask-recovery", "few-step-robustness") else (
                s["cell_value"] if exp == "confidence-entropy" else exp)
            k = int(s["cell_value"]) if exp == "dots-ablation" else s["extra_masks"]
            series[label].append((k, s["accuracy"]))
        p = out / f"{exp}.svg"
        _line_chart(series, "extra dots" if exp == "dots-ablation" else "extra masks", p, exp)
        written.append(p)
        for label, pts in series.items():
            accs = [a for k, a in sorted(pts) if k >= 1]
            try:
                degr[f"{exp}:{label}"] = degradation_metric(accs)
            except UndefinedMetricError:
                pass
    if degr:
        p = out / "degradation.svg"
        _bar_chart(degr, p, "relative degradation over the mask grid")
        written.append(p)
        dpath = out / "degradation.csv"
        with open(dpath, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["series", "degradation_percent"])
            for k in sorted(degr):
                w.writerow([k, f"{degr[k]:.4f}"])
        written.append(dpath)
    return written
