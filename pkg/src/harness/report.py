"""CSV tables and SVG plots from evaluation reports and loss curves.

Column order of ``trials.csv``: variant, seed, condition, position, size,
trial_seed, outcome, reason, duration, zmp_violations.
Column order of ``summary.csv``: variant, condition, successes, trials, rate.
"""
import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from src.harness.evaluation import EvalReport  # noqa: E402

logger = logging.getLogger(__name__)

TRIAL_COLUMNS = ("variant", "seed", "condition", "position", "size", "trial_seed", "outcome", "reason",
                 "duration", "zmp_violations")
SUMMARY_COLUMNS = ("variant", "condition", "successes", "trials", "rate")
POLICY_PERIOD = 0.1

# Fixed ids and no timestamps, so identical inputs give identical files.
plt.rcParams["svg.hashsalt"] = "tact-report"
SVG_METADATA = {"Date": None}


def _writer(f):
    return csv.writer(f, lineterminator="\n")


def write_trials_csv(path: Path, reports: Sequence[EvalReport]) -> int:
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _writer(f)
        writer.writerow(TRIAL_COLUMNS)
        for report in reports:
            for t in report.trials:
                writer.writerow([report.variant, report.seed, t.condition, repr(t.position), t.size, t.seed,
                                 t.outcome, t.reason, repr(t.duration), t.zmp_violations])
                rows += 1
    return rows


def summarize(reports: Sequence[EvalReport]) -> Dict[Tuple[str, str], Tuple[int, int]]:
    """(successes, trials) per (variant, condition), pooling seeds."""
    table: Dict[Tuple[str, str], List[int]] = {}
    for report in reports:
        for condition, (won, total) in report.per_condition().items():
            row = table.setdefault((report.variant, condition), [0, 0])
            row[0] += won
            row[1] += total
        table.setdefault((report.variant, "total"), [0, 0])
        table[(report.variant, "total")][0] += report.successes()
        table[(report.variant, "total")][1] += len(report.trials)
    return {k: (v[0], v[1]) for k, v in table.items()}


def write_summary_csv(path: Path, summary: Dict[Tuple[str, str], Tuple[int, int]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = _writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for (variant, condition), (won, total) in summary.items():
            writer.writerow([variant, condition, won, total, repr(won / total if total else 0.0)])


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def plot_success(path: Path, summary: Dict[Tuple[str, str], Tuple[int, int]]) -> None:
    """Total success rate per variant; variants without trials get zero-height bars."""
    variants = list(dict.fromkeys(v for v, _ in summary))
    rates = []
    for v in variants:
        won, total = summary.get((v, "total"), (0, 0))
        rates.append(won / total if total else 0.0)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(variants)), rates, color="#4c72b0")
    ax.set_xticks(range(len(variants)))
    ax.set_xticklabels(variants, rotation=20, ha="right")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("success rate")
    fig.tight_layout()
    _save(fig, path)


def plot_traces(path: Path, reports: Sequence[EvalReport], kind: str) -> None:
    """Trial-mean attention weights (kind="probe") or active-cell counts (kind="cells")."""
    labels = ("proprio", "tactile", "vision") if kind == "probe" else ("left", "right")
    fig, ax = plt.subplots(figsize=(6, 4))
    for report in reports:
        trace = report.mean_probe_trace() if kind == "probe" else report.mean_active_trace()
        t = np.arange(len(trace)) * POLICY_PERIOD
        for i, label in enumerate(labels):
            ax.plot(t, trace[:, i], label=f"{report.variant} s{report.seed} {label}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("attention weight" if kind == "probe" else "active cells")
    if ax.lines:
        ax.legend(fontsize=6)
    fig.tight_layout()
    _save(fig, path)


def plot_losses(path: Path, curves: Dict[str, Dict[str, np.ndarray]]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, curve in curves.items():
        ax.plot(curve["step"], curve["loss"], label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if ax.lines:
        ax.set_yscale("log")
        ax.legend(fontsize=6)
    fig.tight_layout()
    _save(fig, path)


def write_report_files(out_dir: str, reports: Sequence[EvalReport],
                       loss_curves: Dict[str, Dict[str, np.ndarray]] = None) -> Dict[str, Path]:
    """Write every table and figure; returns the written paths by name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(reports)
    paths = {
        "trials": out / "trials.csv",
        "summary": out / "summary.csv",
        "success": out / "success.svg",
        "attention": out / "attention.svg",
        "active_cells": out / "active_cells.svg",
    }
    rows = write_trials_csv(paths["trials"], reports)
    write_summary_csv(paths["summary"], summary)
    plot_success(paths["success"], summary)
    plot_traces(paths["attention"], reports, "probe")
    plot_traces(paths["active_cells"], reports, "cells")
    if loss_curves:
        paths["losses"] = out / "losses.svg"
        plot_losses(paths["losses"], loss_curves)
    logger.info(f"Wrote report for {len(reports)} evaluations ({rows} trials) to {out}")
    return paths
