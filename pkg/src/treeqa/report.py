"""Evaluation report rendering: plain table, delimited output, and figures."""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import QUESTION_TYPES, EvalReport, delta_pairs


def _fmt_delta(value: float) -> str:
    return f"{value:+.2f}"


def render_table(report: EvalReport) -> str:
    """One block per conference: modes as rows, F1 and EM columns per question type.

    Rows for description modes carry the cellwise delta against the matching
    path mode, '+' marking an improvement.
    """
    conferences = sorted({conf for conf, _, _ in report.cells})
    pairs = dict(delta_pairs(report.modes))  # desc mode -> path mode
    lines: list[str] = []
    header = (
        f"{'Retriever':<20}"
        + "".join(f"F1 {qt:>12}" for qt in QUESTION_TYPES)
        + "".join(f"EM {qt:>12}" for qt in QUESTION_TYPES)
    )
    for conf in conferences:
        lines.append(f"== {conf} (judge: {report.judge_label}) ==")
        lines.append(header)
        for mode in report.modes:
            cols = [f"{mode:<20}"]
            for metric in ("f1_mean", "em_mean"):
                for qt in QUESTION_TYPES:
                    cell = report.cells.get((conf, qt, mode))
                    if cell is None or cell.n == 0:
                        cols.append(f"{'-':>15}")
                        continue
                    value = getattr(cell, metric)
                    text = f"{value:.2f}"
                    base = pairs.get(mode)
                    if base is not None:
                        delta = report.delta(conf, qt, mode, base)
                        if delta is not None:
                            d = delta[0] if metric == "f1_mean" else delta[1]
                            text += _fmt_delta(d)
                    cols.append(f"{text:>15}")
            lines.append("".join(cols))
        lines.append("")
    if report.failures:
        lines.append(f"failures: {len(report.failures)}")
        for conf, question, error in report.failures:
            lines.append(f"  [{conf}] {question[:60]}: {error}")
    return "\n".join(lines)


def write_tsv(report: EvalReport, path: str) -> None:
    """Delimited per-cell output: one row per (conference, qtype, mode)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            "conference\tqtype\tmode\tn\tf1_mean\tem_mean\tn_judged\t"
            "retrieval_recall\tf1_delta\tem_delta\n"
        )
        pairs = dict(delta_pairs(report.modes))
        for (conf, qt, mode), cell in sorted(report.cells.items()):
            f1_delta = em_delta = ""
            base = pairs.get(mode)
            if base is not None:
                delta = report.delta(conf, qt, mode, base)
                if delta is not None:
                    f1_delta, em_delta = f"{delta[0]:.4f}", f"{delta[1]:.4f}"
            fh.write(
                f"{conf}\t{qt}\t{mode}\t{cell.n}\t{cell.f1_mean:.4f}\t"
                f"{cell.em_mean:.4f}\t{cell.n_judged}\t{cell.recall:.4f}\t"
                f"{f1_delta}\t{em_delta}\n"
            )


def write_json(report: EvalReport, path: str) -> None:
    obj = {
        "modes": report.modes,
        "judge": report.judge_label,
        "cells": [
            {
                "conference": conf,
                "qtype": qt,
                "mode": mode,
                "n": cell.n,
                "f1_mean": cell.f1_mean,
                "em_mean": cell.em_mean,
                "n_judged": cell.n_judged,
                "retrieval_recall": cell.recall,
            }
            for (conf, qt, mode), cell in sorted(report.cells.items())
        ],
        "failures": [
            {"conference": conf, "question": q, "error": err}
            for conf, q, err in report.failures
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def render_figures(report: EvalReport, out_dir: str) -> list[str]:
    """Grouped bar charts (one file per conference and metric) next to the tables."""
    os.makedirs(out_dir, exist_ok=True)
    conferences = sorted({conf for conf, _, _ in report.cells})
    written: list[str] = []
    x = range(len(QUESTION_TYPES))
    width = 0.8 / max(1, len(report.modes))
    for conf in conferences:
        for metric, label in (("f1_mean", "F1"), ("em_mean", "EM")):
            fig, ax = plt.subplots(figsize=(6.0, 3.5))
            for j, mode in enumerate(report.modes):
                values = []
                for qt in QUESTION_TYPES:
                    cell = report.cells.get((conf, qt, mode))
                    values.append(getattr(cell, metric) if cell and cell.n else 0.0)
                offsets = [i + (j - (len(report.modes) - 1) / 2) * width for i in x]
                ax.bar(offsets, values, width=width, label=mode)
            ax.set_xticks(list(x))
            ax.set_xticklabels(QUESTION_TYPES)
            ax.set_ylabel(f"{label} score")
            ax.set_title(f"{conf}: {label} by question type")
            ax.legend(fontsize=8)
            fig.tight_layout()
            path = os.path.join(out_dir, f"{conf}_{metric}.png")
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    return written
