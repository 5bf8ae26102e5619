"""Evaluation reporting: tab-delimited tables with accompanying figures.

Every report path writes the numbers first (TSV, stable field order) and then
renders PNG charts of the same data next to them, using the non-interactive
matplotlib backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import METRICS, MetricReport
from .pipeline import ComparisonReport

METRIC_LABELS = {"mrr": "MRR", "ndcg_at_3": "NDCG@3", "recall_at_100": "Recall@100"}


def write_metrics_table(report: MetricReport, path: str | Path) -> Path:
    """Per-query metric rows plus a final MEAN row, tab-delimited."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("query_id\t" + "\t".join(METRICS) + "\n")
        for qid in report.query_ids():
            row = report.per_query[qid]
            handle.write(qid + "\t" + "\t".join(f"{row[m]:.6f}" for m in METRICS) + "\n")
        handle.write("MEAN\t" + "\t".join(f"{report.means[m]:.6f}" for m in METRICS) + "\n")
    return path


def render_metrics_figures(report: MetricReport, directory: str | Path, stem: str) -> list[Path]:
    """Two charts: the three means, and the per-query value distributions."""
    directory = Path(directory)
    paths = []

    fig, ax = plt.subplots(figsize=(5, 4))
    labels = [METRIC_LABELS[m] for m in METRICS]
    values = [report.means[m] for m in METRICS]
    bars = ax.bar(labels, values, color=["#4878cf", "#6acc65", "#d65f5f"])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mean over judged queries")
    ax.set_title(f"{stem}: retrieval quality")
    for bar, value in zip(bars, values):
        ax.annotate(f"{value:.3f}", (bar.get_x() + bar.get_width() / 2, value),
                    ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    means_path = directory / f"{stem}.means.png"
    fig.savefig(means_path, dpi=120)
    plt.close(fig)
    paths.append(means_path)

    fig, axes = plt.subplots(1, len(METRICS), figsize=(11, 3.2), sharey=True)
    for ax, metric in zip(axes, METRICS):
        values = report.values_for(metric)
        ax.hist(values, bins=min(20, max(5, len(values) // 3 or 5)), range=(0, 1),
                color="#4878cf", edgecolor="white")
        ax.set_title(METRIC_LABELS[metric])
        ax.set_xlabel("per-query value")
    axes[0].set_ylabel("queries")
    fig.tight_layout()
    dist_path = directory / f"{stem}.per_query.png"
    fig.savefig(dist_path, dpi=120)
    plt.close(fig)
    paths.append(dist_path)
    return paths


def write_eval_report(report: MetricReport, directory: str | Path, stem: str) -> dict[str, Path]:
    """The full evaluation report: delimited table plus figures."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table = write_metrics_table(report, directory / f"{stem}.metrics.tsv")
    figures = render_metrics_figures(report, directory, stem)
    return {"table": table, "figures": figures}


def write_comparison_table(comparison: ComparisonReport, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("metric\tmean_a\tmean_b\tdiff\tt\tp\tsignificant\n")
        for metric in comparison.metrics:
            mean_a = comparison.means_a[metric]
            mean_b = comparison.means_b[metric]
            test = comparison.tests[metric]
            handle.write(
                f"{metric}\t{mean_a:.6f}\t{mean_b:.6f}\t{mean_a - mean_b:.6f}"
                f"\t{test.t:.6f}\t{test.p:.6g}\t{str(test.significant()).lower()}\n"
            )
    return path


def render_comparison_figure(comparison: ComparisonReport, path: str | Path,
                             label_a: str = "run A", label_b: str = "run B") -> Path:
    path = Path(path)
    labels = [METRIC_LABELS.get(m, m) for m in comparison.metrics]
    positions = range(len(labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([p - width / 2 for p in positions],
           [comparison.means_a[m] for m in comparison.metrics],
           width, label=label_a, color="#4878cf")
    ax.bar([p + width / 2 for p in positions],
           [comparison.means_b[m] for m in comparison.metrics],
           width, label=label_b, color="#d65f5f")
    for p, metric in zip(positions, comparison.metrics):
        test = comparison.tests[metric]
        top = max(comparison.means_a[metric], comparison.means_b[metric])
        marker = "*" if test.significant() else "n.s."
        ax.annotate(f"p={test.p:.3g} {marker}", (p, top), ha="center", va="bottom", fontsize=8)
    ax.set_xticks(list(positions))
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1.1)
    ax.set_ylabel("mean over judged queries")
    ax.set_title(f"paired comparison over {comparison.query_count} queries")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_comparison_report(comparison: ComparisonReport, directory: str | Path, stem: str,
                            label_a: str = "run A", label_b: str = "run B") -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table = write_comparison_table(comparison, directory / f"{stem}.compare.tsv")
    figure = render_comparison_figure(
        comparison, directory / f"{stem}.compare.png", label_a, label_b
    )
    return {"table": table, "figures": [figure]}
