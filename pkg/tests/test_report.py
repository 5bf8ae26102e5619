"""Report writers: delimited metric tables and the PNG figures rendered
alongside them.
"""

from __future__ import annotations

import math

import pytest

from convsearch.evaluation import METRICS, MetricReport, Qrels, TTestResult, evaluate_run
from convsearch.pipeline import ComparisonReport
from convsearch.report import (
    render_comparison_figure,
    render_metrics_figures,
    write_comparison_report,
    write_comparison_table,
    write_eval_report,
    write_metrics_table,
)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@pytest.fixture(scope="module")
def report():
    qrels = Qrels({"q1": {"d1": 2, "d2": 1}, "q2": {"d1": 1}, "q3": {"d3": 1}})
    run = {
        "q1": [("d1", 1.0), ("d2", 0.5)],
        "q2": [("d2", 0.9), ("d1", 0.4)],
        "q3": [("d9", 0.7)],
    }
    return evaluate_run(run, qrels)


@pytest.fixture(scope="module")
def comparison():
    return ComparisonReport(
        means_a={"mrr": 0.8, "ndcg_at_3": 0.7, "recall_at_100": 0.9},
        means_b={"mrr": 0.6, "ndcg_at_3": 0.65, "recall_at_100": 0.9},
        tests={
            "mrr": TTestResult(t=2.5, p=0.03),
            "ndcg_at_3": TTestResult(t=1.1, p=0.3),
            "recall_at_100": TTestResult(t=0.0, p=1.0),
        },
        query_count=12,
        metrics=METRICS,
    )


class TestMetricsTable:
    def test_layout(self, report, tmp_path):
        path = write_metrics_table(report, tmp_path / "out.tsv")
        lines = path.read_text().splitlines()
        assert lines[0] == "query_id\t" + "\t".join(METRICS)
        assert len(lines) == 1 + len(report.per_query) + 1
        assert [line.split("\t")[0] for line in lines[1:-1]] == list(report.query_ids())
        assert lines[-1].startswith("MEAN\t")

    def test_values_round_trip(self, report, tmp_path):
        path = write_metrics_table(report, tmp_path / "out.tsv")
        lines = path.read_text().splitlines()
        for line in lines[1:]:
            fields = line.split("\t")
            source = report.means if fields[0] == "MEAN" else report.per_query[fields[0]]
            for metric, text in zip(METRICS, fields[1:]):
                assert text == f"{source[metric]:.6f}"
                assert math.isclose(float(text), source[metric], abs_tol=5e-7)

    def test_full_eval_report(self, report, tmp_path):
        out = write_eval_report(report, tmp_path / "nested" / "dir", "baseline")
        assert out["table"].name == "baseline.metrics.tsv"
        assert [p.name for p in out["figures"]] == [
            "baseline.means.png",
            "baseline.per_query.png",
        ]
        for figure in out["figures"]:
            assert figure.read_bytes()[:8] == PNG_MAGIC

    def test_figures_alone(self, report, tmp_path):
        paths = render_metrics_figures(report, tmp_path, "solo")
        assert all(p.exists() for p in paths)

    def test_single_query_report_renders(self, tmp_path):
        tiny = MetricReport(
            per_query={"q1": {"mrr": 1.0, "ndcg_at_3": 1.0, "recall_at_100": 1.0}},
            means={"mrr": 1.0, "ndcg_at_3": 1.0, "recall_at_100": 1.0},
        )
        out = write_eval_report(tiny, tmp_path, "tiny")
        assert out["table"].exists()
        assert all(p.exists() for p in out["figures"])


class TestComparisonTable:
    def test_layout(self, comparison, tmp_path):
        path = write_comparison_table(comparison, tmp_path / "cmp.tsv")
        lines = path.read_text().splitlines()
        assert lines[0] == "metric\tmean_a\tmean_b\tdiff\tt\tp\tsignificant"
        assert len(lines) == 1 + len(METRICS)
        assert [line.split("\t")[0] for line in lines[1:]] == list(METRICS)

    def test_row_contents(self, comparison, tmp_path):
        path = write_comparison_table(comparison, tmp_path / "cmp.tsv")
        rows = {line.split("\t")[0]: line.split("\t") for line in path.read_text().splitlines()[1:]}
        mrr = rows["mrr"]
        assert mrr[1] == "0.800000"
        assert mrr[2] == "0.600000"
        assert float(mrr[3]) == pytest.approx(0.2)
        assert mrr[6] == "true"
        assert rows["ndcg_at_3"][6] == "false"
        assert rows["recall_at_100"][5] == "1"

    def test_full_comparison_report(self, comparison, tmp_path):
        out = write_comparison_report(comparison, tmp_path, "ab", label_a="ours", label_b="base")
        assert out["table"].name == "ab.compare.tsv"
        assert [p.name for p in out["figures"]] == ["ab.compare.png"]
        assert out["figures"][0].read_bytes()[:8] == PNG_MAGIC

    def test_figure_alone(self, comparison, tmp_path):
        path = render_comparison_figure(comparison, tmp_path / "fig.png")
        assert path.read_bytes()[:8] == PNG_MAGIC
