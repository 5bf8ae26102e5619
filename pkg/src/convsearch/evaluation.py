"""Retrieval quality metrics over TREC-style run and judgment files.

Three metrics are computed: mean reciprocal rank (with a configurable
positive-grade threshold), NDCG at 3 with linear gain, and recall at 100.
Conventions follow the classic trec_eval tool: the rank field in a run file
is ignored and entries are re-sorted by score descending with ties broken by
document id descending; judged queries missing from a run score zero and are
included in the means; run-only queries are excluded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import mpmath

NDCG_K = 3
RECALL_K = 100
METRICS = ("mrr", "ndcg_at_3", "recall_at_100")


class EvaluationError(Exception):
    """Base class for evaluation failures."""


class FileFormatError(EvaluationError):
    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ZeroVarianceError(EvaluationError):
    """Paired differences have zero variance but a nonzero mean, so the
    t statistic is undefined.
    """


@dataclass(frozen=True)
class Qrels:
    """Relevance judgments: query id to {document id: integer grade >= 0}."""

    judgments: Mapping[str, Mapping[str, int]]

    def __post_init__(self) -> None:
        for qid, row in self.judgments.items():
            if not qid:
                raise ValueError("query ids must be non-empty")
            for doc_id, grade in row.items():
                if not isinstance(grade, int) or isinstance(grade, bool) or grade < 0:
                    raise ValueError(f"grade for {qid}/{doc_id} must be an integer >= 0, got {grade!r}")

    @property
    def judged_queries(self) -> tuple[str, ...]:
        """Query ids with at least one judgment, sorted."""
        return tuple(sorted(qid for qid, row in self.judgments.items() if row))

    def row(self, query_id: str) -> Mapping[str, int]:
        return self.judgments.get(query_id, {})

    @classmethod
    def load(cls, path: str | Path) -> "Qrels":
        """Read TREC qrels lines: ``query_id 0 doc_id grade``."""
        judgments: dict[str, dict[str, int]] = {}
        with open(path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                fields = line.split()
                if len(fields) != 4:
                    raise FileFormatError(path, line_no, f"expected 4 fields, got {len(fields)}")
                qid, _, doc_id, grade_text = fields
                try:
                    grade = int(grade_text)
                except ValueError:
                    raise FileFormatError(path, line_no, f"grade {grade_text!r} is not an integer") from None
                if grade < 0:
                    raise FileFormatError(path, line_no, f"grade {grade} is negative")
                judgments.setdefault(qid, {})[doc_id] = grade
        return cls(judgments=judgments)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for qid in sorted(self.judgments):
                for doc_id in sorted(self.judgments[qid]):
                    handle.write(f"{qid} 0 {doc_id} {self.judgments[qid][doc_id]}\n")


def load_run(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    """Read TREC run lines ``query_id Q0 doc_id rank score tag`` into
    query id to [(doc_id, score), ...] in file order. The rank field must
    parse but is otherwise ignored, as trec_eval does.
    """
    run: dict[str, list[tuple[str, float]]] = {}
    seen: dict[str, set[str]] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 6:
                raise FileFormatError(path, line_no, f"expected 6 fields, got {len(fields)}")
            qid, _, doc_id, rank_text, score_text, _ = fields
            try:
                int(rank_text)
            except ValueError:
                raise FileFormatError(path, line_no, f"rank {rank_text!r} is not an integer") from None
            try:
                score = float(score_text)
            except ValueError:
                raise FileFormatError(path, line_no, f"score {score_text!r} is not a number") from None
            if not math.isfinite(score):
                raise FileFormatError(path, line_no, f"score {score} is not finite")
            if doc_id in seen.setdefault(qid, set()):
                raise FileFormatError(path, line_no, f"duplicate doc {doc_id!r} for query {qid!r}")
            seen[qid].add(doc_id)
            run.setdefault(qid, []).append((doc_id, score))
    return run


def save_run(
    run: Mapping[str, Iterable[tuple[str, float]]] | Iterable[tuple[str, Iterable[tuple[str, float]]]],
    path: str | Path,
    tag: str = "convsearch",
) -> None:
    """Write a TREC run file with 1-based ranks in the given entry order.
    Scores are fixed to six decimals so identical runs are byte-identical.
    """
    items = run.items() if isinstance(run, Mapping) else run
    with open(path, "w", encoding="utf-8") as handle:
        for qid, entries in items:
            for rank, (doc_id, score) in enumerate(entries, start=1):
                handle.write(f"{qid} Q0 {doc_id} {rank} {score:.6f} {tag}\n")


def trec_order(entries: Iterable[tuple[str, float]]) -> list[tuple[str, float]]:
    """Canonical trec_eval ordering: score descending, ties broken by
    document id descending.
    """
    by_doc_desc = sorted(entries, key=lambda entry: entry[0], reverse=True)
    return sorted(by_doc_desc, key=lambda entry: -entry[1])


def mrr(ranked: Iterable[tuple[str, float]], qrels_row: Mapping[str, int], threshold: int = 1) -> float:
    """Reciprocal rank of the first entry whose grade meets ``threshold``,
    or 0 when none does.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    for rank, (doc_id, _) in enumerate(ranked, start=1):
        if qrels_row.get(doc_id, 0) >= threshold:
            return 1.0 / rank
    return 0.0


def ndcg_at_k(ranked: Iterable[tuple[str, float]], qrels_row: Mapping[str, int], k: int) -> float:
    """Graded NDCG with linear gain: DCG@k over the ranking divided by the
    ideal DCG@k over all judged grades; 0 when no judged grade is positive.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dcg = 0.0
    for rank, (doc_id, _) in enumerate(ranked, start=1):
        if rank > k:
            break
        dcg += qrels_row.get(doc_id, 0) / math.log2(rank + 1)
    ideal = sorted(qrels_row.values(), reverse=True)[:k]
    idcg = sum(grade / math.log2(rank + 1) for rank, grade in enumerate(ideal, start=1))
    return dcg / idcg if idcg > 0 else 0.0


def recall_at_k(
    ranked: Iterable[tuple[str, float]],
    qrels_row: Mapping[str, int],
    k: int,
    threshold: int = 1,
) -> float:
    """Fraction of documents with grade >= threshold appearing in the top k;
    0 when the query has no such document.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    relevant = {doc_id for doc_id, grade in qrels_row.items() if grade >= threshold}
    if not relevant:
        return 0.0
    retrieved = {doc_id for _, (doc_id, _) in zip(range(k), ranked)}
    return len(retrieved & relevant) / len(relevant)


@dataclass(frozen=True)
class MetricReport:
    """Per-query and mean metric values over the judged queries."""

    per_query: Mapping[str, Mapping[str, float]]
    means: Mapping[str, float]
    config: Mapping[str, int] = field(default_factory=dict)

    def query_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.per_query))

    def values_for(self, metric: str) -> tuple[float, ...]:
        """Per-query values for one metric, aligned with query_ids()."""
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
        return tuple(self.per_query[qid][metric] for qid in self.query_ids())

    def to_record(self) -> dict:
        return {
            "per_query": {qid: dict(row) for qid, row in sorted(self.per_query.items())},
            "means": dict(self.means),
            "config": dict(self.config),
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_record(), handle, indent=2, sort_keys=True)
            handle.write("\n")


def evaluate_run(
    run: Mapping[str, Sequence[tuple[str, float]]],
    qrels: Qrels,
    mrr_positive_threshold: int = 1,
) -> MetricReport:
    """Score a run against judgments. Every judged query contributes to the
    means: queries missing from the run score 0 on all metrics. Queries in
    the run without judgments are ignored.
    """
    per_query: dict[str, dict[str, float]] = {}
    for qid in qrels.judged_queries:
        row = qrels.row(qid)
        ranked = trec_order(run.get(qid, []))
        per_query[qid] = {
            "mrr": mrr(ranked, row, mrr_positive_threshold),
            "ndcg_at_3": ndcg_at_k(ranked, row, NDCG_K),
            "recall_at_100": recall_at_k(ranked, row, RECALL_K, mrr_positive_threshold),
        }
    count = len(per_query)
    means = {
        metric: (sum(row[metric] for row in per_query.values()) / count if count else 0.0)
        for metric in METRICS
    }
    return MetricReport(
        per_query=per_query,
        means=means,
        config={"mrr_positive_threshold": mrr_positive_threshold},
    )


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p < alpha


def paired_t_test(per_query_a: Sequence[float], per_query_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test over aligned per-query values. All-zero
    differences give t=0, p=1; zero variance with a nonzero mean is an error.
    """
    if len(per_query_a) != len(per_query_b):
        raise EvaluationError(
            f"paired samples differ in length: {len(per_query_a)} vs {len(per_query_b)}"
        )
    n = len(per_query_a)
    if n < 2:
        raise EvaluationError("paired t-test needs at least 2 pairs")
    diffs = [a - b for a, b in zip(per_query_a, per_query_b)]
    if any(not math.isfinite(d) for d in diffs):
        raise EvaluationError("paired values must be finite")
    mean = sum(diffs) / n
    variance = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    if variance == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0)
        raise ZeroVarianceError(
            "differences are constant and nonzero; the t statistic is undefined"
        )
    t = mean / math.sqrt(variance / n)
    df = n - 1
    # Two-sided p from the Student t survival function via the regularized
    # incomplete beta identity.
    x = df / (df + t * t)
    p = float(mpmath.betainc(df / 2.0, 0.5, 0, x, regularized=True))
    return TTestResult(t=t, p=min(max(p, 0.0), 1.0))
