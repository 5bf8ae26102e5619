"""End-to-end orchestration: prompt, sample, parse, encode, aggregate,
retrieve. One runtime serves both the batch benchmark and the live session
service.

Determinism contract: with deterministic backends, two runs over the same
inputs produce byte-identical run files and traces. Sessions may be processed
by parallel workers but results are always written in input order, and turns
within a session always run sequentially (later turns depend on earlier
context).
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .aggregation import AggregationOutcome, EncodedBundle, aggregate
from .config import MethodSettings, PipelineConfig, build_encoder, build_llm
from .core import (
    Generation,
    GenerationBundle,
    GenerationKind,
    PromptingMode,
    Session,
    Turn,
    load_sessions,
    require_valid_session,
)
from .encoders import Encoder, IntentVector
from .evaluation import (
    MetricReport,
    Qrels,
    TTestResult,
    evaluate_run,
    load_run,
    paired_t_test,
    save_run,
    METRICS,
)
from .index import DenseIndex, IndexBuilder, Passage, RankedList, load_corpus, maxp_docs, save_corpus, split_document
from .llm import GenerationRequest, LLMError
from .prompting import (
    OutputParseError,
    PromptTemplate,
    TextKind,
    build_rar_prompt,
    build_rew_prompt,
    build_rtr_response_prompt,
    load_demonstrations,
    parse_output,
)

logger = logging.getLogger(__name__)

TRACE_RESULT_DEPTH = 20
MAXP_SEARCH_FACTOR = 10


class PipelineError(Exception):
    """A turn or run that cannot proceed."""


class QuerySetMismatchError(PipelineError):
    """Two runs being compared do not cover the same queries."""


class DiskCache:
    """Content-addressed JSON cache: one file per key, atomic writes,
    per-key serialization. Values must round-trip through JSON exactly
    (Python floats do).
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            if key not in self._locks:
                self._locks[key] = threading.Lock()
            return self._locks[key]

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get_or_compute(self, key: str, compute: Callable[[], Any]) -> Any:
        with self._lock_for(key):
            path = self._path(key)
            if path.exists():
                try:
                    with open(path, encoding="utf-8") as handle:
                        return json.load(handle)
                except (json.JSONDecodeError, OSError):
                    logger.warning("discarding unreadable cache entry %s", path)
            value = compute()
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as handle:
                json.dump(value, handle, ensure_ascii=False)
            tmp.replace(path)
            return value


def cache_key(*parts: str) -> str:
    payload = "\x1f".join(parts).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class StageRecord:
    """One LLM invocation of a turn: the exact prompt sent, every raw
    completion with its score, and any per-sample parse failures.
    """

    stage: str
    prompt: str
    completions: tuple[tuple[str, float], ...]
    parse_failures: tuple[dict, ...] = ()

    def to_record(self) -> dict:
        return {
            "stage": self.stage,
            "prompt": self.prompt,
            "completions": [[text, score] for text, score in self.completions],
            "parse_failures": list(self.parse_failures),
        }


@dataclass(frozen=True)
class TurnOutcome:
    """Everything one processed turn produced, for the run file, the trace,
    and the interactive inspector.
    """

    session_id: str
    turn_id: int
    query: str
    stages: tuple[StageRecord, ...]
    bundle: GenerationBundle | None = None
    outcome: AggregationOutcome | None = None
    ranked: RankedList | None = None
    error: str | None = None

    @property
    def query_id(self) -> str:
        return f"{self.session_id}_{self.turn_id}"

    @property
    def failed(self) -> bool:
        return self.error is not None

    def trace_record(self, method: MethodSettings) -> dict:
        n, m = method.resolve_samples()
        bundle_record = None
        if self.bundle is not None:
            bundle_record = {
                "rewrites": [{"text": g.text, "score": g.score} for g in self.bundle.rewrites],
                "responses": [
                    [{"text": g.text, "score": g.score} for g in responses]
                    for responses in self.bundle.responses_per_rewrite
                ],
                "cot": list(self.bundle.cot) if self.bundle.cot is not None else None,
            }
        selected = None
        intent = None
        if self.outcome is not None:
            selected = {
                "rewrite_index": self.outcome.selected_rewrite_index,
                "response_index": self.outcome.selected_response_index,
            }
            intent = self.outcome.intent.tolist()
        return {
            "query_id": self.query_id,
            "session_id": self.session_id,
            "turn_id": self.turn_id,
            "query": self.query,
            "prompting": method.prompting.value,
            "aggregation": method.aggregation.value,
            "cot": method.cot,
            "n": n,
            "m": m,
            "stages": [stage.to_record() for stage in self.stages],
            "bundle": bundle_record,
            "selected": selected,
            "intent": intent,
            "results": [[pid, score] for pid, score in (self.ranked or [])][:TRACE_RESULT_DEPTH],
            "error": self.error,
        }


def turn_views(session: Session) -> list[Session]:
    """Expand a dataset conversation into one searchable Session per turn:
    view t carries turns 1..t with turn t's canonical response removed. The
    context always holds the dataset-provided queries and responses, never
    model output.
    """
    views = []
    for t, current in enumerate(session.turns):
        turns = list(session.turns[:t])
        turns.append(Turn(turn_id=current.turn_id, query=current.query, response=None))
        views.append(Session(session_id=session.session_id, turns=turns))
    return views


class PipelineRuntime:
    """Executes single turns with fixed method settings and backends."""

    def __init__(
        self,
        method: MethodSettings,
        llm,
        encoder: Encoder,
        index: DenseIndex,
        demonstrations,
        cache: DiskCache | None = None,
        max_output_tokens: int = 512,
        doc_maxp: bool = False,
    ):
        method.validate()
        self.method = method
        self.llm = llm
        self.encoder = encoder
        self.index = index
        self.cache = cache
        self.max_output_tokens = max_output_tokens
        self.doc_maxp = doc_maxp
        mode = method.prompting
        if mode is PromptingMode.RTR:
            self.rewrite_template = PromptTemplate(
                mode=PromptingMode.REW, demonstrations=demonstrations, cot_enabled=method.cot
            )
            # The response stage never re-generates reasoning: the rewrite is
            # already fixed, so its template stays CoT-free.
            self.response_template = PromptTemplate(
                mode=PromptingMode.RTR, demonstrations=demonstrations, cot_enabled=False
            )
        else:
            self.rewrite_template = PromptTemplate(
                mode=mode, demonstrations=demonstrations, cot_enabled=method.cot
            )
            self.response_template = None

    def _generate(self, prompt: str, num_samples: int) -> list[tuple[str, float]]:
        request = GenerationRequest(
            prompt=prompt,
            num_samples=num_samples,
            temperature=self.method.temperature,
            max_output_tokens=self.max_output_tokens,
        )

        def compute() -> list[list]:
            result = self.llm.generate(request)
            return [[text, score] for text, score in result.completions]

        if self.cache is None:
            raw = compute()
        else:
            key = cache_key(
                "llm",
                self.llm.signature,
                f"{request.temperature!r}",
                str(request.num_samples),
                str(request.max_output_tokens),
                prompt,
            )
            raw = self.cache.get_or_compute(key, compute)
        return [(text, float(score)) for text, score in raw]

    def _encode(self, text: str, kind: TextKind) -> IntentVector:
        if self.cache is None:
            return self.encoder.encode(text, kind)
        key = cache_key("encode", self.encoder.signature, TextKind(kind).value, text)
        values = self.cache.get_or_compute(
            key, lambda: self.encoder.encode(text, kind).tolist()
        )
        return IntentVector(values=values)

    def _sample_bundle(
        self, session: Session
    ) -> tuple[GenerationBundle | None, list[StageRecord], str | None]:
        """Run the prompting stage(s) and parse completions into a bundle.
        Returns (bundle, stage records, error). Samples that fail to parse
        are skipped; the turn errors only when nothing usable remains.
        """
        mode = self.method.prompting
        n, m = self.method.resolve_samples()
        cot_enabled = self.method.cot
        stages: list[StageRecord] = []

        if mode in (PromptingMode.REW, PromptingMode.RAR):
            if mode is PromptingMode.REW:
                prompt = build_rew_prompt(self.rewrite_template, session)
            else:
                prompt = build_rar_prompt(self.rewrite_template, session)
            completions = self._generate(prompt, n)
            rewrites: list[Generation] = []
            responses: list[list[Generation]] = []
            cots: list[str] = []
            failures: list[dict] = []
            for i, (text, score) in enumerate(completions):
                try:
                    parsed = parse_output(text, mode, cot_enabled)
                except OutputParseError as exc:
                    failures.append({"index": i, "error": str(exc), "raw": text})
                    continue
                rewrites.append(Generation(text=parsed.rewrite, score=score, kind=GenerationKind.REWRITE))
                if mode is PromptingMode.RAR:
                    responses.append(
                        [Generation(text=parsed.response, score=score, kind=GenerationKind.RESPONSE)]
                    )
                else:
                    responses.append([])
                cots.append(parsed.cot or "")
            stages.append(
                StageRecord(
                    stage="rewrite" if mode is PromptingMode.REW else "paired",
                    prompt=prompt,
                    completions=tuple(completions),
                    parse_failures=tuple(failures),
                )
            )
            if not rewrites:
                return None, stages, "no sample produced a parseable rewrite"
            bundle = GenerationBundle.from_samples(
                rewrites, responses, cots if cot_enabled else None
            )
            return bundle, stages, None

        # Two-stage prompting: rewrites first, then responses per rewrite.
        rewrite_prompt = build_rew_prompt(self.rewrite_template, session)
        completions = self._generate(rewrite_prompt, n)
        rewrites = []
        cots = []
        failures = []
        for i, (text, score) in enumerate(completions):
            try:
                parsed = parse_output(text, PromptingMode.REW, cot_enabled)
            except OutputParseError as exc:
                failures.append({"index": i, "error": str(exc), "raw": text})
                continue
            rewrites.append(Generation(text=parsed.rewrite, score=score, kind=GenerationKind.REWRITE))
            cots.append(parsed.cot or "")
        stages.append(
            StageRecord(
                stage="rewrite",
                prompt=rewrite_prompt,
                completions=tuple(completions),
                parse_failures=tuple(failures),
            )
        )
        if not rewrites:
            return None, stages, "no sample produced a parseable rewrite"

        responses = []
        for r_index, rewrite in enumerate(rewrites):
            prompt = build_rtr_response_prompt(self.response_template, session, rewrite.text)
            completions = self._generate(prompt, m)
            parsed_responses: list[Generation] = []
            failures = []
            for i, (text, score) in enumerate(completions):
                try:
                    parsed = parse_output(text, PromptingMode.RTR, False)
                except OutputParseError as exc:
                    failures.append({"index": i, "error": str(exc), "raw": text})
                    continue
                parsed_responses.append(
                    Generation(text=parsed.response, score=score, kind=GenerationKind.RESPONSE)
                )
            stages.append(
                StageRecord(
                    stage=f"response[{r_index}]",
                    prompt=prompt,
                    completions=tuple(completions),
                    parse_failures=tuple(failures),
                )
            )
            responses.append(parsed_responses)

        # Bundles need a uniform response count per rewrite: drop rewrites
        # with none, trim the rest to the smallest parsed count.
        kept = [i for i in range(len(rewrites)) if responses[i]]
        if not kept:
            return None, stages, "no sample produced a parseable response"
        effective_m = min(len(responses[i]) for i in kept)
        bundle = GenerationBundle.from_samples(
            [rewrites[i] for i in kept],
            [responses[i][:effective_m] for i in kept],
            [cots[i] for i in kept] if cot_enabled else None,
        )
        return bundle, stages, None

    def _encode_bundle(self, bundle: GenerationBundle) -> EncodedBundle:
        rewrite_vectors = tuple(
            self._encode(g.text, TextKind.QUERY) for g in bundle.rewrites
        )
        response_vectors = tuple(
            tuple(self._encode(g.text, TextKind.RESPONSE) for g in responses)
            for responses in bundle.responses_per_rewrite
        )
        if bundle.m == 0:
            return EncodedBundle(rewrite_vectors=rewrite_vectors)
        return EncodedBundle(rewrite_vectors=rewrite_vectors, response_vectors=response_vectors)

    def _search(self, outcome: AggregationOutcome) -> RankedList:
        k = self.method.top_k
        if not self.doc_maxp:
            return self.index.search(outcome.intent, k)
        passages = self.index.search(outcome.intent, k * MAXP_SEARCH_FACTOR)
        return maxp_docs(passages, self.index.passage_to_doc, k)

    def process_turn(self, session: Session) -> TurnOutcome:
        """Run the full pipeline for the session's current query. Backend
        errors and empty bundles yield a failed outcome rather than raising.
        """
        require_valid_session(session)
        base = {
            "session_id": session.session_id,
            "turn_id": session.current_turn.turn_id,
            "query": session.current_query,
        }
        try:
            bundle, stages, error = self._sample_bundle(session)
        except LLMError as exc:
            return TurnOutcome(stages=(), error=f"generation backend failed: {exc}", **base)
        if bundle is None:
            return TurnOutcome(stages=tuple(stages), error=error, **base)
        try:
            encoded = self._encode_bundle(bundle)
        except Exception as exc:  # noqa: BLE001 - any backend failure flags the turn
            return TurnOutcome(
                stages=tuple(stages), bundle=bundle, error=f"encoding failed: {exc}", **base
            )
        outcome = aggregate(encoded, self.method.prompting, self.method.aggregation)
        ranked = self._search(outcome)
        return TurnOutcome(
            stages=tuple(stages), bundle=bundle, outcome=outcome, ranked=ranked, **base
        )


@dataclass
class BenchmarkResult:
    run_path: Path
    trace_path: Path
    report: MetricReport | None
    report_path: Path | None
    outcomes: list[TurnOutcome] = field(default_factory=list)
    failed_turns: list[str] = field(default_factory=list)


def _process_session(runtime: PipelineRuntime, session: Session) -> list[TurnOutcome]:
    return [runtime.process_turn(view) for view in turn_views(session)]


def run_benchmark(config: PipelineConfig, on_send: Callable[[str], None] | None = None) -> BenchmarkResult:
    """Process every turn of every topic session, write the TREC run file and
    the JSONL trace, and evaluate against qrels when provided.
    """
    config.validate()
    paths = config.paths
    if not paths.index:
        raise PipelineError("paths.index is required to run a benchmark")
    if not paths.topics:
        raise PipelineError("paths.topics is required to run a benchmark")
    index = DenseIndex.load(paths.index)
    sessions = load_sessions(paths.topics)
    demonstrations = load_demonstrations(paths.demos_path())
    llm = build_llm(config.llm, on_send=on_send)
    encoder = build_encoder(config.encoder)
    cache = DiskCache(paths.cache_dir) if paths.cache_dir else None
    runtime = PipelineRuntime(
        method=config.method,
        llm=llm,
        encoder=encoder,
        index=index,
        demonstrations=demonstrations,
        cache=cache,
        max_output_tokens=config.llm.max_output_tokens,
        doc_maxp=config.doc_maxp,
    )

    output_dir = Path(paths.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    if config.workers > 1 and len(sessions) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_process_session, runtime, session) for session in sessions]
            per_session = [future.result() for future in futures]
    else:
        per_session = [_process_session(runtime, session) for session in sessions]

    outcomes = [outcome for session_outcomes in per_session for outcome in session_outcomes]
    failed = [outcome.query_id for outcome in outcomes if outcome.failed]
    for query_id in failed:
        logger.warning("turn %s produced no run entries", query_id)

    run_path = output_dir / f"{config.tag}.run.trec"
    run_entries = [
        (outcome.query_id, list(outcome.ranked)) for outcome in outcomes if outcome.ranked is not None
    ]
    save_run(run_entries, run_path, tag=config.tag)

    trace_path = Path(paths.trace) if paths.trace else output_dir / f"{config.tag}.trace.jsonl"
    with open(trace_path, "w", encoding="utf-8") as handle:
        for outcome in outcomes:
            handle.write(
                json.dumps(outcome.trace_record(config.method), ensure_ascii=False) + "\n"
            )

    report = None
    report_path = None
    if paths.qrels:
        qrels = Qrels.load(paths.qrels)
        report = evaluate_run(dict(run_entries), qrels, config.mrr_threshold)
        report_path = output_dir / f"{config.tag}.metrics.json"
        report.save(report_path)

    return BenchmarkResult(
        run_path=run_path,
        trace_path=trace_path,
        report=report,
        report_path=report_path,
        outcomes=outcomes,
        failed_turns=failed,
    )


def build_corpus_index(config: PipelineConfig, docs: bool = False) -> Path:
    """Encode a corpus into a persisted dense index. With ``docs`` set, each
    input line is a document that is first split into overlapping passages
    (written next to the index for snippet lookup).
    """
    paths = config.paths
    if not paths.corpus:
        raise PipelineError("paths.corpus is required to build an index")
    if not paths.index:
        raise PipelineError("paths.index is required to build an index")
    encoder = build_encoder(config.encoder)
    index_path = Path(paths.index)
    index_path.parent.mkdir(parents=True, exist_ok=True)

    if docs:
        passages: list[Passage] = []
        for record in load_corpus(paths.corpus):
            doc_id = record.doc_id or record.passage_id
            passages.extend(
                split_document(doc_id, record.text, config.split_window, config.split_stride)
            )
        corpus: Iterable[Passage] = passages
        save_corpus(passages, index_path.with_suffix(".passages.jsonl"))
    else:
        corpus = load_corpus(paths.corpus)

    builder = IndexBuilder(
        encoder,
        checkpoint_dir=paths.cache_dir and Path(paths.cache_dir) / "index_build",
        shard_size=config.shard_size,
    )
    index, report = builder.build(corpus)
    for passage_id, reason in report.skipped:
        logger.warning("skipped passage %s: %s", passage_id, reason)
    index.save(index_path)
    logger.info("indexed %d passages to %s (%d skipped)", index.count, index_path, len(report.skipped))
    return index_path


@dataclass(frozen=True)
class ComparisonReport:
    """Two runs side by side: means per metric, paired t-test per metric,
    significance at the 0.05 level."""

    means_a: dict[str, float]
    means_b: dict[str, float]
    tests: dict[str, TTestResult]
    query_count: int
    metrics: tuple[str, ...]

    def to_record(self) -> dict:
        return {
            "query_count": self.query_count,
            "metrics": {
                metric: {
                    "mean_a": self.means_a[metric],
                    "mean_b": self.means_b[metric],
                    "t": self.tests[metric].t,
                    "p": self.tests[metric].p,
                    "significant": self.tests[metric].significant(),
                }
                for metric in self.metrics
            },
        }


def compare_runs(
    run_a: str | Path,
    run_b: str | Path,
    qrels: Qrels,
    metric: str | None = None,
    mrr_threshold: int = 1,
) -> ComparisonReport:
    """Evaluate two run files over one qrels set and paired-t-test their
    per-query metric values. The runs must cover the same query set.
    """
    entries_a = load_run(run_a)
    entries_b = load_run(run_b)
    if set(entries_a) != set(entries_b):
        only_a = sorted(set(entries_a) - set(entries_b))[:5]
        only_b = sorted(set(entries_b) - set(entries_a))[:5]
        raise QuerySetMismatchError(
            f"runs cover different queries (only in a: {only_a}, only in b: {only_b})"
        )
    report_a = evaluate_run(entries_a, qrels, mrr_threshold)
    report_b = evaluate_run(entries_b, qrels, mrr_threshold)
    metrics = (metric,) if metric else METRICS
    tests = {}
    for name in metrics:
        values_a = report_a.values_for(name)
        values_b = report_b.values_for(name)
        tests[name] = paired_t_test(values_a, values_b)
    return ComparisonReport(
        means_a={name: report_a.means[name] for name in metrics},
        means_b={name: report_b.means[name] for name in metrics},
        tests=tests,
        query_count=len(report_a.per_query),
        metrics=tuple(metrics),
    )
