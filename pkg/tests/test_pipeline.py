"""Pipeline orchestration: turn expansion, caching, parse-failure handling,
benchmark determinism, index building, run comparison.
"""

from __future__ import annotations

import json

import pytest

from convsearch.config import (
    EncoderSettings,
    LLMSettings,
    MethodSettings,
    PipelineConfig,
    RunPaths,
)
from convsearch.core import AggregationMethod, PromptingMode, Session, Turn
from convsearch.encoders import HashingEncoder
from convsearch.evaluation import Qrels, load_run, save_run
from convsearch.index import DenseIndex, Passage, build_index
from convsearch.llm import GenerationResult, MockLLM, TransportError
from convsearch.pipeline import (
    DiskCache,
    PipelineRuntime,
    QuerySetMismatchError,
    TRACE_RESULT_DEPTH,
    build_corpus_index,
    cache_key,
    compare_runs,
    run_benchmark,
    turn_views,
)

DIM = 16


@pytest.fixture(scope="module")
def small_index():
    passages = [
        Passage(f"p{i:03d}", f"passage {i} about subject {i % 5} with extra words {i}", f"d{i // 3}")
        for i in range(40)
    ]
    index, _ = build_index(passages, HashingEncoder(dim=DIM))
    return index


def make_runtime(small_index, demos, method=None, llm=None, cache=None, doc_maxp=False):
    return PipelineRuntime(
        method=method or MethodSettings(prompting=PromptingMode.REW, n=2, m=0, top_k=10),
        llm=llm or MockLLM(seed=3),
        encoder=HashingEncoder(dim=DIM),
        index=small_index,
        demonstrations=demos,
        cache=cache,
        doc_maxp=doc_maxp,
    )


SESSION = Session(
    "s1",
    [
        Turn(1, "What is a heat pump?", "A heat pump moves heat with a refrigeration cycle."),
        Turn(2, "How efficient are they in winter?", None),
    ],
)


class TestTurnViews:
    def test_one_view_per_turn_with_history(self):
        session = Session(
            "s",
            [Turn(1, "q1", "r1"), Turn(2, "q2", "r2"), Turn(3, "q3", None)],
        )
        views = turn_views(session)
        assert [len(v.turns) for v in views] == [1, 2, 3]
        assert all(v.session_id == "s" for v in views)
        assert all(v.current_turn.response is None for v in views)
        # Prior turns keep their canonical responses.
        assert views[2].turns[0].response == "r1"
        assert views[2].turns[1].response == "r2"
        assert views[1].current_query == "q2"


class TestDiskCache:
    def test_computes_once(self, tmp_path):
        cache = DiskCache(tmp_path)
        calls = []

        def compute():
            calls.append(1)
            return {"value": [1.5, 2.25]}

        first = cache.get_or_compute("k1", compute)
        second = cache.get_or_compute("k1", compute)
        assert first == second == {"value": [1.5, 2.25]}
        assert len(calls) == 1

    def test_floats_round_trip_exactly(self, tmp_path):
        cache = DiskCache(tmp_path)
        value = [0.1 + 0.2, 2.0**-45, -1.7976931348623157e308]
        cache.get_or_compute("k", lambda: value)
        assert cache.get_or_compute("k", lambda: pytest.fail("must hit cache")) == value

    def test_corrupt_entry_recomputed(self, tmp_path):
        cache = DiskCache(tmp_path)
        cache.get_or_compute("k", lambda: 1)
        (tmp_path / "k.json").write_text("{broken")
        assert cache.get_or_compute("k", lambda: 2) == 2

    def test_cache_key_separates_parts(self):
        assert cache_key("ab", "c") != cache_key("a", "bc")
        assert cache_key("x") == cache_key("x")


class GarbageSampleLLM(MockLLM):
    """Deterministic mock whose second sample never parses."""

    def generate(self, request):
        result = super().generate(request)
        completions = list(result.completions)
        if len(completions) >= 2:
            completions[1] = ("I cannot help with that.", -0.5)
        return GenerationResult(completions=tuple(completions))


class AllGarbageLLM(MockLLM):
    def generate(self, request):
        result = super().generate(request)
        return GenerationResult(
            completions=tuple(("nothing usable", score) for _, score in result.completions)
        )


class FailingLLM(MockLLM):
    def generate(self, request):
        raise TransportError("backend is down")


class TestProcessTurn:
    def test_rew_single_stage(self, small_index, demos):
        runtime = make_runtime(small_index, demos)
        outcome = runtime.process_turn(SESSION)
        assert not outcome.failed
        assert [s.stage for s in outcome.stages] == ["rewrite"]
        assert outcome.bundle.n == 2
        assert outcome.bundle.m == 0
        assert 1 <= len(outcome.ranked) <= 10
        assert outcome.query_id == "s1_2"

    def test_rar_single_stage_paired(self, small_index, demos):
        method = MethodSettings(prompting=PromptingMode.RAR, n=3, top_k=10)
        runtime = make_runtime(small_index, demos, method=method)
        outcome = runtime.process_turn(SESSION)
        assert [s.stage for s in outcome.stages] == ["paired"]
        assert (outcome.bundle.n, outcome.bundle.m) == (3, 1)

    def test_rtr_two_stages(self, small_index, demos):
        method = MethodSettings(prompting=PromptingMode.RTR, n=2, m=2, top_k=10)
        runtime = make_runtime(small_index, demos, method=method)
        outcome = runtime.process_turn(SESSION)
        assert [s.stage for s in outcome.stages] == ["rewrite", "response[0]", "response[1]"]
        assert (outcome.bundle.n, outcome.bundle.m) == (2, 2)
        # Every rewrite (the bundle reorders them by score) got its own
        # stage-two prompt carrying it verbatim.
        stage_prompts = [stage.prompt for stage in outcome.stages[1:]]
        for rewrite in outcome.bundle.rewrites:
            assert any(prompt.endswith(f"Rewrite: {rewrite.text}") for prompt in stage_prompts)

    def test_parse_failures_are_skipped_and_recorded(self, small_index, demos):
        method = MethodSettings(prompting=PromptingMode.REW, n=3, m=0, top_k=10)
        runtime = make_runtime(small_index, demos, method=method, llm=GarbageSampleLLM(seed=3))
        outcome = runtime.process_turn(SESSION)
        assert not outcome.failed
        assert outcome.bundle.n == 2
        failures = outcome.stages[0].parse_failures
        assert [f["index"] for f in failures] == [1]
        assert failures[0]["raw"] == "I cannot help with that."

    def test_all_samples_unparseable_fails_turn(self, small_index, demos):
        runtime = make_runtime(small_index, demos, llm=AllGarbageLLM(seed=3))
        outcome = runtime.process_turn(SESSION)
        assert outcome.failed
        assert "no sample produced a parseable rewrite" in outcome.error
        assert outcome.ranked is None
        record = outcome.trace_record(runtime.method)
        assert record["error"] == outcome.error
        assert record["results"] == []

    def test_backend_failure_fails_turn(self, small_index, demos):
        runtime = make_runtime(small_index, demos, llm=FailingLLM())
        outcome = runtime.process_turn(SESSION)
        assert outcome.failed
        assert "generation backend failed" in outcome.error

    def test_doc_maxp_returns_documents(self, small_index, demos):
        runtime = make_runtime(small_index, demos, doc_maxp=True)
        outcome = runtime.process_turn(SESSION)
        assert all(pid.startswith("d") for pid, _ in outcome.ranked)

    def test_trace_record_shape(self, small_index, demos):
        method = MethodSettings(prompting=PromptingMode.RAR, aggregation=AggregationMethod.SC, top_k=30)
        runtime = make_runtime(small_index, demos, method=method)
        outcome = runtime.process_turn(SESSION)
        record = outcome.trace_record(method)
        assert record["query_id"] == "s1_2"
        assert record["prompting"] == "rar"
        assert record["aggregation"] == "sc"
        assert (record["n"], record["m"]) == (5, 1)
        assert len(record["intent"]) == DIM
        assert len(record["results"]) <= TRACE_RESULT_DEPTH
        assert record["selected"]["rewrite_index"] is not None
        assert len(record["bundle"]["rewrites"]) == 5
        json.dumps(record)  # trace records must be JSON-serializable

    def test_cache_prevents_repeat_backend_calls(self, small_index, demos, tmp_path):
        sent = []
        llm = MockLLM(seed=3, on_send=sent.append)
        cache = DiskCache(tmp_path)
        runtime = make_runtime(small_index, demos, llm=llm, cache=cache)
        first = runtime.process_turn(SESSION)
        calls_after_first = len(sent)
        second = runtime.process_turn(SESSION)
        assert len(sent) == calls_after_first
        assert first.trace_record(runtime.method) == second.trace_record(runtime.method)

    def test_cached_and_uncached_results_agree(self, small_index, demos, tmp_path):
        plain = make_runtime(small_index, demos)
        cached = make_runtime(small_index, demos, cache=DiskCache(tmp_path))
        record_a = plain.process_turn(SESSION).trace_record(plain.method)
        record_b = cached.process_turn(SESSION).trace_record(cached.method)
        assert record_a == record_b


def base_config(tmp_path, corpus_path, topics_path, **kwargs):
    defaults = dict(
        method=MethodSettings(prompting=PromptingMode.RAR, n=2, top_k=20),
        llm=LLMSettings(seed=1),
        encoder=EncoderSettings(dim=DIM),
        paths=RunPaths(
            index=str(tmp_path / "corpus.idx"),
            corpus=str(corpus_path),
            topics=str(topics_path),
            output_dir=str(tmp_path / "out"),
        ),
        workers=1,
        tag="t",
    )
    defaults.update(kwargs)
    return PipelineConfig(**defaults)


class TestRunBenchmark:
    def test_end_to_end_run_and_trace(self, tmp_path, write_corpus, write_topics):
        config = base_config(tmp_path, write_corpus(30), write_topics(2, 3))
        build_corpus_index(config)
        result = run_benchmark(config)
        assert result.failed_turns == []

        run = load_run(result.run_path)
        assert sorted(run) == [f"sess{s}_{t}" for s in range(2) for t in range(1, 4)]
        assert all(len(entries) <= 20 for entries in run.values())

        trace_lines = result.trace_path.read_text().splitlines()
        assert len(trace_lines) == 6
        for line in trace_lines:
            record = json.loads(line)
            assert record["error"] is None
            assert record["stages"][0]["prompt"].startswith("You rewrite")

    def test_byte_identical_reruns(self, tmp_path, write_corpus, write_topics):
        config = base_config(tmp_path, write_corpus(30), write_topics(3, 2), workers=3)
        build_corpus_index(config)
        first = run_benchmark(config)
        run_bytes = first.run_path.read_bytes()
        trace_bytes = first.trace_path.read_bytes()
        second = run_benchmark(config)
        assert second.run_path.read_bytes() == run_bytes
        assert second.trace_path.read_bytes() == trace_bytes

    def test_worker_count_does_not_change_output(self, tmp_path, write_corpus, write_topics):
        corpus, topics = write_corpus(30), write_topics(3, 2)
        serial = base_config(tmp_path, corpus, topics, workers=1, tag="serial")
        build_corpus_index(serial)
        parallel = base_config(tmp_path, corpus, topics, workers=4, tag="parallel")
        run_a = run_benchmark(serial)
        run_b = run_benchmark(parallel)
        text_a = run_a.run_path.read_text().replace("serial", "X")
        text_b = run_b.run_path.read_text().replace("parallel", "X")
        assert text_a == text_b

    def test_metrics_written_when_qrels_present(self, tmp_path, write_corpus, write_topics):
        corpus, topics = write_corpus(30), write_topics(2, 2)
        qrels_path = tmp_path / "qrels.txt"
        Qrels(
            {
                "sess0_1": {"p00001": 1, "p00002": 2},
                "sess0_2": {"p00003": 1},
                "sess1_1": {"p00004": 1},
                "sess1_2": {"p00005": 2},
            }
        ).save(qrels_path)
        config = base_config(tmp_path, corpus, topics)
        config = PipelineConfig(
            **{**config.__dict__, "paths": RunPaths(**{**config.paths.__dict__, "qrels": str(qrels_path)})}
        )
        build_corpus_index(config)
        result = run_benchmark(config)
        assert result.report is not None
        assert result.report_path.exists()
        saved = json.loads(result.report_path.read_text())
        assert set(saved["per_query"]) == {"sess0_1", "sess0_2", "sess1_1", "sess1_2"}
        assert all(0.0 <= value <= 1.0 for value in saved["means"].values())

    def test_missing_paths_rejected(self, tmp_path, write_corpus, write_topics):
        config = base_config(tmp_path, write_corpus(5), write_topics(1, 1))
        without_index = PipelineConfig(**{**config.__dict__, "paths": RunPaths(topics="t.jsonl")})
        with pytest.raises(Exception, match="paths.index"):
            run_benchmark(without_index)


class TestBuildCorpusIndex:
    def test_passage_corpus(self, tmp_path, write_corpus):
        config = base_config(tmp_path, write_corpus(12), tmp_path / "unused.jsonl")
        path = build_corpus_index(config)
        index = DenseIndex.load(path)
        assert index.count == 12
        assert index.passage_to_doc["p00000"] == "d00000"

    def test_document_corpus_is_split(self, tmp_path):
        corpus_path = tmp_path / "docs.jsonl"
        long_text = " ".join(f"w{i}" for i in range(600))
        with open(corpus_path, "w", encoding="utf-8") as handle:
            handle.write(json.dumps({"passage_id": "doc1", "text": long_text}) + "\n")
        config = base_config(tmp_path, corpus_path, tmp_path / "unused.jsonl")
        path = build_corpus_index(config, docs=True)
        index = DenseIndex.load(path)
        assert index.count == 4  # 600 tokens, window 256, stride 128
        assert index.ids == ("doc1-0", "doc1-1", "doc1-2", "doc1-3")
        passages_file = path.with_suffix(".passages.jsonl")
        assert passages_file.exists()
        assert len(passages_file.read_text().splitlines()) == 4

    def test_checkpoints_under_cache_dir(self, tmp_path, write_corpus):
        config = base_config(tmp_path, write_corpus(10), tmp_path / "unused.jsonl")
        config = PipelineConfig(
            **{
                **config.__dict__,
                "shard_size": 4,
                "paths": RunPaths(**{**config.paths.__dict__, "cache_dir": str(tmp_path / "cache")}),
            }
        )
        build_corpus_index(config)
        shards = list((tmp_path / "cache" / "index_build").glob("shard_*.idx"))
        assert len(shards) == 3


class TestCompareRuns:
    QRELS = Qrels(
        {
            "q1": {"d1": 2, "d2": 1},
            "q2": {"d3": 1},
            "q3": {"d1": 1, "d4": 2},
        }
    )

    def write_run(self, path, per_query):
        save_run(per_query, path, tag="x")

    def test_identical_runs_show_no_effect(self, tmp_path):
        path_a = tmp_path / "a.trec"
        run = {"q1": [("d1", 0.9)], "q2": [("d3", 0.8)], "q3": [("d9", 0.7)]}
        self.write_run(path_a, run)
        report = compare_runs(path_a, path_a, self.QRELS)
        assert report.query_count == 3
        for metric in report.metrics:
            assert report.tests[metric].t == 0.0
            assert report.tests[metric].p == 1.0
            assert not report.tests[metric].significant()
            assert report.means_a[metric] == report.means_b[metric]

    def test_differing_runs_report_both_means(self, tmp_path):
        path_a, path_b = tmp_path / "a.trec", tmp_path / "b.trec"
        self.write_run(path_a, {"q1": [("d1", 0.9)], "q2": [("d3", 0.8)], "q3": [("d4", 0.7)]})
        self.write_run(path_b, {"q1": [("dX", 0.9)], "q2": [("d3", 0.8)], "q3": [("dY", 0.7)]})
        report = compare_runs(path_a, path_b, self.QRELS)
        assert report.means_a["mrr"] > report.means_b["mrr"]
        record = report.to_record()
        assert set(record["metrics"]) == {"mrr", "ndcg_at_3", "recall_at_100"}

    def test_single_metric_selection(self, tmp_path):
        path_a = tmp_path / "a.trec"
        self.write_run(path_a, {"q1": [("d1", 0.9)], "q2": [("d3", 0.8)]})
        report = compare_runs(path_a, path_a, self.QRELS, metric="ndcg_at_3")
        assert report.metrics == ("ndcg_at_3",)

    def test_query_set_mismatch(self, tmp_path):
        path_a, path_b = tmp_path / "a.trec", tmp_path / "b.trec"
        self.write_run(path_a, {"q1": [("d1", 0.9)]})
        self.write_run(path_b, {"q2": [("d3", 0.8)]})
        with pytest.raises(QuerySetMismatchError, match="q1"):
            compare_runs(path_a, path_b, self.QRELS)
