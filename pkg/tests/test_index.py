"""Dense index: construction, exact search with the id tie rule,
persistence, document splitting, checkpointed builds, document-level scoring.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from convsearch.encoders import HashingEncoder, IntentVector
from convsearch.index import (
    DenseIndex,
    DuplicatePassageError,
    INDEX_MAGIC,
    IndexBuilder,
    IndexError_,
    IndexFormatError,
    MissingDocMappingError,
    Passage,
    PassageStore,
    RankedList,
    build_index,
    load_corpus,
    maxp_docs,
    save_corpus,
    split_document,
)


class TestRankedList:
    def test_scores_must_be_non_increasing(self):
        with pytest.raises(ValueError, match="non-increasing"):
            RankedList(entries=(("a", 1.0), ("b", 2.0)), k=5)

    def test_ids_must_be_unique(self):
        with pytest.raises(ValueError, match="unique"):
            RankedList(entries=(("a", 2.0), ("a", 1.0)), k=5)

    def test_cannot_exceed_k(self):
        with pytest.raises(ValueError, match="k=1"):
            RankedList(entries=(("a", 2.0), ("b", 1.0)), k=1)

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            RankedList(entries=(), k=0)

    def test_iterable_and_sized(self):
        ranked = RankedList(entries=(("a", 2.0), ("b", 1.0)), k=5)
        assert list(ranked) == [("a", 2.0), ("b", 1.0)]
        assert len(ranked) == 2


class TestDenseIndex:
    def test_shape_properties(self):
        index = DenseIndex(np.eye(3, dtype=np.float32), ["a", "b", "c"])
        assert (index.count, index.dim) == (3, 3)

    def test_duplicate_passage_id(self):
        with pytest.raises(DuplicatePassageError):
            DenseIndex(np.eye(2), ["a", "a"])

    def test_requires_matrix(self):
        with pytest.raises(ValueError, match="2-D"):
            DenseIndex(np.zeros(4), ["a"])

    def test_id_count_must_match_rows(self):
        with pytest.raises(ValueError, match="one id per row"):
            DenseIndex(np.eye(2), ["a"])

    def test_search_orders_by_score_then_id(self):
        index = DenseIndex([[1.0, 0.0], [1.0, 0.0], [0.5, 0.0]], ["p2", "p1", "p3"])
        ranked = index.search(IntentVector([1.0, 0.0]), k=3)
        assert list(ranked) == [("p1", 1.0), ("p2", 1.0), ("p3", 0.5)]

    def test_search_clamps_k_to_count(self):
        index = DenseIndex([[1.0], [0.5]], ["a", "b"])
        ranked = index.search(IntentVector([1.0]), k=100)
        assert len(ranked) == 2
        assert ranked.k == 100

    def test_search_empty_index(self):
        index = DenseIndex(np.zeros((0, 4), dtype=np.float32), [])
        assert list(index.search(IntentVector([1.0, 0.0, 0.0, 0.0]), k=5)) == []

    def test_search_dim_mismatch(self):
        index = DenseIndex(np.eye(2), ["a", "b"])
        with pytest.raises(IndexError_, match="dim"):
            index.search(IntentVector([1.0, 0.0, 0.0]), k=1)

    def test_search_rejects_bad_k(self):
        index = DenseIndex(np.eye(2), ["a", "b"])
        with pytest.raises(ValueError):
            index.search(IntentVector([1.0, 0.0]), k=0)

    def test_passage_to_doc_skips_unmapped(self):
        index = DenseIndex(np.eye(2), ["a", "b"], doc_ids=["d1", None])
        assert index.passage_to_doc == {"a": "d1"}


class TestPersistence:
    def make_index(self):
        rng = np.random.default_rng(5)
        matrix = (rng.integers(-4096, 4097, size=(10, 6)) * 2.0**-10).astype(np.float32)
        ids = [f"p{i}" for i in range(10)]
        docs = [f"d{i // 2}" if i % 3 else None for i in range(10)]
        return DenseIndex(matrix, ids, docs)

    def test_round_trip(self, tmp_path):
        index = self.make_index()
        path = tmp_path / "corpus.idx"
        index.save(path)
        loaded = DenseIndex.load(path)
        assert loaded.ids == index.ids
        assert loaded.doc_ids == index.doc_ids
        assert np.array_equal(loaded._matrix, index._matrix)
        intent = IntentVector([0.25, -0.5, 1.0, 0.125, 0.0, -1.0])
        assert list(loaded.search(intent, k=10)) == list(index.search(intent, k=10))

    def test_magic_prefix(self, tmp_path):
        index = self.make_index()
        path = tmp_path / "corpus.idx"
        index.save(path)
        assert path.read_bytes().startswith(INDEX_MAGIC)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.idx"
        path.write_bytes(b"NOTANIDX" + b"\x00" * 64)
        with pytest.raises(IndexFormatError, match="magic"):
            DenseIndex.load(path)

    def test_truncated_file(self, tmp_path):
        index = self.make_index()
        path = tmp_path / "corpus.idx"
        index.save(path)
        path.write_bytes(path.read_bytes()[:60])
        with pytest.raises(IndexFormatError):
            DenseIndex.load(path)


class TestMaxpDocs:
    MAPPING = {"p1": "d1", "p2": "d2", "p3": "d1", "p4": "d3"}

    def test_best_passage_scores_the_document(self):
        ranked = RankedList(entries=(("p1", 5.0), ("p2", 4.0), ("p3", 3.0)), k=10)
        docs = maxp_docs(ranked, self.MAPPING, k=10)
        assert list(docs) == [("d1", 5.0), ("d2", 4.0)]

    def test_doc_ties_break_by_smaller_id(self):
        ranked = RankedList(entries=(("p2", 4.0), ("p4", 4.0)), k=10)
        docs = maxp_docs(ranked, self.MAPPING, k=10)
        assert list(docs) == [("d2", 4.0), ("d3", 4.0)]

    def test_truncates_to_k(self):
        ranked = RankedList(entries=(("p1", 5.0), ("p2", 4.0), ("p4", 3.0)), k=10)
        assert len(maxp_docs(ranked, self.MAPPING, k=2)) == 2

    def test_missing_mapping_is_an_error(self):
        ranked = RankedList(entries=(("stray", 1.0),), k=10)
        with pytest.raises(MissingDocMappingError, match="stray"):
            maxp_docs(ranked, self.MAPPING, k=10)


class TestCorpusIO:
    def test_round_trip(self, tmp_path):
        passages = [
            Passage("p1", "first text", "d1"),
            Passage("p2", "second text", None),
        ]
        path = tmp_path / "corpus.jsonl"
        save_corpus(passages, path)
        assert list(load_corpus(path)) == passages

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text('{"passage_id": "p1", "text": "t"}\n\n{"passage_id": "p2", "text": "u"}\n')
        assert [p.passage_id for p in load_corpus(path)] == ["p1", "p2"]

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text('{"passage_id": "p1", "text": "t"}\nnot json\n')
        with pytest.raises(ValueError, match=":2:"):
            list(load_corpus(path))

    def test_missing_field_reports_position(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text('{"passage_id": "p1"}\n')
        with pytest.raises(ValueError, match=":1:"):
            list(load_corpus(path))


class TestSplitDocument:
    def test_overlapping_windows(self):
        text = " ".join(f"tok{i}" for i in range(600))
        passages = split_document("doc", text, window=256, stride=128)
        assert [p.passage_id for p in passages] == ["doc-0", "doc-1", "doc-2", "doc-3"]
        assert all(p.doc_id == "doc" for p in passages)
        starts = [0, 128, 256, 384]
        for passage, start in zip(passages, starts):
            tokens = passage.text.split()
            assert tokens[0] == f"tok{start}"
            assert len(tokens) == min(256, 600 - start)

    def test_short_document_is_one_passage(self):
        passages = split_document("doc", "just a few tokens here")
        assert len(passages) == 1
        assert passages[0].text == "just a few tokens here"

    def test_empty_document_yields_nothing(self):
        assert split_document("doc", "   ") == []

    def test_rejects_bad_window(self):
        with pytest.raises(ValueError):
            split_document("doc", "text", window=0)

    @given(
        n=st.integers(1, 60),
        window=st.integers(1, 20),
        data=st.data(),
    )
    def test_windows_cover_every_token(self, n, window, data):
        stride = data.draw(st.integers(1, window))
        text = " ".join(f"t{i}" for i in range(n))
        passages = split_document("d", text, window=window, stride=stride)
        covered = set()
        for i, passage in enumerate(passages):
            tokens = passage.text.split()
            start = i * stride
            assert tokens == [f"t{j}" for j in range(start, start + len(tokens))]
            covered.update(range(start, start + len(tokens)))
        assert covered == set(range(n))


class CountingEncoder(HashingEncoder):
    """Raises RuntimeError on a chosen encode call to simulate a crash."""

    def __init__(self, fail_on_call=None, **kwargs):
        super().__init__(**kwargs)
        self.calls = 0
        self.fail_on_call = fail_on_call

    def _embed(self, text, kind):
        self.calls += 1
        if self.fail_on_call is not None and self.calls == self.fail_on_call:
            raise RuntimeError("simulated crash")
        return super()._embed(text, kind)


def corpus_of(count):
    return [Passage(f"p{i:03d}", f"passage number {i} about topic {i % 5}", f"d{i // 2}") for i in range(count)]


class TestIndexBuilder:
    def test_plain_build(self):
        index, report = build_index(corpus_of(5), HashingEncoder(dim=8))
        assert index.count == 5
        assert report.count == 5
        assert report.skipped == []

    def test_duplicate_in_corpus(self):
        passages = corpus_of(3) + [Passage("p001", "again", None)]
        with pytest.raises(DuplicatePassageError):
            build_index(passages, HashingEncoder(dim=8))

    def test_encoder_failures_skip_and_report(self):
        passages = corpus_of(3) + [Passage("blank", "   ", None)]
        index, report = build_index(passages, HashingEncoder(dim=8))
        assert index.count == 3
        assert [pid for pid, _ in report.skipped] == ["blank"]
        assert "blank" not in index.ids

    def test_empty_corpus(self):
        index, report = build_index([], HashingEncoder(dim=8))
        assert index.count == 0
        assert report.count == 0

    def test_checkpointed_build_writes_shards(self, tmp_path):
        builder = IndexBuilder(HashingEncoder(dim=8), checkpoint_dir=tmp_path, shard_size=2)
        index, _ = builder.build(corpus_of(5))
        assert index.count == 5
        shard_files = sorted(p.name for p in tmp_path.glob("shard_*.idx"))
        assert shard_files == ["shard_00000.idx", "shard_00001.idx", "shard_00002.idx"]

    def test_resume_after_crash_matches_uninterrupted(self, tmp_path):
        passages = corpus_of(7)
        baseline, _ = build_index(passages, HashingEncoder(dim=8))

        crashing = CountingEncoder(fail_on_call=5, dim=8)
        builder = IndexBuilder(crashing, checkpoint_dir=tmp_path, shard_size=3)
        with pytest.raises(RuntimeError, match="simulated crash"):
            builder.build(passages)

        resumed_builder = IndexBuilder(HashingEncoder(dim=8), checkpoint_dir=tmp_path, shard_size=3)
        resumed, report = resumed_builder.build(passages)
        assert resumed.ids == baseline.ids
        assert resumed.doc_ids == baseline.doc_ids
        assert np.array_equal(resumed._matrix, baseline._matrix)
        assert report.count == 7

    def test_resume_skips_only_flushed_shards(self, tmp_path):
        passages = corpus_of(6)
        builder = IndexBuilder(HashingEncoder(dim=8), checkpoint_dir=tmp_path, shard_size=4)
        first, _ = builder.build(passages)

        # A finished build leaves a complete manifest; rebuilding re-encodes
        # nothing and returns the same index.
        counting = CountingEncoder(dim=8)
        again, _ = IndexBuilder(counting, checkpoint_dir=tmp_path, shard_size=4).build(passages)
        assert counting.calls == 0
        assert again.ids == first.ids
        assert np.array_equal(again._matrix, first._matrix)

    def test_skip_records_survive_resume(self, tmp_path):
        passages = [Passage("blank", " ", None)] + corpus_of(3)
        builder = IndexBuilder(HashingEncoder(dim=8), checkpoint_dir=tmp_path, shard_size=2)
        _, first_report = builder.build(passages)
        assert [pid for pid, _ in first_report.skipped] == ["blank"]

        _, second_report = IndexBuilder(
            HashingEncoder(dim=8), checkpoint_dir=tmp_path, shard_size=2
        ).build(passages)
        assert [pid for pid, _ in second_report.skipped] == ["blank"]


class TestPassageStore:
    def test_lookup(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        save_corpus(corpus_of(4), path)
        store = PassageStore.from_file(path)
        assert len(store) == 4
        assert "p002" in store
        assert store.get("p002").doc_id == "d1"
        assert store.get("missing") is None

    def test_duplicate_rejected(self):
        with pytest.raises(DuplicatePassageError):
            PassageStore([Passage("p", "a", None), Passage("p", "b", None)])
