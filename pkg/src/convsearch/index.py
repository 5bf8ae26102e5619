"""Passage corpus storage, exact dense retrieval, and document-level scoring.

The index is a brute-force scan: passages are encoded once into a matrix and
search is an exact top-k by dot product (ties broken by passage id). That is
the whole algorithm on purpose — desk-scale corpora fit in memory and the
tests demand oracle-exact results. Builds can checkpoint encoded shards to
disk and resume after interruption.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .core import TextKind
from .encoders import Encoder, EncoderError, IntentVector
from .prompting import DEFAULT_TOKENIZER, Tokenizer

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"CVSIDX1\n"


class IndexError_(Exception):
    """Base class for index failures (named to avoid shadowing builtins)."""


class DuplicatePassageError(IndexError_):
    def __init__(self, passage_id: str):
        super().__init__(f"duplicate passage_id {passage_id!r}")
        self.passage_id = passage_id


class IndexFormatError(IndexError_):
    """Persisted index file is not in the expected format."""


class MissingDocMappingError(IndexError_):
    def __init__(self, passage_id: str):
        super().__init__(f"no document mapping for passage {passage_id!r}")
        self.passage_id = passage_id


@dataclass(frozen=True)
class Passage:
    """A retrievable text unit. ``doc_id`` ties split passages back to their
    source document for document-level scoring.
    """

    passage_id: str
    text: str
    doc_id: str | None = None


@dataclass(frozen=True)
class RankedList:
    """Retrieval output: (id, score) entries with scores non-increasing,
    unique ids, and at most ``k`` entries.
    """

    entries: tuple[tuple[str, float], ...]
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if len(self.entries) > self.k:
            raise ValueError(f"ranked list holds {len(self.entries)} entries for k={self.k}")
        scores = [score for _, score in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")
        ids = [entry_id for entry_id, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique within a ranked list")

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


class DenseIndex:
    """Immutable matrix of passage vectors plus aligned ids. Safe for
    unlimited concurrent searches once built.
    """

    def __init__(
        self,
        vectors: np.ndarray,
        ids: Iterable[str],
        doc_ids: Iterable[str | None] | None = None,
    ):
        matrix = np.asarray(vectors, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError(f"vectors must be a 2-D matrix, got shape {matrix.shape}")
        self._matrix = matrix
        self._matrix.setflags(write=False)
        self.ids: tuple[str, ...] = tuple(ids)
        if len(self.ids) != matrix.shape[0]:
            raise ValueError("one id per row required")
        seen: set[str] = set()
        for passage_id in self.ids:
            if passage_id in seen:
                raise DuplicatePassageError(passage_id)
            seen.add(passage_id)
        self.doc_ids: tuple[str | None, ...] = (
            tuple(doc_ids) if doc_ids is not None else (None,) * len(self.ids)
        )
        if len(self.doc_ids) != len(self.ids):
            raise ValueError("one doc_id entry per row required")

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def count(self) -> int:
        return self._matrix.shape[0]

    @property
    def passage_to_doc(self) -> dict[str, str]:
        """Mapping of passage id to document id, where known."""
        return {pid: doc for pid, doc in zip(self.ids, self.doc_ids) if doc is not None}

    def search(self, intent: IntentVector, k: int) -> RankedList:
        """Exact top-k passages by dot product with ``intent``, descending;
        equal scores order by lexicographically smaller passage id.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if intent.dim != self.dim:
            raise IndexError_(f"intent dim {intent.dim} does not match index dim {self.dim}")
        if self.count == 0:
            return RankedList(entries=(), k=k)
        scores = self._matrix.astype(np.float64) @ intent.values
        order = sorted(range(self.count), key=lambda i: (-scores[i], self.ids[i]))
        top = order[: min(k, self.count)]
        return RankedList(entries=tuple((self.ids[i], float(scores[i])) for i in top), k=k)

    def save(self, path: str | Path) -> None:
        header = json.dumps({"dim": self.dim, "count": self.count, "dtype": "<f4"}).encode("utf-8")
        id_table = json.dumps(
            [[pid, doc] for pid, doc in zip(self.ids, self.doc_ids)], ensure_ascii=False
        ).encode("utf-8")
        with open(path, "wb") as handle:
            handle.write(INDEX_MAGIC)
            handle.write(struct.pack("<I", len(header)))
            handle.write(header)
            handle.write(self._matrix.astype("<f4").tobytes(order="C"))
            handle.write(id_table)

    @classmethod
    def load(cls, path: str | Path) -> "DenseIndex":
        with open(path, "rb") as handle:
            magic = handle.read(len(INDEX_MAGIC))
            if magic != INDEX_MAGIC:
                raise IndexFormatError(f"{path} is not a dense index (bad magic)")
            (header_len,) = struct.unpack("<I", handle.read(4))
            header = json.loads(handle.read(header_len).decode("utf-8"))
            dim, count = int(header["dim"]), int(header["count"])
            matrix_bytes = handle.read(count * dim * 4)
            if len(matrix_bytes) != count * dim * 4:
                raise IndexFormatError(f"{path} is truncated")
            matrix = np.frombuffer(matrix_bytes, dtype="<f4").reshape(count, dim).copy()
            id_table = json.loads(handle.read().decode("utf-8"))
        if len(id_table) != count:
            raise IndexFormatError(f"{path} id table has {len(id_table)} entries, expected {count}")
        return cls(
            vectors=matrix,
            ids=[row[0] for row in id_table],
            doc_ids=[row[1] for row in id_table],
        )


class PassageStore:
    """In-memory id to passage lookup for snippet display and doc mapping."""

    def __init__(self, passages: Iterable[Passage] = ()):
        self._passages: dict[str, Passage] = {}
        for passage in passages:
            if passage.passage_id in self._passages:
                raise DuplicatePassageError(passage.passage_id)
            self._passages[passage.passage_id] = passage

    @classmethod
    def from_file(cls, path: str | Path) -> "PassageStore":
        return cls(load_corpus(path))

    def get(self, passage_id: str) -> Passage | None:
        return self._passages.get(passage_id)

    def __len__(self) -> int:
        return len(self._passages)

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._passages


def maxp_docs(ranked: RankedList, passage_to_doc: Mapping[str, str], k: int) -> RankedList:
    """Collapse a passage ranking to documents, scoring each document by its
    best passage, sorted descending (ties by smaller doc id), truncated to k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    best: dict[str, float] = {}
    for passage_id, score in ranked:
        doc_id = passage_to_doc.get(passage_id)
        if doc_id is None:
            raise MissingDocMappingError(passage_id)
        if doc_id not in best or score > best[doc_id]:
            best[doc_id] = score
    ordered = sorted(best.items(), key=lambda item: (-item[1], item[0]))[:k]
    return RankedList(entries=tuple(ordered), k=k)


@dataclass
class BuildReport:
    """What happened during an index build: rows encoded and passages
    skipped because the encoder failed on them.
    """

    count: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)


def load_corpus(path: str | Path) -> Iterator[Passage]:
    """Stream passages from a JSON-lines corpus file."""
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                yield Passage(
                    passage_id=str(record["passage_id"]),
                    text=record["text"],
                    doc_id=record.get("doc_id"),
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{line_no}: malformed corpus line: {exc}") from exc


def save_corpus(passages: Iterable[Passage], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for passage in passages:
            record = {"passage_id": passage.passage_id, "doc_id": passage.doc_id, "text": passage.text}
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def split_document(
    doc_id: str,
    text: str,
    window: int = 256,
    stride: int = 128,
    tokenizer: Tokenizer | None = None,
) -> list[Passage]:
    """Split a document into overlapping token windows, each a passage that
    keeps the source ``doc_id``. Windows advance by ``stride`` until one
    covers the end of the document.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    tokenizer = tokenizer or DEFAULT_TOKENIZER
    tokens = tokenizer.tokenize(text)
    if not tokens:
        return []
    passages = []
    start = 0
    piece = 0
    while True:
        chunk = tokens[start : start + window]
        passages.append(
            Passage(
                passage_id=f"{doc_id}-{piece}",
                text=tokenizer.detokenize(chunk),
                doc_id=doc_id,
            )
        )
        if start + window >= len(tokens):
            break
        start += stride
        piece += 1
    return passages


class IndexBuilder:
    """Accumulates encoded passages, optionally checkpointing shards so an
    interrupted build can resume. Per-passage encoder failures are recorded
    and the passage skipped; any other exception aborts the build with the
    finished shards intact.
    """

    MANIFEST = "manifest.json"

    def __init__(
        self,
        encoder: Encoder,
        checkpoint_dir: str | Path | None = None,
        shard_size: int = 1024,
    ):
        if shard_size < 1:
            raise ValueError("shard_size must be >= 1")
        self.encoder = encoder
        self.shard_size = shard_size
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        if self.checkpoint_dir:
            self.checkpoint_dir.mkdir(parents=True, exist_ok=True)

    def _manifest_path(self) -> Path:
        assert self.checkpoint_dir is not None
        return self.checkpoint_dir / self.MANIFEST

    def _load_manifest(self) -> dict:
        path = self._manifest_path()
        if path.exists():
            with open(path, encoding="utf-8") as handle:
                return json.load(handle)
        return {"shards": []}

    def _write_manifest(self, manifest: dict) -> None:
        with open(self._manifest_path(), "w", encoding="utf-8") as handle:
            json.dump(manifest, handle)

    def build(self, corpus: Iterable[Passage]) -> tuple[DenseIndex, BuildReport]:
        report = BuildReport()
        seen: set[str] = set()
        shards: list[tuple[np.ndarray, list[str], list[str | None]]] = []

        manifest = {"shards": []}
        consumed_before = 0
        if self.checkpoint_dir:
            manifest = self._load_manifest()
            for entry in manifest["shards"]:
                shard = DenseIndex.load(self.checkpoint_dir / entry["file"])
                shards.append((shard._matrix, list(shard.ids), list(shard.doc_ids)))
                consumed_before += entry["consumed"]
                report.skipped.extend((pid, reason) for pid, reason in entry["skipped"])
                for pid in shard.ids:
                    if pid in seen:
                        raise DuplicatePassageError(pid)
                    seen.add(pid)
            if consumed_before:
                logger.info("resuming build: %d passages already consumed", consumed_before)

        vectors: list[np.ndarray] = []
        ids: list[str] = []
        doc_ids: list[str | None] = []
        shard_skipped: list[tuple[str, str]] = []
        shard_consumed = 0

        def flush_shard() -> None:
            nonlocal vectors, ids, doc_ids, shard_skipped, shard_consumed
            if shard_consumed == 0:
                return
            matrix = (
                np.stack(vectors).astype(np.float32)
                if vectors
                else np.zeros((0, self.encoder.dim), dtype=np.float32)
            )
            shards.append((matrix, ids, doc_ids))
            if self.checkpoint_dir:
                name = f"shard_{len(manifest['shards']):05d}.idx"
                DenseIndex(matrix, ids, doc_ids).save(self.checkpoint_dir / name)
                manifest["shards"].append(
                    {
                        "file": name,
                        "consumed": shard_consumed,
                        "count": len(ids),
                        "skipped": shard_skipped,
                    }
                )
                self._write_manifest(manifest)
            report.skipped.extend(shard_skipped)
            vectors, ids, doc_ids = [], [], []
            shard_skipped, shard_consumed = [], 0

        for position, passage in enumerate(corpus):
            if position < consumed_before:
                continue  # already encoded in a checkpointed shard
            if passage.passage_id in seen:
                raise DuplicatePassageError(passage.passage_id)
            seen.add(passage.passage_id)
            shard_consumed += 1
            try:
                vector = self.encoder.encode(passage.text, TextKind.PASSAGE)
            except EncoderError as exc:
                shard_skipped.append((passage.passage_id, str(exc)))
            else:
                vectors.append(vector.values)
                ids.append(passage.passage_id)
                doc_ids.append(passage.doc_id)
            if shard_consumed >= self.shard_size:
                flush_shard()
        flush_shard()

        if shards:
            matrix = np.concatenate([s[0] for s in shards], axis=0)
            all_ids = [pid for s in shards for pid in s[1]]
            all_docs = [doc for s in shards for doc in s[2]]
        else:
            matrix = np.zeros((0, self.encoder.dim), dtype=np.float32)
            all_ids, all_docs = [], []
        report.count = len(all_ids)
        return DenseIndex(matrix, all_ids, all_docs), report


def build_index(
    corpus: Iterable[Passage],
    encoder: Encoder,
    checkpoint_dir: str | Path | None = None,
    shard_size: int = 1024,
) -> tuple[DenseIndex, BuildReport]:
    """Encode a passage corpus into a dense index. See :class:`IndexBuilder`."""
    return IndexBuilder(encoder, checkpoint_dir, shard_size).build(corpus)
