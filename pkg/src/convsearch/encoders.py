"""Text-to-vector encoders behind one interface.

Three backends: a remote HTTP embedding service (production), a precomputed
vector store for offline replay, and a deterministic hashing encoder for
tests. Every encoder truncates its input to the token budget of the given
text kind before embedding, and reports vectors as raw (unnormalized unless
the backend normalizes) dot-product-ready arrays.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import requests

from .core import TextKind
from .prompting import Tokenizer, truncate


class EncoderError(Exception):
    """Base class for encoding failures."""


class EmptyTextError(EncoderError):
    """Input was empty (after truncation), so there is nothing to embed."""


class DimensionMismatchError(EncoderError):
    """Backend returned vectors of a different dimension than configured."""


class BatchEncodeError(EncoderError):
    """One or more elements of a batch failed.

    ``failures`` holds (index, exception) pairs; ``vectors`` is aligned with
    the input, with None at failed positions.
    """

    def __init__(self, failures: list[tuple[int, Exception]], vectors: list["IntentVector | None"]):
        indexes = ", ".join(str(i) for i, _ in failures)
        super().__init__(f"encoding failed for batch element(s) {indexes}")
        self.failures = failures
        self.vectors = vectors


@dataclass(frozen=True, eq=False)
class IntentVector:
    """A fixed-dimension embedding. Values are finite float64, read-only."""

    values: np.ndarray

    def __post_init__(self) -> None:
        array = np.asarray(self.values, dtype=np.float64)
        if array.ndim != 1:
            raise ValueError(f"intent vector must be 1-D, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("intent vector components must be finite")
        array = array.copy()
        array.setflags(write=False)
        object.__setattr__(self, "values", array)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IntentVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def tolist(self) -> list[float]:
        return self.values.tolist()


class Encoder:
    """Base encoder: handles truncation, empty-input checks and batching.
    Subclasses embed already-truncated text via :meth:`_embed`.
    """

    dim: int

    def __init__(self, dim: int, tokenizer: Tokenizer | None = None):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.tokenizer = tokenizer

    @property
    def signature(self) -> str:
        raise NotImplementedError

    def prepare(self, text: str, kind: TextKind) -> str:
        prepared = truncate(text, kind, self.tokenizer)
        if not prepared.strip():
            raise EmptyTextError(f"nothing to encode for kind={TextKind(kind).value}")
        return prepared

    def _embed(self, text: str, kind: TextKind) -> np.ndarray:
        raise NotImplementedError

    def encode(self, text: str, kind: TextKind) -> IntentVector:
        prepared = self.prepare(text, kind)
        values = np.asarray(self._embed(prepared, kind), dtype=np.float64)
        if values.shape != (self.dim,):
            raise DimensionMismatchError(
                f"backend returned shape {values.shape}, expected ({self.dim},)"
            )
        return IntentVector(values=values)

    def encode_batch(self, items: Sequence[tuple[str, TextKind]]) -> list[IntentVector]:
        """Encode many texts; element i equals ``encode(*items[i])`` exactly.

        Raises :class:`BatchEncodeError` carrying per-element failures (and
        the successful vectors) if any element fails.
        """
        if not items:
            raise ValueError("encode_batch requires a non-empty list")
        vectors: list[IntentVector | None] = []
        failures: list[tuple[int, Exception]] = []
        for i, (text, kind) in enumerate(items):
            try:
                vectors.append(self.encode(text, kind))
            except Exception as exc:  # noqa: BLE001 - reported per element
                vectors.append(None)
                failures.append((i, exc))
        if failures:
            raise BatchEncodeError(failures, vectors)
        return [v for v in vectors if v is not None]


class HashingEncoder(Encoder):
    """Deterministic test encoder: feature-hash tokens into ``dim`` buckets
    and L2-normalize. Pure and platform-independent (bucket assignment uses
    blake2b, not Python's randomized hash).
    """

    def __init__(self, dim: int = 64, tokenizer: Tokenizer | None = None):
        super().__init__(dim, tokenizer)

    @property
    def signature(self) -> str:
        return f"hash:{self.dim}"

    def _embed(self, text: str, kind: TextKind) -> np.ndarray:
        counts = np.zeros(self.dim, dtype=np.float64)
        for token in text.lower().split():
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            counts[int.from_bytes(digest, "big") % self.dim] += 1.0
        norm = float(np.linalg.norm(counts))
        return counts / norm


class RemoteEncoder(Encoder):
    """Client for an embedding service speaking
    ``POST {"texts": [...]} -> {"vectors": [[...]]}``. Concurrent in-flight
    requests are bounded.
    """

    def __init__(
        self,
        endpoint: str,
        dim: int,
        timeout: float = 60.0,
        max_in_flight: int = 8,
        tokenizer: Tokenizer | None = None,
        session: requests.Session | None = None,
    ):
        super().__init__(dim, tokenizer)
        self.endpoint = endpoint
        self.timeout = timeout
        self._session = session or requests.Session()
        self._inflight = threading.Semaphore(max_in_flight)

    @property
    def signature(self) -> str:
        return f"remote:{self.endpoint}:{self.dim}"

    def _post(self, texts: list[str]) -> list[list[float]]:
        try:
            with self._inflight:
                response = self._session.post(
                    self.endpoint, json={"texts": texts}, timeout=self.timeout
                )
        except requests.RequestException as exc:
            raise EncoderError(f"embedding backend unavailable: {exc}") from exc
        if response.status_code != 200:
            raise EncoderError(f"embedding backend returned {response.status_code}")
        vectors = response.json().get("vectors")
        if vectors is None or len(vectors) != len(texts):
            raise EncoderError("embedding backend returned a malformed payload")
        return vectors

    def _embed(self, text: str, kind: TextKind) -> np.ndarray:
        return np.asarray(self._post([text])[0], dtype=np.float64)


VECTOR_STORE_MAGIC = b"CVSVEC1\n"
_KEY_BYTES = 8


def vector_store_key(text: str, kind: TextKind, tokenizer: Tokenizer | None = None) -> bytes:
    """Record key for a text: an 8-byte digest of the truncated form."""
    prepared = truncate(text, kind, tokenizer)
    return hashlib.blake2b(prepared.encode("utf-8"), digest_size=_KEY_BYTES).digest()


def write_vector_store(
    path: str | Path,
    entries: Iterable[tuple[str, TextKind, Sequence[float]]],
    dim: int,
    tokenizer: Tokenizer | None = None,
) -> int:
    """Write a precomputed vector store: a JSON header line ``{dim, count}``
    followed by fixed-width records (8-byte key, ``dim`` little-endian
    float32 values). Returns the record count.
    """
    records = []
    for text, kind, values in entries:
        array = np.asarray(values, dtype="<f4")
        if array.shape != (dim,):
            raise ValueError(f"vector for {text[:40]!r} has shape {array.shape}, expected ({dim},)")
        records.append(vector_store_key(text, kind, tokenizer) + array.tobytes())
    header = json.dumps({"dim": dim, "count": len(records)}).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(VECTOR_STORE_MAGIC)
        handle.write(header + b"\n")
        for record in records:
            handle.write(record)
    return len(records)


class PrecomputedEncoder(Encoder):
    """Encoder backed by a vector store created by :func:`write_vector_store`.
    Lookup is by digest of the truncated text; a miss is an error (there is
    no fallback embedding).
    """

    def __init__(self, path: str | Path, tokenizer: Tokenizer | None = None):
        self.path = Path(path)
        table, dim = self._load(self.path)
        super().__init__(dim, tokenizer)
        self._table = table

    @staticmethod
    def _load(path: Path) -> tuple[dict[bytes, np.ndarray], int]:
        with open(path, "rb") as handle:
            magic = handle.read(len(VECTOR_STORE_MAGIC))
            if magic != VECTOR_STORE_MAGIC:
                raise EncoderError(f"{path} is not a vector store (bad magic)")
            header = json.loads(handle.readline().decode("utf-8"))
            dim, count = int(header["dim"]), int(header["count"])
            record_size = _KEY_BYTES + 4 * dim
            table: dict[bytes, np.ndarray] = {}
            for _ in range(count):
                record = handle.read(record_size)
                if len(record) != record_size:
                    raise EncoderError(f"{path} is truncated")
                key = record[:_KEY_BYTES]
                table[key] = np.frombuffer(record[_KEY_BYTES:], dtype="<f4").astype(np.float64)
        return table, dim

    @property
    def signature(self) -> str:
        return f"precomputed:{self.path.name}:{self.dim}"

    def _embed(self, text: str, kind: TextKind) -> np.ndarray:
        key = hashlib.blake2b(text.encode("utf-8"), digest_size=_KEY_BYTES).digest()
        vector = self._table.get(key)
        if vector is None:
            raise EncoderError(f"no precomputed vector for text starting {text[:60]!r}")
        return vector
