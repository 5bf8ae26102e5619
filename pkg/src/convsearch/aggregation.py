"""Combining encoded rewrites and hypothetical responses into one search
intent vector.

Three strategies: ``maxprob`` takes the top-scored candidates; ``sc``
(self-consistency) picks the candidate closest (by dot product) to the
centroid of all candidates; ``mean`` averages everything. Similarity is raw
dot product throughout — no normalization is inserted — and argmax ties
break toward the lowest index, i.e. the candidate with the higher
generation score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AggregationMethod, PromptingMode
from .encoders import IntentVector


class AggregationError(ValueError):
    """Bundle shape does not fit the requested prompting mode."""


@dataclass(frozen=True)
class EncodedBundle:
    """Vectors mirroring a GenerationBundle: N rewrite vectors and, per
    rewrite, M response vectors, all of one dimension, in generation-score
    order.
    """

    rewrite_vectors: tuple[IntentVector, ...]
    response_vectors: tuple[tuple[IntentVector, ...], ...] = ()

    def __post_init__(self) -> None:
        if len(self.rewrite_vectors) < 1:
            raise ValueError("at least one rewrite vector is required")
        if self.response_vectors and len(self.response_vectors) != len(self.rewrite_vectors):
            raise ValueError("response_vectors must have one list per rewrite")
        inner = {len(r) for r in self.response_vectors}
        if len(inner) > 1:
            raise ValueError(f"response lists must share one length, got {sorted(inner)}")
        dims = {v.dim for v in self.rewrite_vectors}
        dims.update(v.dim for responses in self.response_vectors for v in responses)
        if len(dims) > 1:
            raise ValueError(f"all vectors must share one dimension, got {sorted(dims)}")

    @property
    def n(self) -> int:
        return len(self.rewrite_vectors)

    @property
    def m(self) -> int:
        if not self.response_vectors:
            return 0
        return len(self.response_vectors[0])

    @property
    def dim(self) -> int:
        return self.rewrite_vectors[0].dim

    def rewrite_matrix(self) -> np.ndarray:
        return np.stack([v.values for v in self.rewrite_vectors])

    def response_matrix(self, rewrite_index: int) -> np.ndarray:
        return np.stack([v.values for v in self.response_vectors[rewrite_index]])


@dataclass(frozen=True)
class AggregationOutcome:
    """The final intent vector plus, for selecting methods, which rewrite
    (and response) was chosen.
    """

    intent: IntentVector
    selected_rewrite_index: int | None = None
    selected_response_index: int | None = None


def _require_responses(encoded: EncodedBundle, mode: PromptingMode) -> None:
    if encoded.m < 1:
        raise AggregationError(f"{mode.value} aggregation needs at least one response per rewrite")


def _argmax_lowest(scores: np.ndarray) -> int:
    # np.argmax returns the first occurrence of the maximum, which is the
    # lowest index and therefore the highest-generation-score candidate.
    return int(np.argmax(scores))


def maxprob(encoded: EncodedBundle, mode: PromptingMode) -> AggregationOutcome:
    """Use the top-scored rewrite (and, outside rewrite-only prompting, mix
    it half-and-half with its top-scored response).
    """
    mode = PromptingMode(mode)
    if mode is PromptingMode.REW:
        return AggregationOutcome(
            intent=encoded.rewrite_vectors[0],
            selected_rewrite_index=0,
        )
    _require_responses(encoded, mode)
    mixed = (encoded.rewrite_vectors[0].values + encoded.response_vectors[0][0].values) / 2.0
    return AggregationOutcome(
        intent=IntentVector(values=mixed),
        selected_rewrite_index=0,
        selected_response_index=0,
    )


def self_consistency(encoded: EncodedBundle, mode: PromptingMode) -> AggregationOutcome:
    """Pick the rewrite vector most similar to the centroid of all rewrite
    vectors; outside rewrite-only prompting, pick the selected rewrite's
    response the same way (against the centroid of that rewrite's responses)
    and mix the two half-and-half.
    """
    mode = PromptingMode(mode)
    rewrites = encoded.rewrite_matrix()
    center = rewrites.mean(axis=0)
    k = _argmax_lowest(rewrites @ center)
    if mode is PromptingMode.REW:
        return AggregationOutcome(
            intent=encoded.rewrite_vectors[k],
            selected_rewrite_index=k,
        )
    _require_responses(encoded, mode)
    if mode is PromptingMode.RTR:
        responses = encoded.response_matrix(k)
        response_center = responses.mean(axis=0)
        z = _argmax_lowest(responses @ response_center)
    else:  # RAR pairs one response with each rewrite
        z = 0
    mixed = (encoded.rewrite_vectors[k].values + encoded.response_vectors[k][z].values) / 2.0
    return AggregationOutcome(
        intent=IntentVector(values=mixed),
        selected_rewrite_index=k,
        selected_response_index=z,
    )


def mean(encoded: EncodedBundle, mode: PromptingMode) -> AggregationOutcome:
    """Average all rewrite vectors (and all response vectors, when present)
    into one intent vector. No selection indices.
    """
    mode = PromptingMode(mode)
    if mode is PromptingMode.REW:
        return AggregationOutcome(intent=IntentVector(values=encoded.rewrite_matrix().mean(axis=0)))
    _require_responses(encoded, mode)
    total = np.zeros(encoded.dim, dtype=np.float64)
    for i, rewrite in enumerate(encoded.rewrite_vectors):
        total += rewrite.values
        for response in encoded.response_vectors[i]:
            total += response.values
    denominator = encoded.n * (1 + encoded.m)
    return AggregationOutcome(intent=IntentVector(values=total / denominator))


AGGREGATORS = {
    "maxprob": maxprob,
    "sc": self_consistency,
    "mean": mean,
}


def aggregate(
    encoded: EncodedBundle, mode: PromptingMode, method: AggregationMethod | str
) -> AggregationOutcome:
    """Dispatch to the named aggregation method."""
    try:
        fn = AGGREGATORS[AggregationMethod(method).value]
    except ValueError:
        raise AggregationError(f"unknown aggregation method {method!r}") from None
    return fn(encoded, mode)
