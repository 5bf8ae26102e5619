"""Conversation data model and generation artifacts shared across the package.

A :class:`Session` holds a multi-turn conversation; the last turn is the one
currently being searched for and never carries a response. Generated rewrites
and hypothetical responses are grouped into a :class:`GenerationBundle`,
ordered by generation score, which downstream aggregation consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable


class PromptingMode(str, Enum):
    """How rewrites and hypothetical responses are obtained from the LLM."""

    REW = "rew"  # rewrites only
    RTR = "rtr"  # rewrites first, then responses per rewrite
    RAR = "rar"  # rewrite and response paired in one completion


class AggregationMethod(str, Enum):
    """How candidate intent vectors are combined into the final one."""

    MAXPROB = "maxprob"
    SC = "sc"
    MEAN = "mean"


class TextKind(str, Enum):
    """Token-budget category used for truncation and encoding."""

    QUERY = "query"
    PASSAGE = "passage"
    RESPONSE = "response"


class GenerationKind(str, Enum):
    REWRITE = "rewrite"
    RESPONSE = "response"
    COT = "cot"


class InvalidSessionError(ValueError):
    """Raised when an operation requires a valid session but got violations."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid session: " + "; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class Turn:
    """One conversation turn: the user query and, for historical turns, the
    system response shown to the user. Construction is permissive so that
    malformed dataset rows can still be loaded and reported by
    :func:`validate_session`.
    """

    turn_id: int
    query: str
    response: str | None = None


@dataclass(frozen=True)
class Session:
    """A conversation. ``turns`` carries all turns in order; the last one is
    the current turn (the query to be searched), which never has a response.
    """

    session_id: str
    turns: tuple[Turn, ...]

    def __init__(self, session_id: str, turns: Iterable[Turn]):
        object.__setattr__(self, "session_id", session_id)
        object.__setattr__(self, "turns", tuple(turns))

    @property
    def current_turn(self) -> Turn:
        if not self.turns:
            raise InvalidSessionError(["session has no turns"])
        return self.turns[-1]

    @property
    def current_query(self) -> str:
        return self.current_turn.query

    @property
    def context(self) -> tuple[Turn, ...]:
        """The historical turns preceding the current one."""
        return self.turns[:-1]

    def to_record(self) -> dict:
        return {
            "session_id": self.session_id,
            "turns": [
                {"turn_id": t.turn_id, "query": t.query, "response": t.response}
                for t in self.turns
            ],
        }

    @classmethod
    def from_record(cls, record: dict) -> "Session":
        turns = [
            Turn(
                turn_id=t["turn_id"],
                query=t["query"],
                response=t.get("response"),
            )
            for t in record["turns"]
        ]
        return cls(session_id=str(record["session_id"]), turns=turns)


def validate_session(session: Session) -> list[str]:
    """Check all session invariants, returning one description per violation.

    Never raises: an empty list means the session is valid.
    """
    violations: list[str] = []
    if not session.turns:
        violations.append("session has no turns")
        return violations
    for turn in session.turns:
        if turn.turn_id < 1:
            violations.append(f"turn_id {turn.turn_id} must be >= 1")
        if not turn.query.strip():
            violations.append(f"turn {turn.turn_id} has an empty query")
    previous = None
    for turn in session.turns:
        if previous is not None:
            if turn.turn_id <= previous:
                violations.append(
                    f"turn ids must be strictly increasing (saw {turn.turn_id} after {previous})"
                )
            elif turn.turn_id != previous + 1:
                violations.append(f"gap after turn {previous}")
        previous = turn.turn_id
    if session.turns[-1].response is not None:
        violations.append("current turn must not have a response")
    return violations


def require_valid_session(session: Session) -> None:
    violations = validate_session(session)
    if violations:
        raise InvalidSessionError(violations)


def load_sessions(path: str | Path) -> list[Session]:
    """Read sessions from a JSON-lines file (one session object per line)."""
    sessions = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: malformed session line: {exc}") from exc
            sessions.append(Session.from_record(record))
    return sessions


def save_sessions(sessions: Iterable[Session], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for session in sessions:
            handle.write(json.dumps(session.to_record(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class Generation:
    """A single sampled text with its generation score (higher = more
    probable). The score is the mean per-token log-probability when the
    backend reports one, else 0.0.
    """

    text: str
    score: float
    kind: GenerationKind

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("generation text must be non-empty")
        if not math.isfinite(self.score):
            raise ValueError(f"generation score must be finite, got {self.score!r}")


def _sorted_desc(items: Iterable[Generation]) -> bool:
    scores = [g.score for g in items]
    return all(a >= b for a, b in zip(scores, scores[1:]))


@dataclass(frozen=True)
class GenerationBundle:
    """N rewrites with M hypothetical responses each, sorted by score
    descending (stable: equal scores keep insertion order). ``cot`` holds the
    reasoning text per rewrite when chain-of-thought was requested.
    """

    rewrites: tuple[Generation, ...]
    responses_per_rewrite: tuple[tuple[Generation, ...], ...]
    cot: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.rewrites) < 1:
            raise ValueError("bundle needs at least one rewrite")
        if len(self.responses_per_rewrite) != len(self.rewrites):
            raise ValueError(
                "responses_per_rewrite must have one entry per rewrite "
                f"({len(self.responses_per_rewrite)} != {len(self.rewrites)})"
            )
        inner_lengths = {len(r) for r in self.responses_per_rewrite}
        if len(inner_lengths) > 1:
            raise ValueError(f"response lists must share one length, got {sorted(inner_lengths)}")
        if not _sorted_desc(self.rewrites):
            raise ValueError("rewrites must be sorted by score descending")
        for responses in self.responses_per_rewrite:
            if not _sorted_desc(responses):
                raise ValueError("responses must be sorted by score descending")
        if self.cot is not None and len(self.cot) != len(self.rewrites):
            raise ValueError("cot must hold one entry per rewrite")

    @property
    def n(self) -> int:
        return len(self.rewrites)

    @property
    def m(self) -> int:
        return len(self.responses_per_rewrite[0])

    @classmethod
    def from_samples(
        cls,
        rewrites: Iterable[Generation],
        responses_per_rewrite: Iterable[Iterable[Generation]] | None = None,
        cot: Iterable[str] | None = None,
    ) -> "GenerationBundle":
        """Build a bundle from unsorted samples. Rewrites are stably sorted by
        score descending; response lists and cot entries follow their rewrite.
        """
        rewrites = list(rewrites)
        responses = [list(r) for r in responses_per_rewrite] if responses_per_rewrite else [
            [] for _ in rewrites
        ]
        cot_list = list(cot) if cot is not None else None
        if len(responses) != len(rewrites):
            raise ValueError("one response list per rewrite required")
        order = sorted(range(len(rewrites)), key=lambda i: -rewrites[i].score)
        return cls(
            rewrites=tuple(rewrites[i] for i in order),
            responses_per_rewrite=tuple(
                tuple(sorted(responses[i], key=lambda g: -g.score)) for i in order
            ),
            cot=tuple(cot_list[i] for i in order) if cot_list is not None else None,
        )
