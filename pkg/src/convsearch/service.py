"""Stateful HTTP service for interactive conversational search.

The service holds live sessions in memory: each session fixes its method
settings at creation, accumulates (query, shown response) turns, and exposes
the full inspection bundle per turn. The shown response fed back into later
context is the top-retrieved passage snippet, the live stand-in for the
canonical responses a benchmark dataset provides.

Endpoints (JSON, versioned under /v1, CORS enabled):
  POST /v1/sessions            {settings...} -> {"session_id": ...}
  POST /v1/sessions/{id}/turns {"query": ...} -> turn result
  GET  /v1/sessions/{id}      -> full transcript
  GET  /health, /v1/health    -> {"status": "ok"}
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from .config import ConfigError, MethodSettings, method_settings_from_mapping
from .core import Session, Turn
from .encoders import Encoder
from .index import DenseIndex, PassageStore
from .pipeline import PipelineRuntime, TurnOutcome
from .prompting import DEFAULT_TOKENIZER

logger = logging.getLogger(__name__)

SNIPPET_TOKENS = 64
DEFAULT_TTL_SECONDS = 3600.0


def snippet_of(text: str, limit: int = SNIPPET_TOKENS) -> str:
    tokens = DEFAULT_TOKENIZER.tokenize(text)
    if len(tokens) <= limit:
        return text
    return DEFAULT_TOKENIZER.detokenize(tokens[:limit]) + " ..."


@dataclass
class LiveSession:
    """One interactive conversation: immutable settings, append-only turns."""

    session_id: str
    settings: MethodSettings
    runtime: PipelineRuntime
    created_at: float
    last_access: float
    turns: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def settings_record(self) -> dict:
        n, m = self.settings.resolve_samples()
        return {
            "prompting": self.settings.prompting.value,
            "aggregation": self.settings.aggregation.value,
            "cot": self.settings.cot,
            "n": n,
            "m": m,
            "temperature": self.settings.temperature,
            "top_k": self.settings.top_k,
        }

    def to_transcript(self) -> dict:
        return {
            "session_id": self.session_id,
            "settings": self.settings_record(),
            "turns": [dict(turn) for turn in self.turns],
        }


class ServiceState:
    """Backends plus the session table. Request handlers are thin wrappers
    over the methods here, which makes the service drivable without HTTP.
    """

    def __init__(
        self,
        llm,
        encoder: Encoder,
        index: DenseIndex,
        demonstrations,
        passages: PassageStore | None = None,
        ttl_seconds: float = DEFAULT_TTL_SECONDS,
        journal_path: str | Path | None = None,
        max_output_tokens: int = 512,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.llm = llm
        self.encoder = encoder
        self.index = index
        self.demonstrations = demonstrations
        self.passages = passages
        self.ttl_seconds = ttl_seconds
        self.journal_path = Path(journal_path) if journal_path else None
        self.max_output_tokens = max_output_tokens
        self.clock = clock
        self._sessions: dict[str, LiveSession] = {}
        self._table_lock = threading.RLock()

    def _journal(self, event: dict) -> None:
        if self.journal_path is None:
            return
        with open(self.journal_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(event, ensure_ascii=False) + "\n")

    def _sweep(self) -> None:
        now = self.clock()
        with self._table_lock:
            expired = [
                sid
                for sid, session in self._sessions.items()
                if now - session.last_access > self.ttl_seconds
            ]
            for sid in expired:
                del self._sessions[sid]
                logger.info("evicted idle session %s", sid)

    def create_session(self, settings: Mapping[str, Any] | MethodSettings) -> LiveSession:
        if not isinstance(settings, MethodSettings):
            settings = method_settings_from_mapping(dict(settings))
        settings.validate()
        runtime = PipelineRuntime(
            method=settings,
            llm=self.llm,
            encoder=self.encoder,
            index=self.index,
            demonstrations=self.demonstrations,
            max_output_tokens=self.max_output_tokens,
        )
        now = self.clock()
        session = LiveSession(
            session_id=uuid.uuid4().hex[:16],
            settings=settings,
            runtime=runtime,
            created_at=now,
            last_access=now,
        )
        with self._table_lock:
            self._sweep()
            self._sessions[session.session_id] = session
        self._journal({"event": "session_created", "session_id": session.session_id,
                       "settings": session.settings_record()})
        return session

    def get_session(self, session_id: str) -> LiveSession:
        with self._table_lock:
            self._sweep()
            session = self._sessions.get(session_id)
            if session is None:
                raise KeyError(session_id)
            session.last_access = self.clock()
            return session

    def _turn_result(self, session: LiveSession, outcome: TurnOutcome) -> dict:
        bundle = outcome.bundle
        cots = list(bundle.cot) if bundle.cot is not None else None
        rewrites = []
        for i, generation in enumerate(bundle.rewrites):
            rewrites.append(
                {
                    "text": generation.text,
                    "score": generation.score,
                    "cot": cots[i] if cots is not None else None,
                }
            )
        responses = [
            [{"text": g.text, "score": g.score} for g in inner]
            for inner in bundle.responses_per_rewrite
        ]
        intent = outcome.outcome.intent
        results = []
        for passage_id, score in outcome.ranked or ():
            entry: dict[str, Any] = {"passage_id": passage_id, "score": score}
            passage = self.passages.get(passage_id) if self.passages else None
            if passage is not None:
                entry["doc_id"] = passage.doc_id
                entry["snippet"] = snippet_of(passage.text)
                entry["text"] = passage.text
            else:
                entry["doc_id"] = None
                entry["snippet"] = None
                entry["text"] = None
            results.append(entry)
        shown_response = None
        if results and results[0]["snippet"] is not None:
            shown_response = results[0]["snippet"]
        norm = float(sum(v * v for v in intent.tolist()) ** 0.5)
        return {
            "turn_id": outcome.turn_id,
            "query": outcome.query,
            "rewrites": rewrites,
            "responses": responses,
            "selected": {
                "rewrite_index": outcome.outcome.selected_rewrite_index,
                "response_index": outcome.outcome.selected_response_index,
            },
            "intent": {"dim": intent.dim, "l2_norm": norm, "values": intent.tolist()},
            "results": results,
            "shown_response": shown_response,
        }

    def submit_turn(self, session_id: str, query: str) -> dict:
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        session = self.get_session(session_id)
        if not session.lock.acquire(blocking=False):
            raise SessionBusyError(session_id)
        try:
            turns = [
                Turn(turn_id=i + 1, query=record["query"], response=record["shown_response"])
                for i, record in enumerate(session.turns)
            ]
            turn_id = len(turns) + 1
            turns.append(Turn(turn_id=turn_id, query=query, response=None))
            outcome = session.runtime.process_turn(Session(session.session_id, turns))
            if outcome.failed:
                raise BackendFailedError(outcome.error or "turn failed")
            result = self._turn_result(session, outcome)
            session.turns.append(result)
            session.last_access = self.clock()
            self._journal({"event": "turn", "session_id": session.session_id,
                           "turn_id": turn_id, "query": query,
                           "shown_response": result["shown_response"]})
            return result
        finally:
            session.lock.release()

    def transcript(self, session_id: str) -> dict:
        return self.get_session(session_id).to_transcript()


class SessionBusyError(Exception):
    def __init__(self, session_id: str):
        super().__init__(f"session {session_id} already has a turn in flight")


class BackendFailedError(Exception):
    pass


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="convsearch session service", version="1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.service = state

    @app.get("/health")
    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "sessions": len(state._sessions)}

    @app.post("/v1/sessions", status_code=201)
    def create_session(payload: dict = Body(default={})) -> dict:
        settings = payload.get("settings", payload)
        try:
            session = state.create_session(settings or {})
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"session_id": session.session_id, "settings": session.settings_record()}

    @app.post("/v1/sessions/{session_id}/turns")
    def submit_turn(session_id: str, payload: dict = Body(...)) -> dict:
        query = payload.get("query", "")
        try:
            return state.submit_turn(session_id, query)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}") from None
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except SessionBusyError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except BackendFailedError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        try:
            return state.transcript(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}") from None

    return app
