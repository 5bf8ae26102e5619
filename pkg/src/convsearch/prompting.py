"""Prompt construction and completion parsing.

Prompts follow a fixed three-part layout: an instruction (with an explicit
output-format block), worked example conversations, and the input
conversation ending with the question to act on. Completions use a labeled
line grammar (``Thought:`` / ``Rewrite:`` / ``Response:``) that
:func:`format_output` emits and :func:`parse_output` inverts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .core import PromptingMode, Session, TextKind, require_valid_session

THOUGHT_LABEL = "Thought:"
REWRITE_LABEL = "Rewrite:"
RESPONSE_LABEL = "Response:"
QUESTION_LABEL = "Question:"
ANSWER_LABEL = "Answer:"
OUTPUT_FORMAT_HEADER = "Output format:"
INPUT_HEADER = "Your turn:"

TRUNCATION_LIMITS = {
    TextKind.QUERY: 64,
    TextKind.PASSAGE: 256,
    TextKind.RESPONSE: 256,
}


class ConfigurationError(ValueError):
    """A template or settings combination that cannot produce a prompt."""


class OutputParseError(ValueError):
    """A completion that does not follow the labeled output grammar.

    Carries the raw completion so callers can log it and skip the sample.
    """

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> list[str]: ...

    def detokenize(self, tokens: Sequence[str]) -> str: ...


class WhitespaceTokenizer:
    """Default tokenizer: whitespace split, single-space join."""

    def tokenize(self, text: str) -> list[str]:
        return text.split()

    def detokenize(self, tokens: Sequence[str]) -> str:
        return " ".join(tokens)


DEFAULT_TOKENIZER = WhitespaceTokenizer()


def truncate(text: str, kind: TextKind, tokenizer: Tokenizer | None = None) -> str:
    """Cap ``text`` at the token budget for ``kind`` (64 for queries, 256 for
    passages and responses). Text within budget is returned unchanged, so the
    operation is idempotent.
    """
    tokenizer = tokenizer or DEFAULT_TOKENIZER
    limit = TRUNCATION_LIMITS[TextKind(kind)]
    tokens = tokenizer.tokenize(text)
    if len(tokens) <= limit:
        return text
    return tokenizer.detokenize(tokens[:limit])


def sanitize_line(text: str) -> str:
    """Collapse whitespace runs so a value fits on one labeled line."""
    return " ".join(text.split())


@dataclass(frozen=True)
class DemoTurn:
    """One turn of a demonstration conversation, with its hand-written
    targets: the self-contained rewrite, the response (which doubles as the
    shown answer for later turns), and optionally the chain-of-thought.
    """

    turn_id: int
    query: str
    response: str
    rewrite: str
    cot: str | None = None


@dataclass(frozen=True)
class DemoConversation:
    session_id: str
    turns: tuple[DemoTurn, ...]


def load_demonstrations(path: str | Path) -> tuple[DemoConversation, ...]:
    """Read demonstration conversations from a JSON file.

    The file holds a list (optionally under a ``conversations`` key) of
    session records whose turns carry ``cot``, ``rewrite`` and ``response``
    fields in addition to the query.
    """
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    records = data["conversations"] if isinstance(data, dict) else data
    conversations = []
    for record in records:
        turns = []
        for turn in record["turns"]:
            turns.append(
                DemoTurn(
                    turn_id=turn["turn_id"],
                    query=turn["query"],
                    response=turn["response"],
                    rewrite=turn["rewrite"],
                    cot=turn.get("cot"),
                )
            )
        conversations.append(
            DemoConversation(session_id=str(record["session_id"]), turns=tuple(turns))
        )
    return tuple(conversations)


_REW_INSTRUCTION = (
    "You rewrite conversational questions. Given the conversation so far and the "
    "current question, rewrite the current question so that it is fully "
    "self-contained: resolve every pronoun and implicit reference using the "
    "conversation, and keep the user's intent unchanged."
)
_RTR_INSTRUCTION = (
    "You answer rewritten search questions. Given the conversation so far, the "
    "current question, and its self-contained rewrite, write an informative "
    "response that directly answers the rewrite. Invent plausible specifics if "
    "needed; the response is used to search for real passages."
)
_RAR_INSTRUCTION = (
    "You rewrite conversational questions and answer them. Given the conversation "
    "so far and the current question, first rewrite the current question so that "
    "it is fully self-contained (resolve every pronoun and implicit reference), "
    "then write an informative response that directly answers your rewrite. "
    "Invent plausible specifics if needed; the response is used to search for "
    "real passages."
)
_COT_INSTRUCTION = (
    "Start by reasoning briefly about what the user is really asking, based on "
    "the conversation."
)

_FORMAT_HINTS = {
    THOUGHT_LABEL: "<one or two sentences inferring what the user is really asking>",
    REWRITE_LABEL: "<the current question rewritten to be fully self-contained>",
    RESPONSE_LABEL: "<an informative answer to the rewritten question>",
}


@dataclass(frozen=True)
class PromptTemplate:
    """Instruction, demonstrations and flags from which prompts are built.

    ``few_shot`` requires at least one demonstration; set it to False for
    zero-shot prompts (demonstrations are then omitted entirely).
    """

    mode: PromptingMode
    demonstrations: tuple[DemoConversation, ...] = ()
    cot_enabled: bool = False
    few_shot: bool = True
    instruction: str | None = None

    def _instruction_text(self) -> str:
        if self.instruction is not None:
            return self.instruction
        base = {
            PromptingMode.REW: _REW_INSTRUCTION,
            PromptingMode.RTR: _RTR_INSTRUCTION,
            PromptingMode.RAR: _RAR_INSTRUCTION,
        }[self.mode]
        if self.cot_enabled and self.mode is not PromptingMode.RTR:
            return base + " " + _COT_INSTRUCTION
        return base


def output_labels(mode: PromptingMode, cot_enabled: bool) -> list[str]:
    """The labels a completion must carry, in order, for the given mode."""
    if mode is PromptingMode.RTR:
        return [RESPONSE_LABEL]
    labels = []
    if cot_enabled:
        labels.append(THOUGHT_LABEL)
    labels.append(REWRITE_LABEL)
    if mode is PromptingMode.RAR:
        labels.append(RESPONSE_LABEL)
    return labels


def _render_format_block(mode: PromptingMode, cot_enabled: bool) -> str:
    lines = [OUTPUT_FORMAT_HEADER]
    for label in output_labels(mode, cot_enabled):
        lines.append(f"{label} {_FORMAT_HINTS[label]}")
    return "\n".join(lines)


def _demo_turn_lines(turn: DemoTurn, mode: PromptingMode, cot_enabled: bool, is_last: bool) -> list[str]:
    lines = [f"{QUESTION_LABEL} {sanitize_line(turn.query)}"]
    if cot_enabled:
        if turn.cot is None:
            raise ConfigurationError(
                f"chain-of-thought enabled but demonstration turn {turn.turn_id} has no cot text"
            )
        lines.append(f"{THOUGHT_LABEL} {sanitize_line(turn.cot)}")
    lines.append(f"{REWRITE_LABEL} {sanitize_line(turn.rewrite)}")
    response = sanitize_line(truncate(sanitize_line(turn.response), TextKind.RESPONSE))
    if mode is PromptingMode.REW:
        # The response is context only; the final turn needs none.
        if not is_last:
            lines.append(f"{ANSWER_LABEL} {response}")
    else:
        lines.append(f"{RESPONSE_LABEL} {response}")
    return lines


def _render_demonstrations(template: PromptTemplate) -> list[str]:
    if not template.few_shot:
        return []
    if not template.demonstrations:
        raise ConfigurationError("few-shot prompting requires at least one demonstration")
    sections = []
    for i, conversation in enumerate(template.demonstrations, start=1):
        lines = [f"Example {i}:"]
        last_index = len(conversation.turns) - 1
        for j, turn in enumerate(conversation.turns):
            lines.extend(
                _demo_turn_lines(turn, template.mode, template.cot_enabled, is_last=j == last_index)
            )
        sections.append("\n".join(lines))
    return sections


def _render_input(session: Session, rewrite: str | None = None) -> str:
    lines = [INPUT_HEADER]
    for turn in session.context:
        lines.append(f"{QUESTION_LABEL} {sanitize_line(turn.query)}")
        if turn.response is not None:
            shown = sanitize_line(truncate(sanitize_line(turn.response), TextKind.RESPONSE))
            lines.append(f"{ANSWER_LABEL} {shown}")
    lines.append(f"{QUESTION_LABEL} {sanitize_line(session.current_query)}")
    if rewrite is not None:
        lines.append(f"{REWRITE_LABEL} {sanitize_line(rewrite)}")
    return "\n".join(lines)


def _assemble(template: PromptTemplate, input_block: str) -> str:
    sections = [template._instruction_text(), _render_format_block(template.mode, template.cot_enabled)]
    sections.extend(_render_demonstrations(template))
    sections.append(input_block)
    return "\n\n".join(sections)


def build_rew_prompt(template: PromptTemplate, session: Session) -> str:
    """Prompt for generating a self-contained rewrite of the current query."""
    if template.mode is not PromptingMode.REW:
        raise ConfigurationError(f"rewrite prompts need a REW template, got {template.mode.value}")
    require_valid_session(session)
    return _assemble(template, _render_input(session))


def build_rtr_response_prompt(template: PromptTemplate, session: Session, rewrite: str) -> str:
    """Prompt for generating a hypothetical response to a pre-generated
    rewrite, which is injected at the end of the input block.
    """
    if template.mode is not PromptingMode.RTR:
        raise ConfigurationError(f"response prompts need an RTR template, got {template.mode.value}")
    if not rewrite or not rewrite.strip():
        raise ValueError("rewrite must be non-empty")
    require_valid_session(session)
    return _assemble(template, _render_input(session, rewrite=rewrite))


def build_rar_prompt(template: PromptTemplate, session: Session) -> str:
    """Prompt for generating a rewrite and a hypothetical response in one
    completion.
    """
    if template.mode is not PromptingMode.RAR:
        raise ConfigurationError(f"paired prompts need a RAR template, got {template.mode.value}")
    require_valid_session(session)
    return _assemble(template, _render_input(session))


@dataclass(frozen=True)
class ParsedOutput:
    cot: str | None
    rewrite: str | None
    response: str | None


_ALL_LABELS = (THOUGHT_LABEL, REWRITE_LABEL, RESPONSE_LABEL)


def parse_output(raw: str, mode: PromptingMode, cot_enabled: bool = False) -> ParsedOutput:
    """Split a completion into its labeled fields.

    Lines before the first label are ignored; a field's value runs until the
    next label line. Only the first occurrence of each label counts. Raises
    :class:`OutputParseError` (with the raw text attached) when a label the
    mode requires is missing.
    """
    fields: dict[str, list[str]] = {}
    current: str | None = None
    for line in raw.splitlines():
        stripped = line.strip()
        matched = None
        for label in _ALL_LABELS:
            if stripped.startswith(label):
                matched = label
                break
        if matched is not None:
            if matched in fields:
                current = None  # duplicate labels end accumulation
            else:
                fields[matched] = [stripped[len(matched):].strip()]
                current = matched
        elif current is not None:
            fields[current].append(stripped)

    def collect(label: str) -> str | None:
        if label not in fields:
            return None
        value = "\n".join(fields[label]).strip()
        return value or None

    parsed = ParsedOutput(
        cot=collect(THOUGHT_LABEL),
        rewrite=collect(REWRITE_LABEL),
        response=collect(RESPONSE_LABEL),
    )
    mode = PromptingMode(mode)
    if mode in (PromptingMode.REW, PromptingMode.RAR) and parsed.rewrite is None:
        raise OutputParseError(f"completion lacks a '{REWRITE_LABEL}' line", raw=raw)
    if mode in (PromptingMode.RTR, PromptingMode.RAR) and parsed.response is None:
        raise OutputParseError(f"completion lacks a '{RESPONSE_LABEL}' line", raw=raw)
    return parsed


def format_output(
    cot: str | None,
    rewrite: str | None,
    response: str | None,
    mode: PromptingMode,
    cot_enabled: bool = False,
) -> str:
    """Render fields in the labeled output grammar (the exact inverse of
    :func:`parse_output` for single-line values). Used both for demonstration
    targets and for synthesizing completions in tests.
    """
    mode = PromptingMode(mode)
    if mode in (PromptingMode.REW, PromptingMode.RAR) and rewrite is None:
        raise ValueError(f"{mode.value} output requires a rewrite")
    if mode in (PromptingMode.RTR, PromptingMode.RAR) and response is None:
        raise ValueError(f"{mode.value} output requires a response")
    lines = []
    if cot_enabled and cot is not None:
        lines.append(f"{THOUGHT_LABEL} {sanitize_line(cot)}")
    if rewrite is not None:
        lines.append(f"{REWRITE_LABEL} {sanitize_line(rewrite)}")
    if response is not None:
        lines.append(f"{RESPONSE_LABEL} {sanitize_line(response)}")
    return "\n".join(lines)
