/** Pure HTML string builders. Keeping rendering free of DOM state makes the
 * panes directly assertable in tests; main.ts owns mounting and events. */

import type { SessionSettings, TurnResult } from "./types";

const ESCAPES: Record<string, string> = {
  "&": "&amp;",
  "<": "&lt;",
  ">": "&gt;",
  '"': "&quot;",
  "'": "&#39;",
};

export function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (c) => ESCAPES[c] as string);
}

export function renderSettings(settings: SessionSettings): string {
  const badges = [
    settings.prompting,
    settings.aggregation,
    settings.cot ? "cot" : "no cot",
    `n=${settings.n}`,
    `m=${settings.m}`,
    `t=${settings.temperature}`,
    `k=${settings.top_k}`,
  ];
  return `<ul class="settings">${badges
    .map((b) => `<li class="badge">${escapeHtml(b)}</li>`)
    .join("")}</ul>`;
}

export function renderConversation(
  turns: TurnResult[],
  pending: boolean,
  selectedTurn: number | null,
): string {
  const items = turns.map((turn, i) => {
    const classes = i === selectedTurn ? "turn selected" : "turn";
    const answer =
      turn.shown_response === null
        ? `<p class="answer none">no passage snippet</p>`
        : `<p class="answer">${escapeHtml(turn.shown_response)}</p>`;
    return (
      `<article class="${classes}" data-turn="${i}">` +
      `<p class="query">${escapeHtml(turn.query)}</p>` +
      answer +
      `</article>`
    );
  });
  if (pending) {
    items.push(`<p class="pending">searching&hellip;</p>`);
  }
  if (!turns.length && !pending) {
    items.push(`<p class="empty">Ask the first question to start the session.</p>`);
  }
  return items.join("");
}

function renderResponses(turn: TurnResult, rewriteIndex: number): string {
  const responses = turn.responses[rewriteIndex] ?? [];
  if (!responses.length) {
    return "";
  }
  const selected =
    turn.selected.rewrite_index === rewriteIndex ? turn.selected.response_index : null;
  const items = responses.map((response, j) => {
    const classes = j === selected ? "response selected" : "response";
    return (
      `<li class="${classes}" data-response="${rewriteIndex}:${j}">` +
      `<span class="tag">response ${j}</span>` +
      `<span class="score">${response.score.toFixed(3)}</span>` +
      (j === selected ? `<span class="marker">selected</span>` : "") +
      `<p>${escapeHtml(response.text)}</p>` +
      `</li>`
    );
  });
  return `<ul class="responses">${items.join("")}</ul>`;
}

export function renderInspector(turn: TurnResult | null): string {
  if (turn === null) {
    return `<p class="empty">No turn selected.</p>`;
  }
  const rewrites = turn.rewrites.map((rewrite, i) => {
    const isSelected = turn.selected.rewrite_index === i;
    const classes = isSelected ? "rewrite selected" : "rewrite";
    const cot =
      rewrite.cot === null
        ? ""
        : `<blockquote class="cot">${escapeHtml(rewrite.cot)}</blockquote>`;
    return (
      `<li class="${classes}" data-rewrite="${i}">` +
      `<span class="tag">rewrite ${i}</span>` +
      `<span class="score">${rewrite.score.toFixed(3)}</span>` +
      (isSelected ? `<span class="marker">selected</span>` : "") +
      cot +
      `<p>${escapeHtml(rewrite.text)}</p>` +
      renderResponses(turn, i) +
      `</li>`
    );
  });
  const intent =
    `<p class="intent">intent vector: dim ${turn.intent.dim}, ` +
    `norm ${turn.intent.l2_norm.toFixed(4)}</p>`;
  return (
    `<h3>Turn ${turn.turn_id} interpretation</h3>` +
    `<ul class="rewrites">${rewrites.join("")}</ul>` +
    intent
  );
}

export function renderResults(turn: TurnResult | null, expanded: string | null): string {
  if (turn === null) {
    return `<p class="empty">No results yet.</p>`;
  }
  const items = turn.results.map((result, i) => {
    const isExpanded = expanded === result.passage_id;
    const classes = isExpanded ? "passage expanded" : "passage";
    const doc = result.doc_id === null ? "" : `<span class="doc">${escapeHtml(result.doc_id)}</span>`;
    const snippet =
      result.snippet === null ? "" : `<p class="snippet">${escapeHtml(result.snippet)}</p>`;
    const full =
      isExpanded && result.text !== null
        ? `<div class="fulltext">${escapeHtml(result.text)}</div>`
        : "";
    return (
      `<li class="${classes}" data-passage="${escapeHtml(result.passage_id)}">` +
      `<span class="rank">${i + 1}</span>` +
      `<span class="pid">${escapeHtml(result.passage_id)}</span>` +
      doc +
      `<span class="score">${result.score.toFixed(4)}</span>` +
      snippet +
      full +
      `</li>`
    );
  });
  return `<ol class="results">${items.join("")}</ol>`;
}
