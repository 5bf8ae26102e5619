/** Payload shapes of the /v1 session API. The UI renders these verbatim and
 * performs no intent computation of its own. */

export type PromptingMode = "rew" | "rtr" | "rar";
export type AggregationMethod = "maxprob" | "sc" | "mean";

export interface SessionSettings {
  prompting: PromptingMode;
  aggregation: AggregationMethod;
  cot: boolean;
  n: number;
  m: number;
  temperature: number;
  top_k: number;
}

export interface RewriteRecord {
  text: string;
  score: number;
  cot: string | null;
}

export interface ResponseRecord {
  text: string;
  score: number;
}

export interface SelectedIndices {
  rewrite_index: number | null;
  response_index: number | null;
}

export interface IntentRecord {
  dim: number;
  l2_norm: number;
  values: number[];
}

export interface ResultRecord {
  passage_id: string;
  score: number;
  doc_id: string | null;
  snippet: string | null;
  text: string | null;
}

export interface TurnResult {
  turn_id: number;
  query: string;
  rewrites: RewriteRecord[];
  responses: ResponseRecord[][];
  selected: SelectedIndices;
  intent: IntentRecord;
  results: ResultRecord[];
  shown_response: string | null;
}

export interface SessionCreated {
  session_id: string;
  settings: SessionSettings;
}

export interface Transcript {
  session_id: string;
  settings: SessionSettings;
  turns: TurnResult[];
}

export interface Health {
  status: string;
  sessions: number;
}
