// Wire shapes, mirroring the HTTP API's JSON exactly. Nothing in here is
// computed client-side; if a field isn't in an API response, it isn't here.

export interface PieceSummary {
  piece_id: string;
  title: string;
  suite_state?: string;
  suite_version?: number;
  review_open: boolean;
  pinned_candidate?: string;
}

export interface PieceListResponse {
  pieces: PieceSummary[];
}

export interface ComparisonDoc {
  kind: string;
  abs_eps?: number;
}

export interface TestCaseDoc {
  case_id: string;
  name: string;
  input: unknown;
  expected: unknown;
  comparison: ComparisonDoc;
  rationale: string;
}

export interface SuiteDoc {
  piece_id: string;
  suite_version: number;
  state: "Draft" | "UnderReview" | "Approved";
  cases: TestCaseDoc[];
  approved_by?: string;
  approved_at?: string;
}

export interface ExplanationEntry {
  case_id: string;
  restated_input: string;
  restated_expected: string;
  reasoning: string;
}

export interface ExplanationDoc {
  piece_id: string;
  per_case: ExplanationEntry[];
  coverage_notes: string;
}

export interface ReviewSessionDoc {
  piece_id: string;
  round: number;
  suite_version: number;
  explanation: ExplanationDoc;
  open: boolean;
  started_at: string;
  history: unknown[];
}

/** GET or POST /pieces/{id}/review */
export interface ReviewView {
  session: ReviewSessionDoc;
  suite: SuiteDoc;
}

// Feedback POST body. Exactly the fields the server parses; optional
// fields are omitted, never sent as null.
export type FeedbackKind = "add_case" | "remove_case" | "modify_case" | "free_text";

export interface FeedbackItemBody {
  kind: FeedbackKind;
  case_id?: string;
  case?: Record<string, unknown>;
  text?: string;
}

export interface FeedbackPost {
  items: FeedbackItemBody[];
  expert: string;
}

export interface IterationDoc {
  index: number;
  candidate_id: string;
  passed: number;
  failed: number;
  total: number;
  failing_case_ids: string[];
  static_violations: number;
  duration: number;
  repeated: boolean;
}

/** GET /runs/{id} for a synthesis run. */
export interface RunView {
  run_id: string;
  kind: string;
  piece_id?: string;
  suite_version?: number;
  state: string;
  status?: string;
  seq: number;
  iterations?: IterationDoc[];
  progress?: { current_iteration: number; max_iterations: number };
  budget?: { max_iterations: number; wall_clock_limit: number; parallel_tests: number };
  winner?: string;
  error?: string;
  started_at?: string;
  finished_at?: string;
  total_duration?: number;
}

export const TERMINAL_STATES = ["success", "failed", "exhausted", "stagnated"];

export interface GraphNodeDoc {
  node_id: string;
  piece_id: string;
  candidate_id: string;
}

export interface GraphEdgeDoc {
  from: string;
  from_path: string;
  to: string;
  to_path: string;
}

export interface GraphOutputDoc {
  name: string;
  node_id: string;
  from_path: string;
}

export interface GraphDoc {
  graph_id: string;
  nodes: GraphNodeDoc[];
  edges: GraphEdgeDoc[];
  graph_inputs: string[];
  graph_outputs: GraphOutputDoc[];
  integration_tests?: unknown[];
  violations?: string[];
}

export interface NodeTraceDoc {
  node_id: string;
  input: unknown;
  output?: unknown;
  failure?: { status: string; detail?: string; exit_code?: number };
  duration: number;
}

export interface TraceDoc {
  run_id: string;
  per_node: NodeTraceDoc[];
  graph_outputs?: Record<string, unknown>;
}

export interface GraphRunResponse {
  run_id: string;
  outputs: Record<string, unknown> | null;
  trace: TraceDoc;
  failed_node?: string;
}

/** The localization document, as `pieceforge localize --json` emits it. */
export interface DivergenceReportDoc {
  suspect_node?: string;
  upstream_verified: string[];
  expected_at_node?: unknown;
  actual_at_node?: unknown;
  summary?: string;
}

export interface ApiErrorBody {
  error: string;
  detail?: string;
}
