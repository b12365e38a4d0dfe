// Captured API responses. Shapes match the server byte for byte apart
// from timestamps and durations, which are shortened for readability.

import {
  DivergenceReportDoc,
  GraphDoc,
  ReviewView,
  RunView,
  TraceDoc,
} from "../src/types.js";

export const reviewThreeCases: ReviewView = {
  session: {
    piece_id: "p1",
    round: 1,
    suite_version: 1,
    open: true,
    started_at: "2026-08-19T12:37:45.795803Z",
    history: [],
    explanation: {
      piece_id: "p1",
      coverage_notes: "a positive case, the zero edge, and a negative",
      per_case: [
        {
          case_id: "c1",
          restated_input: "n is 2",
          restated_expected: "result is 4",
          reasoning: "2 doubled is 4",
        },
        {
          case_id: "c2",
          restated_input: "n is 0",
          restated_expected: "result is 0",
          reasoning: "zero stays zero",
        },
        {
          case_id: "c3",
          restated_input: "n is -3",
          restated_expected: "result is -6",
          reasoning: "doubling keeps the sign",
        },
      ],
    },
  },
  suite: {
    piece_id: "p1",
    suite_version: 1,
    state: "UnderReview",
    cases: [
      {
        case_id: "c1",
        name: "doubles two",
        input: { n: 2 },
        expected: { result: 4 },
        comparison: { kind: "exact_canonical" },
        rationale: "",
      },
      {
        case_id: "c2",
        name: "doubles zero",
        input: { n: 0 },
        expected: { result: 0 },
        comparison: { kind: "exact_canonical" },
        rationale: "",
      },
      {
        case_id: "c3",
        name: "doubles negatives",
        input: { n: -3 },
        expected: { result: -6 },
        comparison: { kind: "exact_canonical" },
        rationale: "",
      },
    ],
  },
};

function iteration(index: number, failing: string[], candidate: string) {
  return {
    index,
    candidate_id: candidate,
    passed: 2 - failing.length,
    failed: failing.length,
    total: 2,
    failing_case_ids: failing,
    static_violations: 0,
    duration: 0.04,
    repeated: false,
  };
}

const budget = { max_iterations: 8, wall_clock_limit: 600, parallel_tests: 4 };

/** The same synthesis run at three successive polls, as the server sent them. */
export const runPolls: RunView[] = [
  {
    run_id: "run-000001",
    kind: "synthesis",
    piece_id: "p1",
    suite_version: 1,
    state: "running",
    status: "running",
    seq: 2,
    started_at: "2026-08-19T12:37:57.785132Z",
    iterations: [iteration(1, ["c1"], "b91111ac4b69")],
    progress: { current_iteration: 1, max_iterations: 8 },
    budget,
  },
  {
    run_id: "run-000001",
    kind: "synthesis",
    piece_id: "p1",
    suite_version: 1,
    state: "running",
    status: "running",
    seq: 3,
    started_at: "2026-08-19T12:37:57.785132Z",
    iterations: [iteration(1, ["c1"], "b91111ac4b69"), iteration(2, ["c1", "c2"], "3041d3903498")],
    progress: { current_iteration: 2, max_iterations: 8 },
    budget,
  },
  {
    run_id: "run-000001",
    kind: "synthesis",
    piece_id: "p1",
    suite_version: 1,
    state: "success",
    status: "success",
    seq: 5,
    started_at: "2026-08-19T12:37:57.785132Z",
    finished_at: "2026-08-19T12:37:57.923744Z",
    iterations: [
      iteration(1, ["c1"], "b91111ac4b69"),
      iteration(2, ["c1", "c2"], "3041d3903498"),
      iteration(3, [], "69c3776858a0"),
    ],
    progress: { current_iteration: 3, max_iterations: 8 },
    winner: "69c3776858a0c049afb70bc96a3410b4dc1339cfeaa796c7e278c94e36cc487e",
    total_duration: 0.138,
    budget,
  },
];

export const runExhausted: RunView = {
  run_id: "run-000002",
  kind: "synthesis",
  piece_id: "p1",
  suite_version: 1,
  state: "exhausted",
  status: "exhausted",
  seq: 6,
  iterations: [iteration(1, ["c1"], "b91111ac4b69"), iteration(2, ["c1", "c2"], "3041d3903498")],
  progress: { current_iteration: 2, max_iterations: 2 },
  error: "budget exhausted after 2 iterations",
};

const inc = (i: number) => ({
  node_id: `c${i}`,
  piece_id: `link-${i}`,
  candidate_id: "0600812ae5519f3b8a49dc7cb9f880d99cfdeca850324031f05ec8938d30aed1",
});

export const chainGraph: GraphDoc = {
  graph_id: "chain",
  nodes: [inc(0), inc(1), inc(2), inc(3), inc(4)],
  edges: [
    { from: "start", from_path: "n", to: "c0", to_path: "n" },
    { from: "c0", from_path: "n", to: "c1", to_path: "n" },
    { from: "c1", from_path: "n", to: "c2", to_path: "n" },
    { from: "c2", from_path: "n", to: "c3", to_path: "n" },
    { from: "c3", from_path: "n", to: "c4", to_path: "n" },
  ],
  graph_inputs: ["start"],
  graph_outputs: [{ name: "final", node_id: "c4", from_path: "n" }],
  violations: [],
};

export const chainTrace: TraceDoc = {
  run_id: "run-000003",
  per_node: [
    { node_id: "c0", input: { n: 2 }, output: { n: 3 }, duration: 0.002 },
    { node_id: "c1", input: { n: 3 }, output: { n: 4 }, duration: 0.002 },
    { node_id: "c2", input: { n: 4 }, output: { n: 8 }, duration: 0.002 },
    { node_id: "c3", input: { n: 8 }, output: { n: 9 }, duration: 0.002 },
    { node_id: "c4", input: { n: 9 }, output: { n: 10 }, duration: 0.002 },
  ],
  graph_outputs: { final: 10 },
};

/** `pieceforge localize chain t1 --json` against the trace above. */
export const suspectReport: DivergenceReportDoc = {
  suspect_node: "c2",
  upstream_verified: ["c0", "c1"],
  expected_at_node: { n: 5 },
  actual_at_node: { n: 8 },
  summary: 'node c2 returned {"n": 8} where the reference had {"n": 5}; it doubles instead of incrementing',
};

export const emptyGraph: GraphDoc = {
  graph_id: "blank",
  nodes: [],
  edges: [],
  graph_inputs: [],
  graph_outputs: [],
  violations: [],
};

export const cyclicGraph: GraphDoc = {
  graph_id: "loop",
  nodes: [inc(0), inc(1)],
  edges: [
    { from: "c0", from_path: "n", to: "c1", to_path: "n" },
    { from: "c1", from_path: "n", to: "c0", to_path: "n" },
  ],
  graph_inputs: [],
  graph_outputs: [{ name: "final", node_id: "c1", from_path: "n" }],
  violations: ["graph has a cycle: [c0, c1]"],
};

export const diamondGraph: GraphDoc = {
  graph_id: "diamond",
  nodes: [
    { node_id: "a", piece_id: "p-a", candidate_id: "aaaa0000aaaa0000" },
    { node_id: "b", piece_id: "p-b", candidate_id: "bbbb0000bbbb0000" },
    { node_id: "c", piece_id: "p-c", candidate_id: "cccc0000cccc0000" },
    { node_id: "d", piece_id: "p-d", candidate_id: "dddd0000dddd0000" },
  ],
  edges: [
    { from: "start", from_path: "n", to: "a", to_path: "n" },
    { from: "a", from_path: "n", to: "b", to_path: "n" },
    { from: "a", from_path: "n", to: "c", to_path: "n" },
    { from: "b", from_path: "n", to: "d", to_path: "a" },
    { from: "c", from_path: "n", to: "d", to_path: "b" },
  ],
  graph_inputs: ["start"],
  graph_outputs: [{ name: "out", node_id: "d", from_path: "n" }],
  violations: [],
};
