// Graph view: a left-to-right layered rendering of the composition DAG,
// colored by trace outcome and by the suspect/verified sets of a
// localization report. Validation verdicts come from the API's
// violations field; nothing is re-validated here.

import { esc, jsonCell } from "./render.js";
import {
  DivergenceReportDoc,
  GraphDoc,
  NodeTraceDoc,
  TraceDoc,
} from "./types.js";

export type NodeState = "ok" | "failed" | "skipped" | "suspect" | "";

/**
 * Topological layers for layout: a node sits one column right of its
 * rightmost predecessor. Graph inputs are not drawn, so only node-to-node
 * edges matter. Anything unplaceable (a cycle that slipped past
 * validation) lands in one trailing layer so the page still renders.
 */
export function layoutLayers(graph: GraphDoc): string[][] {
  const nodeIds = new Set(graph.nodes.map((n) => n.node_id));
  const preds = new Map<string, string[]>();
  for (const node of graph.nodes) preds.set(node.node_id, []);
  for (const edge of graph.edges) {
    if (nodeIds.has(edge.from) && nodeIds.has(edge.to)) {
      preds.get(edge.to)?.push(edge.from);
    }
  }
  const layer = new Map<string, number>();
  let placed = true;
  while (placed && layer.size < nodeIds.size) {
    placed = false;
    for (const node of graph.nodes) {
      if (layer.has(node.node_id)) continue;
      const above = preds.get(node.node_id) ?? [];
      if (above.every((p) => layer.has(p))) {
        layer.set(node.node_id, above.length ? Math.max(...above.map((p) => layer.get(p)!)) + 1 : 0);
        placed = true;
      }
    }
  }
  const layers: string[][] = [];
  for (const node of graph.nodes) {
    const idx = layer.get(node.node_id);
    const column = idx === undefined ? Math.max(layers.length, 1) : idx;
    while (layers.length <= column) layers.push([]);
    layers[column].push(node.node_id);
  }
  return layers.filter((column) => column.length > 0);
}

export function nodeStates(
  graph: GraphDoc,
  trace?: TraceDoc,
  report?: DivergenceReportDoc,
): Map<string, NodeState> {
  const states = new Map<string, NodeState>();
  const traced = new Map<string, NodeTraceDoc>();
  for (const entry of trace?.per_node ?? []) traced.set(entry.node_id, entry);
  for (const node of graph.nodes) {
    let state: NodeState = "";
    if (trace) {
      const entry = traced.get(node.node_id);
      state = entry === undefined ? "skipped" : entry.failure ? "failed" : "ok";
    }
    states.set(node.node_id, state);
  }
  if (report?.suspect_node && states.has(report.suspect_node)) {
    states.set(report.suspect_node, "suspect");
  }
  return states;
}

export function renderGraph(
  graph: GraphDoc,
  trace?: TraceDoc,
  report?: DivergenceReportDoc,
): string {
  const violations = graph.violations ?? [];
  if (violations.length > 0) {
    const items = violations.map((v) => `<li>${esc(v)}</li>`).join("\n");
    return `<section class="graph invalid" data-graph="${esc(graph.graph_id)}">
      <h2>${esc(graph.graph_id)}</h2>
      <p>graph is invalid:</p>
      <ul class="violations">${items}</ul>
    </section>`;
  }
  if (graph.nodes.length === 0) {
    return `<section class="graph empty" data-graph="${esc(graph.graph_id)}">
      <h2>${esc(graph.graph_id)}</h2>
      <p class="empty-state">this graph has no nodes yet</p>
    </section>`;
  }

  const states = nodeStates(graph, trace, report);
  const dimmed = new Set(report?.upstream_verified ?? []);
  const byId = new Map(graph.nodes.map((n) => [n.node_id, n]));
  const columns = layoutLayers(graph)
    .map((column) => {
      const cards = column
        .map((nodeId) => {
          const node = byId.get(nodeId)!;
          const state = states.get(nodeId) ?? "";
          const classes = ["node", state, dimmed.has(nodeId) ? "dim" : ""]
            .filter(Boolean)
            .join(" ");
          return `<div class="${classes}" data-node="${esc(nodeId)}" data-state="${state}">
            <span class="id">${esc(nodeId)}</span>
            <span class="piece">${esc(node.piece_id)}</span>
            <code class="cand">${esc(node.candidate_id.slice(0, 8))}</code>
          </div>`;
        })
        .join("\n");
      return `<div class="layer">${cards}</div>`;
    })
    .join("\n");

  const edgeList = graph.edges
    .map(
      (e) =>
        `<li>${esc(e.from)}.${esc(e.from_path)} → ${esc(e.to)}.${esc(e.to_path)}</li>`,
    )
    .join("\n");
  const summary = report?.summary
    ? `<p class="localize-summary">${esc(report.summary)}</p>`
    : "";

  return `<section class="graph" data-graph="${esc(graph.graph_id)}">
    <h2>${esc(graph.graph_id)}</h2>
    ${summary}
    <div class="layers">${columns}</div>
    <ul class="edges">${edgeList}</ul>
  </section>`;
}

/** Detail panel for one clicked node: what went in, what came out. */
export function renderNodeDetail(trace: TraceDoc, nodeId: string): string {
  const entry = trace.per_node.find((e) => e.node_id === nodeId);
  if (!entry) {
    return `<div class="node-detail" data-node="${esc(nodeId)}">
      <p>${esc(nodeId)} was skipped: an upstream node failed first</p>
    </div>`;
  }
  const outcome = entry.failure
    ? `<p class="failure">failed: ${esc(entry.failure.status)}${
        entry.failure.detail ? ", " + esc(entry.failure.detail) : ""
      }</p>`
    : `<p>output: ${jsonCell(entry.output)}</p>`;
  return `<div class="node-detail" data-node="${esc(nodeId)}">
    <h3>${esc(nodeId)}</h3>
    <p>input: ${jsonCell(entry.input)}</p>
    ${outcome}
  </div>`;
}
