import { describe, expect, it } from "vitest";

import { layoutLayers, nodeStates, renderGraph, renderNodeDetail } from "../src/graph.js";
import {
  chainGraph,
  chainTrace,
  cyclicGraph,
  diamondGraph,
  emptyGraph,
  suspectReport,
} from "./fixtures.js";

function classOf(html: string, nodeId: string): string {
  const m = html.match(new RegExp(`<div class="([^"]*)" data-node="${nodeId}"`));
  expect(m, `node card for ${nodeId}`).not.toBeNull();
  return m![1];
}

describe("suspect highlighting", () => {
  it("marks the divergence report's suspect and dims verified upstream nodes", () => {
    const html = renderGraph(chainGraph, chainTrace, suspectReport);

    expect(classOf(html, "c2")).toContain("suspect");
    expect(classOf(html, "c2")).not.toContain("dim");
    expect(classOf(html, "c0")).toContain("dim");
    expect(classOf(html, "c1")).toContain("dim");
    expect(classOf(html, "c3")).not.toContain("dim");
    expect(html).toContain('data-state="suspect"');
    expect(html).toContain("localize-summary");
    expect(html).toContain("doubles instead of incrementing");
  });

  it("falls back to trace states when no report is loaded", () => {
    const states = nodeStates(chainGraph, chainTrace);
    expect(states.get("c2")).toBe("ok");
    const html = renderGraph(chainGraph, chainTrace);
    expect(html).not.toContain("suspect");
  });

  it("keeps failed and skipped states distinct from the suspect overlay", () => {
    const trace = {
      ...chainTrace,
      per_node: chainTrace.per_node
        .map((n) =>
          n.node_id === "c3"
            ? { node_id: "c3", input: n.input, failure: { status: "timeout", detail: "10.0s" }, duration: 10 }
            : n,
        )
        .filter((n) => n.node_id !== "c4"),
    };
    const states = nodeStates(chainGraph, trace);
    expect(states.get("c3")).toBe("failed");
    expect(states.get("c4")).toBe("skipped");
  });
});

describe("graph layout", () => {
  it("layers a diamond by longest path from the sources", () => {
    expect(layoutLayers(diamondGraph)).toEqual([["a"], ["b", "c"], ["d"]]);
  });

  it("layers the five-node chain one node per column", () => {
    expect(layoutLayers(chainGraph)).toEqual([["c0"], ["c1"], ["c2"], ["c3"], ["c4"]]);
  });

  it("shows an empty state instead of an empty diagram", () => {
    const html = renderGraph(emptyGraph);
    expect(html).toContain("no nodes yet");
  });

  it("surfaces validation violations instead of guessing a layout", () => {
    const html = renderGraph(cyclicGraph);
    expect(html).toContain("graph has a cycle");
    expect(html).not.toContain("data-node=");
  });
});

describe("node detail", () => {
  it("shows input and output for a traced node", () => {
    const html = renderNodeDetail(chainTrace, "c2");
    expect(html).toContain("input: <code>{&quot;n&quot;:4}</code>");
    expect(html).toContain("output: <code>{&quot;n&quot;:8}</code>");
  });

  it("explains a skipped node", () => {
    const html = renderNodeDetail(chainTrace, "missing");
    expect(html).toContain("was skipped");
  });

  it("shows the failure for a failed node", () => {
    const trace = {
      ...chainTrace,
      per_node: [
        { node_id: "c0", input: { n: 2 }, failure: { status: "nonzero_exit", detail: "exit 3" }, duration: 0.1 },
      ],
    };
    const html = renderNodeDetail(trace, "c0");
    expect(html).toContain("nonzero_exit");
    expect(html).toContain("exit 3");
  });
});
