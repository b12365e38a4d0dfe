import { describe, expect, it } from "vitest";

import { canApprove, FeedbackDraft, renderConflict, renderReview } from "../src/review.js";
import { ReviewView } from "../src/types.js";
import { reviewThreeCases } from "./fixtures.js";

function countRows(html: string): number {
  return (html.match(/<tr data-case=/g) ?? []).length;
}

describe("review screen", () => {
  it("renders one row per case of the fixture session", () => {
    const html = renderReview(reviewThreeCases, new FeedbackDraft());
    expect(countRows(html)).toBe(3);
    for (const id of ["c1", "c2", "c3"]) {
      expect(html).toContain(`data-case="${id}"`);
    }
    expect(html).toContain("n is 2");
    expect(html).toContain("doubling keeps the sign");
    expect(html).toContain("round 1");
  });

  it("escapes case content before it reaches markup", () => {
    const view: ReviewView = JSON.parse(JSON.stringify(reviewThreeCases));
    view.suite.cases[0].name = '<img src=x onerror="x">';
    const html = renderReview(view, new FeedbackDraft());
    expect(html).not.toContain("<img");
    expect(html).toContain("&lt;img");
  });
});

describe("feedback POST bodies", () => {
  it("remove_case carries exactly kind and case_id", () => {
    const draft = new FeedbackDraft();
    draft.removeCase("case-2");
    expect(draft.toBody("ada")).toEqual({
      items: [{ kind: "remove_case", case_id: "case-2" }],
      expert: "ada",
    });
  });

  it("add, modify, and free_text keep the server's field names", () => {
    const draft = new FeedbackDraft();
    draft.addCase({ case_id: "c9", input: { n: 7 }, expected: { result: 14 } });
    draft.modifyCase("c1", { rationale: "tightened" });
    draft.freeText("cover negative numbers too");
    expect(draft.toBody("expert")).toEqual({
      items: [
        { kind: "add_case", case: { case_id: "c9", input: { n: 7 }, expected: { result: 14 } } },
        { kind: "modify_case", case_id: "c1", case: { rationale: "tightened" } },
        { kind: "free_text", text: "cover negative numbers too" },
      ],
      expert: "expert",
    });
  });

  it("serializes without undefined optional fields", () => {
    const draft = new FeedbackDraft();
    draft.removeCase("c2");
    const wire = JSON.parse(JSON.stringify(draft.toBody("e")));
    expect(Object.keys(wire.items[0]).sort()).toEqual(["case_id", "kind"]);
  });

  it("clears after a submitted round", () => {
    const draft = new FeedbackDraft();
    draft.freeText("anything");
    expect(draft.empty).toBe(false);
    draft.clear();
    expect(draft.empty).toBe(true);
    expect(draft.toBody("e").items).toEqual([]);
  });
});

describe("approve control", () => {
  it("is enabled only on an open UnderReview suite with an empty draft", () => {
    const draft = new FeedbackDraft();
    expect(canApprove(reviewThreeCases, draft)).toBe(true);
    expect(renderReview(reviewThreeCases, draft)).toContain("<button class=\"approve\">");

    draft.removeCase("c2");
    expect(canApprove(reviewThreeCases, draft)).toBe(false);
    expect(renderReview(reviewThreeCases, draft)).toContain("<button class=\"approve\" disabled>");
  });

  it("is disabled outside UnderReview", () => {
    for (const state of ["Draft", "Approved"] as const) {
      const view: ReviewView = JSON.parse(JSON.stringify(reviewThreeCases));
      view.suite.state = state;
      if (state === "Approved") view.session.open = false;
      expect(canApprove(view, new FeedbackDraft())).toBe(false);
      expect(renderReview(view, new FeedbackDraft())).toContain("disabled");
    }
  });

  it("is disabled once the session is closed", () => {
    const view: ReviewView = JSON.parse(JSON.stringify(reviewThreeCases));
    view.session.open = false;
    expect(canApprove(view, new FeedbackDraft())).toBe(false);
  });
});

describe("conflict path", () => {
  it("renders the 409 detail with a refresh control", () => {
    const html = renderConflict("suite 'p1' v1 is approved and immutable");
    expect(html).toContain("changed elsewhere");
    expect(html).toContain("approved and immutable");
    expect(html).toContain("button class=\"refresh\"");
  });
});
