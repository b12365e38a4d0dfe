// Review screen: the per-case explanation table, the feedback draft the
// expert composes, and the exact POST bodies the server expects.

import { esc, jsonCell } from "./render.js";
import {
  FeedbackItemBody,
  FeedbackPost,
  ReviewView,
} from "./types.js";

/**
 * The expert's pending feedback for the current round.
 *
 * Items accumulate locally and are submitted as one round; the server
 * applies them in order. Building the body here (and nowhere else) keeps
 * the wire schema in one place.
 */
export class FeedbackDraft {
  private items: FeedbackItemBody[] = [];

  addCase(caseDoc: Record<string, unknown>): void {
    this.items.push({ kind: "add_case", case: caseDoc });
  }

  removeCase(caseId: string): void {
    this.items.push({ kind: "remove_case", case_id: caseId });
  }

  modifyCase(caseId: string, changes: Record<string, unknown>): void {
    this.items.push({ kind: "modify_case", case_id: caseId, case: changes });
  }

  freeText(text: string): void {
    this.items.push({ kind: "free_text", text });
  }

  get count(): number {
    return this.items.length;
  }

  get empty(): boolean {
    return this.items.length === 0;
  }

  clear(): void {
    this.items = [];
  }

  toBody(expert: string): FeedbackPost {
    return { items: this.items.map((item) => ({ ...item })), expert };
  }
}

/** Approve is offered only on an open UnderReview suite with nothing pending. */
export function canApprove(view: ReviewView, draft: FeedbackDraft): boolean {
  return view.session.open && view.suite.state === "UnderReview" && draft.empty;
}

export function renderReview(view: ReviewView, draft: FeedbackDraft): string {
  const { session, suite } = view;
  const explained = new Map(
    session.explanation.per_case.map((entry) => [entry.case_id, entry]),
  );
  const rows = suite.cases
    .map((c) => {
      const ex = explained.get(c.case_id);
      return `<tr data-case="${esc(c.case_id)}">
        <td>${esc(c.case_id)}</td>
        <td>${esc(c.name)}</td>
        <td>${jsonCell(c.input)}</td>
        <td>${jsonCell(c.expected)}</td>
        <td>${esc(ex?.restated_input ?? "")}</td>
        <td>${esc(ex?.restated_expected ?? "")}</td>
        <td>${esc(ex?.reasoning ?? "")}</td>
      </tr>`;
    })
    .join("\n");

  const approveAttr = canApprove(view, draft) ? "" : " disabled";
  const draftNote = draft.empty
    ? "no pending feedback"
    : `${draft.count} feedback item(s) pending`;

  return `<section class="review" data-piece="${esc(suite.piece_id)}">
    <h2>${esc(suite.piece_id)}: suite v${suite.suite_version}, round ${session.round}</h2>
    <p class="state">suite state: <strong>${esc(suite.state)}</strong>; ${
      session.open ? "review open" : "review closed"
    }</p>
    <table class="cases">
      <thead><tr>
        <th>case</th><th>name</th><th>input</th><th>expected</th>
        <th>restated input</th><th>restated expected</th><th>reasoning</th>
      </tr></thead>
      <tbody>${rows}</tbody>
    </table>
    <p class="coverage">${esc(session.explanation.coverage_notes)}</p>
    <p class="draft">${esc(draftNote)}</p>
    <button class="approve"${approveAttr}>approve suite</button>
  </section>`;
}

/** 409 from a review mutation means the view is stale, not that it failed. */
export function renderConflict(detail: string): string {
  return `<div class="conflict">
    <p>The review state changed elsewhere: ${esc(detail)}</p>
    <button class="refresh">refresh view</button>
  </div>`;
}
