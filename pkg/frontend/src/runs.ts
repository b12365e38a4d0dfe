// Run monitor: keeps the newest state of one run and renders it.
// Responses can arrive out of order (overlapping polls, manual refresh);
// the monitor never steps backward in seq.

import { esc } from "./render.js";
import { IterationDoc, RunView, TERMINAL_STATES } from "./types.js";

export class RunMonitor {
  private view: RunView | null = null;

  /** Apply a response; returns false when it is older than what we have. */
  offer(view: RunView): boolean {
    if (this.view !== null && view.seq <= this.view.seq) {
      return false;
    }
    this.view = view;
    return true;
  }

  get current(): RunView | null {
    return this.view;
  }

  get terminal(): boolean {
    return this.view !== null && TERMINAL_STATES.includes(this.view.state);
  }
}

function banner(view: RunView): string {
  const iterations = view.iterations ?? [];
  const last: IterationDoc | undefined = iterations[iterations.length - 1];
  switch (view.state) {
    case "running":
      return `<div class="banner running">running</div>`;
    case "success":
      return `<div class="banner success">success: winner ${esc(
        (view.winner ?? "").slice(0, 12),
      )}</div>`;
    case "failed":
      return `<div class="banner failure">failed: ${esc(view.error ?? view.status ?? "")}</div>`;
    default: {
      // exhausted or stagnated: show what the last attempt still got wrong
      const digest = last
        ? `last iteration ${last.index}: ${last.failed}/${last.total} failing` +
          (last.failing_case_ids.length ? ` (${esc(last.failing_case_ids.join(", "))})` : "")
        : "";
      return `<div class="banner failure">${esc(view.state)}: ${digest}</div>`;
    }
  }
}

export function renderRun(view: RunView): string {
  const progress = view.progress;
  const counter = progress
    ? `iteration ${progress.current_iteration}/${progress.max_iterations}`
    : "";
  const rows = (view.iterations ?? [])
    .map(
      (it) => `<tr class="${it.failed === 0 ? "pass" : "fail"}">
      <td>${it.index}</td>
      <td><code>${esc(it.candidate_id.slice(0, 12))}</code></td>
      <td>${it.passed}/${it.total}</td>
      <td>${esc(it.failing_case_ids.join(", "))}</td>
      <td>${it.repeated ? "repeated" : ""}</td>
    </tr>`,
    )
    .join("\n");

  return `<section class="run" data-run="${esc(view.run_id)}" data-seq="${view.seq}">
    <h2>${esc(view.run_id)}${view.piece_id ? " (" + esc(view.piece_id) + ")" : ""}</h2>
    <p class="counter">${esc(counter)}</p>
    ${banner(view)}
    <table class="iterations">
      <thead><tr><th>#</th><th>candidate</th><th>passed</th><th>failing cases</th><th></th></tr></thead>
      <tbody>${rows}</tbody>
    </table>
  </section>`;
}

export function renderStale(stale: boolean): string {
  return stale ? `<span class="stale">connection lost, retrying</span>` : "";
}
