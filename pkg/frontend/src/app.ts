// Page wiring. Everything interesting lives in the view modules; this file
// only moves documents between the API client and the DOM.

import { ApiClient, ApiError, pollRun } from "./api.js";
import { renderGraph, renderNodeDetail } from "./graph.js";
import { esc } from "./render.js";
import { canApprove, FeedbackDraft, renderConflict, renderReview } from "./review.js";
import { renderRun, renderStale, RunMonitor } from "./runs.js";
import {
  DivergenceReportDoc,
  GraphDoc,
  GraphRunResponse,
  PieceListResponse,
  ReviewView,
  RunView,
  TraceDoc,
} from "./types.js";

interface Els {
  pieces: HTMLElement;
  review: HTMLElement;
  run: HTMLElement;
  stale: HTMLElement;
  graph: HTMLElement;
  detail: HTMLElement;
}

function grab(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id} in index.html`);
  return el;
}

export function startApp(): void {
  const token =
    new URLSearchParams(window.location.search).get("token") ??
    window.localStorage.getItem("pieceforge-token") ??
    window.prompt("bearer token from `pieceforge serve`") ??
    "";
  window.localStorage.setItem("pieceforge-token", token);
  const client = new ApiClient("", token);

  const els: Els = {
    pieces: grab("pieces"),
    review: grab("review"),
    run: grab("run"),
    stale: grab("stale"),
    graph: grab("graph"),
    detail: grab("detail"),
  };

  const draft = new FeedbackDraft();
  let activePiece = "";
  let activeTrace: TraceDoc | undefined;
  let activeGraph: GraphDoc | undefined;
  let activeReport: DivergenceReportDoc | undefined;

  async function refreshPieces(): Promise<void> {
    const doc = (await client.get("/api/v1/pieces")) as PieceListResponse;
    els.pieces.innerHTML = doc.pieces
      .map(
        (p) => `<li>
          <button class="open-piece" data-piece="${esc(p.piece_id)}">${esc(p.piece_id)}</button>
          ${esc(p.title)} [${esc(p.suite_state ?? "no suite")}]
          ${p.review_open ? "(review open)" : ""}
        </li>`,
      )
      .join("\n");
  }

  async function openReview(pieceId: string): Promise<void> {
    activePiece = pieceId;
    draft.clear();
    try {
      const view = (await client.get(`/api/v1/pieces/${pieceId}/review`)) as ReviewView;
      els.review.innerHTML = renderReview(view, draft);
      bindReview(view);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        const view = (await client.post(`/api/v1/pieces/${pieceId}/review`, {})) as ReviewView;
        els.review.innerHTML = renderReview(view, draft);
        bindReview(view);
        return;
      }
      throw err;
    }
  }

  function bindReview(view: ReviewView): void {
    const approve = els.review.querySelector("button.approve");
    approve?.addEventListener("click", async () => {
      if (!canApprove(view, draft)) return;
      try {
        await client.post(`/api/v1/pieces/${activePiece}/review/approve`, {
          expert: "expert",
        });
        await refreshPieces();
        await openReview(activePiece);
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          els.review.innerHTML = renderConflict(err.body.detail ?? "conflict");
          els.review
            .querySelector("button.refresh")
            ?.addEventListener("click", () => void openReview(activePiece));
          return;
        }
        throw err;
      }
    });
  }

  async function submitFeedback(): Promise<void> {
    if (draft.empty || !activePiece) return;
    try {
      const view = (await client.post(
        `/api/v1/pieces/${activePiece}/review/feedback`,
        draft.toBody("expert"),
      )) as ReviewView;
      draft.clear();
      els.review.innerHTML = renderReview(view, draft);
      bindReview(view);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        els.review.innerHTML = renderConflict(err.body.detail ?? "conflict");
        els.review
          .querySelector("button.refresh")
          ?.addEventListener("click", () => void openReview(activePiece));
        return;
      }
      throw err;
    }
  }

  async function synthesize(pieceId: string): Promise<void> {
    const { run_id } = (await client.post(`/api/v1/pieces/${pieceId}/synthesize`, {})) as {
      run_id: string;
    };
    const monitor = new RunMonitor();
    pollRun(
      client,
      run_id,
      (view: RunView) => {
        if (monitor.offer(view) && monitor.current) {
          els.run.innerHTML = renderRun(monitor.current);
        }
      },
      (stale) => {
        els.stale.innerHTML = renderStale(stale);
      },
    );
  }

  async function openGraph(graphId: string): Promise<void> {
    activeGraph = (await client.get(`/api/v1/graphs/${graphId}`)) as GraphDoc;
    activeTrace = undefined;
    activeReport = undefined;
    paintGraph();
  }

  async function runGraph(inputs: Record<string, unknown>): Promise<void> {
    if (!activeGraph) return;
    const resp = (await client.post(`/api/v1/graphs/${activeGraph.graph_id}/run`, {
      inputs,
    })) as GraphRunResponse;
    activeTrace = resp.trace;
    paintGraph();
  }

  function paintGraph(): void {
    if (!activeGraph) return;
    els.graph.innerHTML = renderGraph(activeGraph, activeTrace, activeReport);
    for (const card of Array.from(els.graph.querySelectorAll(".node"))) {
      card.addEventListener("click", () => {
        const nodeId = (card as HTMLElement).dataset.node ?? "";
        if (activeTrace) els.detail.innerHTML = renderNodeDetail(activeTrace, nodeId);
      });
    }
  }

  // a localize document (from `pieceforge localize --json`) can be pasted
  // to light up the suspect node; there is no HTTP endpoint for it
  function loadReport(text: string): void {
    activeReport = JSON.parse(text) as DivergenceReportDoc;
    paintGraph();
  }

  els.pieces.addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.matches("button.open-piece")) {
      void openReview(target.dataset.piece ?? "");
    }
  });

  // expose the handful of actions the static page's controls call
  const hooks = { refreshPieces, openReview, submitFeedback, synthesize, openGraph, runGraph, loadReport, draft };
  (window as unknown as { pieceforge: typeof hooks }).pieceforge = hooks;

  void refreshPieces();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  startApp();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", () => startApp());
}
