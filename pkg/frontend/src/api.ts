// Thin HTTP client plus the long-poll loop for run monitoring.
// All mutations in the app go through this module.

import { ApiErrorBody, RunView, TERMINAL_STATES } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ApiErrorBody,
  ) {
    super(`${body.error}: ${body.detail ?? ""}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const resp = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
      },
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const text = await resp.text();
    const doc = text ? JSON.parse(text) : {};
    if (!resp.ok) {
      throw new ApiError(resp.status, doc as ApiErrorBody);
    }
    return doc;
  }

  get(path: string): Promise<unknown> {
    return this.request("GET", path);
  }

  post(path: string, body: unknown): Promise<unknown> {
    return this.request("POST", path, body);
  }
}

export interface PollHandle {
  stop(): void;
  done: Promise<void>;
}

/**
 * Long-poll one run until it reaches a terminal state.
 *
 * Each response is handed to onUpdate; the cursor only moves forward, so
 * the server is never asked for anything older than what we've seen.
 * Network errors back off (doubling up to maxBackoffMs) and flip the
 * stale flag until a poll succeeds again.
 */
export function pollRun(
  client: ApiClient,
  runId: string,
  onUpdate: (view: RunView) => void,
  onStale: (stale: boolean) => void = () => {},
  maxBackoffMs = 8000,
): PollHandle {
  let stopped = false;
  let afterSeq = 0;

  const done = (async () => {
    let backoff = 500;
    while (!stopped) {
      let view: RunView;
      try {
        view = (await client.get(`/api/v1/runs/${runId}?after_seq=${afterSeq}`)) as RunView;
      } catch (err) {
        if (err instanceof ApiError) throw err; // a real answer, not a network blip
        onStale(true);
        await sleep(backoff);
        backoff = Math.min(backoff * 2, maxBackoffMs);
        continue;
      }
      onStale(false);
      backoff = 500;
      if (view.seq > afterSeq) afterSeq = view.seq;
      onUpdate(view);
      if (TERMINAL_STATES.includes(view.state)) return;
    }
  })();

  return {
    stop() {
      stopped = true;
    },
    done,
  };
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
