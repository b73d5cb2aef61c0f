/** Typed client for the viewing-test service. */

export interface SessionInfo {
  sessionId: string;
  trialsTotal: number;
  resumed: boolean;
}

export interface TrialView {
  token: string;
  leftUrl: string;
  rightUrl: string;
  index: number;
  total: number;
}

export type NextResult =
  | { done: false; view: TrialView }
  | { done: true; completed: number };

export interface ScoreAck {
  accepted: boolean;
  index: number;
  total: number;
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

export class StaleTokenError extends ApiError {}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    return this.fetchImpl(`${this.baseUrl}${path}`, init);
  }

  /** Create a session; a 409 means one exists and is resumed instead. */
  async startSession(subjectId: string): Promise<SessionInfo> {
    const res = await this.request("/session", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ subject_id: subjectId }),
    });
    if (res.status === 201) {
      const body = await res.json();
      return { sessionId: body.session_id, trialsTotal: body.trials_total, resumed: false };
    }
    if (res.status === 409) {
      const body = await res.json();
      const existing = body.detail?.existing_session_id;
      if (typeof existing === "string") {
        return { sessionId: existing, trialsTotal: -1, resumed: true };
      }
    }
    throw new ApiError(`session creation failed (${res.status})`, res.status);
  }

  async next(sessionId: string): Promise<NextResult> {
    const res = await this.request(`/session/${sessionId}/next`);
    if (!res.ok) {
      throw new ApiError(`next trial failed (${res.status})`, res.status);
    }
    const body = await res.json();
    if (body.done) {
      return { done: true, completed: body.completed };
    }
    return {
      done: false,
      view: {
        token: body.token,
        leftUrl: body.left_url,
        rightUrl: body.right_url,
        index: body.index,
        total: body.total,
      },
    };
  }

  async submitScore(sessionId: string, token: string, score: number): Promise<ScoreAck> {
    const res = await this.request(`/session/${sessionId}/score`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ token, score }),
    });
    if (res.status === 409) {
      throw new StaleTokenError("trial token is stale", res.status);
    }
    if (!res.ok) {
      throw new ApiError(`score rejected (${res.status})`, res.status);
    }
    return (await res.json()) as ScoreAck;
  }
}
