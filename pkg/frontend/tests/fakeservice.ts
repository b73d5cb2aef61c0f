/** In-memory stand-in for the scoring service, exposing a fetch-compatible
 * function. Mirrors the wire contract: token lifecycle, 409s, completion. */

export interface StoredScore {
  subject: string;
  pairId: string;
  raw: number;
  token: string;
}

interface FakeSession {
  id: string;
  subject: string;
  cursor: number;
  token: string | null;
}

export class FakeService {
  sessions = new Map<string, FakeSession>();
  bySubject = new Map<string, string>();
  scores: StoredScore[] = [];
  failNextSubmit = false;
  private tokenCounter = 0;

  constructor(readonly totalTrials: number = 12) {}

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;

    if (path === "/session" && method === "POST") {
      const subject = String(body.subject_id ?? "");
      if (subject.trim() === "") {
        return json(422, { detail: "subject id must be non-empty" });
      }
      const existing = this.bySubject.get(subject);
      if (existing !== undefined) {
        return json(409, { detail: { error: "duplicate", existing_session_id: existing } });
      }
      const session: FakeSession = {
        id: `sess-${this.bySubject.size + 1}`,
        subject,
        cursor: 0,
        token: null,
      };
      this.sessions.set(session.id, session);
      this.bySubject.set(subject, session.id);
      return json(201, { session_id: session.id, trials_total: this.totalTrials });
    }

    const nextMatch = path.match(/^\/session\/([^/]+)\/next$/);
    if (nextMatch && method === "GET") {
      const session = this.sessions.get(nextMatch[1]!);
      if (!session) return json(404, { detail: "unknown session" });
      if (session.cursor >= this.totalTrials) {
        return json(200, { done: true, completed: this.totalTrials });
      }
      if (session.token === null) {
        session.token = `tok-${++this.tokenCounter}`;
      }
      return json(200, {
        done: false,
        token: session.token,
        left_url: `/images/left${session.cursor}`,
        right_url: `/images/right${session.cursor}`,
        index: session.cursor + 1,
        total: this.totalTrials,
      });
    }

    const scoreMatch = path.match(/^\/session\/([^/]+)\/score$/);
    if (scoreMatch && method === "POST") {
      if (this.failNextSubmit) {
        this.failNextSubmit = false;
        throw new TypeError("network failure");
      }
      const session = this.sessions.get(scoreMatch[1]!);
      if (!session) return json(404, { detail: "unknown session" });
      const { token, score } = body;
      if (session.token === null || token !== session.token) {
        return json(409, { detail: "trial token is not current" });
      }
      if (typeof score !== "number" || score < -3 || score > 3) {
        return json(422, { detail: "score out of range" });
      }
      this.scores.push({
        subject: session.subject,
        pairId: `P${session.cursor + 1}`,
        raw: score,
        token,
      });
      session.cursor += 1;
      session.token = null;
      return json(200, { accepted: true, index: session.cursor, total: this.totalTrials });
    }

    return json(404, { detail: `no route for ${method} ${path}` });
  };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}
