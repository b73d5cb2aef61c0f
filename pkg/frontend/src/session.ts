/** Trial-flow state machine, kept free of DOM concerns so it can be driven
 * headlessly in tests. One score per trial: the submit guard plus server-side
 * token invalidation make double-clicks harmless. */

import { ApiClient, ApiError, StaleTokenError, TrialView } from "./api.js";

export type FlowState =
  | { phase: "start"; error?: string }
  | { phase: "loading" }
  | { phase: "trial"; view: TrialView; imagesReady: boolean; submitting: boolean }
  | { phase: "done"; completed: number }
  | { phase: "failed"; message: string };

export const SCORE_VALUES = [3, 2, 1, 0, -1, -2, -3] as const;

export const SCORE_LABELS: Record<number, string> = {
  3: "left much better",
  2: "left better",
  1: "left a little better",
  0: "similar",
  [-1]: "right a little better",
  [-2]: "right better",
  [-3]: "right much better",
};

export class TrialFlow {
  private state: FlowState = { phase: "start" };
  private sessionId: string | null = null;
  private pendingScore: number | null = null;
  private listeners: Array<(s: FlowState) => void> = [];

  constructor(private readonly api: ApiClient) {}

  getState(): FlowState {
    return this.state;
  }

  onChange(listener: (s: FlowState) => void): void {
    this.listeners.push(listener);
  }

  private setState(next: FlowState): void {
    this.state = next;
    for (const listener of this.listeners) {
      listener(next);
    }
  }

  /** Validates the subject id locally; nothing is sent when it is empty. */
  async start(subjectId: string): Promise<void> {
    if (subjectId.trim().length === 0) {
      this.setState({ phase: "start", error: "enter a subject id" });
      return;
    }
    this.setState({ phase: "loading" });
    try {
      const info = await this.api.startSession(subjectId.trim());
      this.sessionId = info.sessionId;
      await this.advance();
    } catch (err) {
      this.setState({ phase: "failed", message: String(err) });
    }
  }

  private async advance(): Promise<void> {
    if (this.sessionId === null) {
      throw new Error("no active session");
    }
    const result = await this.api.next(this.sessionId);
    if (result.done) {
      this.setState({ phase: "done", completed: result.completed });
    } else {
      this.setState({
        phase: "trial",
        view: result.view,
        imagesReady: false,
        submitting: false,
      });
    }
  }

  /** Called by the UI once both images report loaded; enables scoring. */
  markImagesReady(): void {
    if (this.state.phase === "trial") {
      this.setState({ ...this.state, imagesReady: true });
    }
  }

  canScore(): boolean {
    return (
      this.state.phase === "trial" && this.state.imagesReady && !this.state.submitting
    );
  }

  /** Exactly one acknowledged score per trial; a stale token means the trial
   * was already recorded, so the flow silently refreshes to the current one.
   * On network failure the score is retained and resubmitted by retry(). */
  async submit(score: number): Promise<void> {
    if (!this.canScore() || this.state.phase !== "trial") {
      return;
    }
    const { view } = this.state;
    this.setState({ ...this.state, submitting: true });
    this.pendingScore = score;
    try {
      await this.api.submitScore(this.sessionId!, view.token, score);
      this.pendingScore = null;
      await this.advance();
    } catch (err) {
      if (err instanceof StaleTokenError) {
        this.pendingScore = null;
        await this.advance();
        return;
      }
      // network failure: keep the score for retry, stay on this trial
      this.setState({ ...this.state, submitting: false });
    }
  }

  hasPendingScore(): boolean {
    return this.pendingScore !== null;
  }

  async retry(): Promise<void> {
    if (this.pendingScore === null) {
      return;
    }
    const score = this.pendingScore;
    this.pendingScore = null;
    await this.submit(score);
  }
}
