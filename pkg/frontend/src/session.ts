/**
 * Session view-model: the state machine between the user's clicks and the
 * HTTP API. The submit controls are locked while a request is in flight
 * (optimistic locking), a 409 re-syncs to the server's pending step, and a
 * network failure raises a retry banner without ever duplicating a submit.
 */

import { ApiError, Choice, Prompt, SessionApi } from "./api.js";

export type Phase =
  | "idle"
  | "awaiting-feedback"
  | "submitting"
  | "finished"
  | "error";

export interface SessionView {
  sessionId: string | null;
  phase: Phase;
  prompt: Prompt | null;
  /** how many rows the server has logged (k of the pending prompt) */
  stepCount: number;
  horizon: number;
  safetyBox: boolean;
  errorMessage: string | null;
}

type Listener = (view: SessionView) => void;

export class SessionController {
  private view: SessionView = {
    sessionId: null,
    phase: "idle",
    prompt: null,
    stepCount: 0,
    horizon: 0,
    safetyBox: false,
    errorMessage: null,
  };
  private listeners: Listener[] = [];
  private pendingChoice: Choice | null = null;

  constructor(private readonly api: SessionApi) {}

  get state(): SessionView {
    return { ...this.view };
  }

  /** The submit controls are enabled only while a prompt is pending. */
  get canSubmit(): boolean {
    return this.view.phase === "awaiting-feedback";
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private update(patch: Partial<SessionView>): void {
    this.view = { ...this.view, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  async start(body: Record<string, unknown>): Promise<void> {
    const created = await this.api.createSession(body);
    this.update({
      sessionId: created.session_id,
      horizon: created.horizon,
      safetyBox: created.safety_box,
    });
    if (created.status === "finished") {
      this.update({ phase: "finished", prompt: null, stepCount: created.step + 1 });
      return;
    }
    await this.resync();
  }

  /** Fetch the server's pending prompt and unlock the controls. */
  async resync(): Promise<void> {
    const id = this.view.sessionId;
    if (id === null) throw new Error("no session");
    try {
      const prompt = await this.api.getPrompt(id);
      this.update({
        phase: "awaiting-feedback",
        prompt,
        stepCount: prompt.step,
        errorMessage: null,
      });
    } catch (err) {
      if (err instanceof ApiError && err.status === 410) {
        this.update({ phase: "finished", prompt: null, errorMessage: null });
        return;
      }
      throw err;
    }
  }

  /**
   * Submit the user's preference for the pending step. Calls while locked
   * (no prompt pending or a request already in flight) are ignored, so a
   * double-click produces exactly one request.
   */
  async choose(choice: Choice): Promise<void> {
    if (!this.canSubmit || this.view.prompt === null) return;
    this.pendingChoice = choice;
    await this.submitPending();
  }

  /** Retry the choice that failed on a network error; no-op otherwise. */
  async retry(): Promise<void> {
    if (this.view.phase !== "error" || this.pendingChoice === null) return;
    await this.submitPending();
  }

  private async submitPending(): Promise<void> {
    const { sessionId, prompt } = this.view;
    const choice = this.pendingChoice;
    if (sessionId === null || prompt === null || choice === null) return;
    this.update({ phase: "submitting", errorMessage: null });
    try {
      const ack = await this.api.postFeedback(sessionId, prompt.step, choice);
      this.pendingChoice = null;
      if (ack.status === "finished") {
        this.update({ phase: "finished", prompt: null, stepCount: ack.step + 1 });
        return;
      }
      await this.resync();
    } catch (err) {
      if (err instanceof ApiError) {
        this.pendingChoice = null;
        if (err.status === 409) {
          // stale step: the server moved on; re-sync to its pending prompt
          await this.resync();
          return;
        }
        if (err.status === 410) {
          this.update({ phase: "finished", prompt: null });
          return;
        }
        this.update({ phase: "error", errorMessage: err.message });
        return;
      }
      // network failure: keep the pending choice for a retry, never resubmit
      // automatically
      this.update({
        phase: "error",
        errorMessage: err instanceof Error ? err.message : String(err),
      });
    }
  }
}
