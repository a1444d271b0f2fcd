import { describe, expect, it, vi } from "vitest";

import { ApiError, Choice, FeedbackAck, Prompt, SessionApi } from "../src/api.js";
import { SessionController } from "../src/session.js";

/** In-memory stand-in for the session service with the same step semantics. */
class FakeServer {
  step = 1;
  rows = 1; // priming row is already logged
  postCalls = 0;
  failNextWithNetworkError = false;

  constructor(readonly horizon: number) {}

  prompt(): Prompt {
    if (this.step >= this.horizon) throw new ApiError(410, "session finished");
    return {
      session_id: "fake",
      step: this.step,
      current: { observables: [20 + this.step] },
      previous: { observables: [20 + this.step - 1] },
      applied_input: [30],
    };
  }

  feedback(step: number, _choice: Choice): FeedbackAck {
    this.postCalls += 1;
    if (this.failNextWithNetworkError) {
      this.failNextWithNetworkError = false;
      throw new TypeError("fetch failed");
    }
    if (this.step >= this.horizon) throw new ApiError(410, "session finished");
    if (step !== this.step) {
      throw new ApiError(409, `stale step ${step}; pending step is ${this.step}`);
    }
    this.rows += 1;
    this.step += 1;
    const finished = this.step >= this.horizon;
    return {
      session_id: "fake",
      status: finished ? "finished" : "awaiting-feedback",
      step: finished ? this.step - 1 : this.step,
      input: [30],
      clamped: false,
    };
  }
}

function makeController(server: FakeServer) {
  const api = {
    createSession: async () => ({
      session_id: "fake",
      status: "awaiting-feedback" as const,
      step: server.step,
      horizon: server.horizon,
      safety_box: true,
    }),
    getPrompt: async () => server.prompt(),
    postFeedback: async (_id: string, step: number, choice: Choice) =>
      server.feedback(step, choice),
    getLog: async () => {
      throw new Error("unused");
    },
    streamUrl: () => "ws://fake",
  } as unknown as SessionApi;
  return new SessionController(api);
}

describe("SessionController", () => {
  it("start leaves a pending prompt with controls enabled", async () => {
    const server = new FakeServer(5);
    const c = makeController(server);
    await c.start({ preset: "thermal" });
    expect(c.state.phase).toBe("awaiting-feedback");
    expect(c.canSubmit).toBe(true);
    expect(c.state.prompt?.step).toBe(1);
  });

  it("choosing advances to the next prompt and extends the step counter", async () => {
    const server = new FakeServer(5);
    const c = makeController(server);
    await c.start({});
    await c.choose("current");
    expect(c.state.prompt?.step).toBe(2);
    // UI step counter equals the server's pending step / log length semantics
    expect(c.state.stepCount).toBe(server.step);
  });

  it("a double-click produces exactly one request", async () => {
    const server = new FakeServer(5);
    const c = makeController(server);
    await c.start({});
    // second call fires while the first is still in flight: controls locked
    await Promise.all([c.choose("current"), c.choose("current")]);
    expect(server.postCalls).toBe(1);
    expect(c.state.prompt?.step).toBe(2);
  });

  it("ignores clicks when no prompt is pending", async () => {
    const server = new FakeServer(5);
    const c = makeController(server);
    await c.choose("current"); // before start
    expect(server.postCalls).toBe(0);
  });

  it("re-syncs to the server's pending step on 409", async () => {
    const server = new FakeServer(5);
    const c = makeController(server);
    await c.start({});
    server.step = 3; // another client advanced the session behind our back
    await c.choose("previous");
    expect(c.state.phase).toBe("awaiting-feedback");
    expect(c.state.prompt?.step).toBe(3);
    expect(server.postCalls).toBe(1); // the stale post, no blind retry
  });

  it("finishes when the horizon is reached", async () => {
    const server = new FakeServer(3);
    const c = makeController(server);
    await c.start({});
    await c.choose("current"); // step 1
    await c.choose("current"); // step 2 -> finished
    expect(c.state.phase).toBe("finished");
    expect(c.canSubmit).toBe(false);
    expect(c.state.prompt).toBeNull();
  });

  it("network failure raises the retry banner without duplicating", async () => {
    const server = new FakeServer(5);
    const c = makeController(server);
    await c.start({});
    server.failNextWithNetworkError = true;
    await c.choose("current");
    expect(c.state.phase).toBe("error");
    expect(c.state.errorMessage).toContain("fetch failed");
    expect(server.postCalls).toBe(1); // failed attempt only, no auto-retry
    expect(server.rows).toBe(1); // nothing was applied server-side

    await c.retry();
    expect(server.postCalls).toBe(2); // exactly one more request
    expect(c.state.phase).toBe("awaiting-feedback");
    expect(c.state.prompt?.step).toBe(2);
  });

  it("retry is a no-op outside the error phase", async () => {
    const server = new FakeServer(5);
    const c = makeController(server);
    await c.start({});
    await c.retry();
    expect(server.postCalls).toBe(0);
  });

  it("treats 410 on submit as a finished session", async () => {
    const server = new FakeServer(2); // only the priming comparison
    const c = makeController(server);
    const api = {
      createSession: async () => ({
        session_id: "fake",
        status: "awaiting-feedback" as const,
        step: 1,
        horizon: 2,
        safety_box: false,
      }),
      getPrompt: vi
        .fn()
        .mockResolvedValueOnce(server.prompt())
        .mockRejectedValue(new ApiError(410, "session finished")),
      postFeedback: async () => {
        throw new ApiError(410, "session finished");
      },
      streamUrl: () => "ws://fake",
    } as unknown as SessionApi;
    const late = new SessionController(api);
    await late.start({});
    await late.choose("current");
    expect(late.state.phase).toBe("finished");
    void c;
  });
});
