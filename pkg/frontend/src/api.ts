/**
 * Typed client for the session service. Every response is validated with zod
 * so a drifting server surfaces as a clear error instead of silent NaNs.
 */

import { z } from "zod";

export const CreateResponseSchema = z.object({
  session_id: z.string(),
  status: z.enum(["awaiting-feedback", "advancing", "finished"]),
  step: z.number().int(),
  horizon: z.number().int(),
  safety_box: z.boolean(),
});
export type CreateResponse = z.infer<typeof CreateResponseSchema>;

export const OptionCardSchema = z.object({
  observables: z.array(z.number()),
});

export const PromptSchema = z.object({
  session_id: z.string(),
  step: z.number().int(),
  current: OptionCardSchema,
  previous: OptionCardSchema,
  applied_input: z.array(z.number()),
});
export type Prompt = z.infer<typeof PromptSchema>;

export const FeedbackAckSchema = z.object({
  session_id: z.string(),
  status: z.enum(["awaiting-feedback", "advancing", "finished"]),
  step: z.number().int(),
  input: z.array(z.number()),
  clamped: z.boolean(),
});
export type FeedbackAck = z.infer<typeof FeedbackAckSchema>;

export const LogRowSchema = z.object({
  k: z.number().int(),
  observables: z.array(z.number()),
  applied_input: z.array(z.number()),
  feedback: z.number().int().nullable(),
  clamped: z.boolean(),
});
export type LogRow = z.infer<typeof LogRowSchema>;

export const LogSchema = z.object({
  session_id: z.string(),
  status: z.string(),
  safety_box: z.boolean(),
  rows: z.array(LogRowSchema),
});
export type Log = z.infer<typeof LogSchema>;

export type Choice = "current" | "previous";

/** HTTP-level failure carrying the server's status code. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  url: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
  },
) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
  text(): Promise<string>;
}>;

async function request(
  fetchFn: FetchLike,
  url: string,
  init?: Parameters<FetchLike>[1],
): Promise<unknown> {
  const res = await fetchFn(url, init);
  if (!res.ok) {
    let detail = "";
    try {
      const body = (await res.json()) as { detail?: unknown };
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body);
    } catch {
      detail = `HTTP ${res.status}`;
    }
    throw new ApiError(res.status, detail);
  }
  return res.json();
}

export class SessionApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (...args) =>
      fetch(...(args as Parameters<typeof fetch>)),
  ) {}

  async createSession(body: Record<string, unknown>): Promise<CreateResponse> {
    const raw = await request(this.fetchFn, `${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return CreateResponseSchema.parse(raw);
  }

  async getPrompt(sessionId: string): Promise<Prompt> {
    const raw = await request(
      this.fetchFn,
      `${this.baseUrl}/sessions/${sessionId}/prompt`,
    );
    return PromptSchema.parse(raw);
  }

  async postFeedback(
    sessionId: string,
    step: number,
    choice: Choice,
  ): Promise<FeedbackAck> {
    const raw = await request(
      this.fetchFn,
      `${this.baseUrl}/sessions/${sessionId}/feedback`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ step, choice }),
      },
    );
    return FeedbackAckSchema.parse(raw);
  }

  async getLog(sessionId: string): Promise<Log> {
    const raw = await request(
      this.fetchFn,
      `${this.baseUrl}/sessions/${sessionId}/log`,
    );
    return LogSchema.parse(raw);
  }

  /** ws:// or wss:// URL of the row stream for a session. */
  streamUrl(sessionId: string): string {
    const ws = this.baseUrl.replace(/^http/, "ws");
    return `${ws}/sessions/${sessionId}/stream`;
  }
}
