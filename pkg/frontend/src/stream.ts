/**
 * Row stream: thin wrapper over the session WebSocket. The server replays
 * the full prefix on connect and then pushes live rows, so feeding every
 * message into the ordered chart buffer makes a late subscribe identical to
 * a batch render of the log.
 */

import { LogRow, LogRowSchema } from "./api.js";

export interface WebSocketLike {
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
}

export type WsFactory = (url: string) => WebSocketLike;

export interface StreamHandle {
  close(): void;
}

export interface StreamCallbacks {
  onRow(row: LogRow): void;
  onClose?(): void;
  onError?(message: string): void;
}

export function openRowStream(
  url: string,
  callbacks: StreamCallbacks,
  factory: WsFactory = (u) => new WebSocket(u) as unknown as WebSocketLike,
): StreamHandle {
  const ws = factory(url);
  ws.onmessage = (ev) => {
    let parsed: unknown;
    try {
      parsed = JSON.parse(String(ev.data));
    } catch {
      callbacks.onError?.(`unparseable stream message: ${String(ev.data)}`);
      return;
    }
    const row = LogRowSchema.safeParse(parsed);
    if (!row.success) {
      callbacks.onError?.(`malformed stream row: ${row.error.message}`);
      return;
    }
    callbacks.onRow(row.data);
  };
  ws.onclose = () => callbacks.onClose?.();
  ws.onerror = () => callbacks.onError?.("stream connection error");
  return { close: () => ws.close() };
}
