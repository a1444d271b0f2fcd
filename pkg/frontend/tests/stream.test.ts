import { describe, expect, it, vi } from "vitest";

import { LogRow } from "../src/api.js";
import { openRowStream, WebSocketLike } from "../src/stream.js";

class FakeSocket implements WebSocketLike {
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  closed = false;

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  emit(row: unknown): void {
    this.onmessage?.({ data: JSON.stringify(row) });
  }
}

function row(k: number): LogRow {
  return {
    k,
    observables: [20 + k],
    applied_input: [30],
    feedback: k === 0 ? null : 1,
    clamped: false,
  };
}

describe("openRowStream", () => {
  it("forwards replayed and live rows in order", () => {
    const socket = new FakeSocket();
    const rows: LogRow[] = [];
    openRowStream("ws://x", { onRow: (r) => rows.push(r) }, () => socket);
    socket.emit(row(0));
    socket.emit(row(1));
    socket.emit(row(2));
    expect(rows.map((r) => r.k)).toEqual([0, 1, 2]);
    expect(rows[0]!.feedback).toBeNull();
  });

  it("reports close exactly once via onClose", () => {
    const socket = new FakeSocket();
    const onClose = vi.fn();
    openRowStream("ws://x", { onRow: () => {}, onClose }, () => socket);
    socket.close();
    expect(onClose).toHaveBeenCalledTimes(1);
  });

  it("closing the handle closes the socket", () => {
    const socket = new FakeSocket();
    const handle = openRowStream("ws://x", { onRow: () => {} }, () => socket);
    handle.close();
    expect(socket.closed).toBe(true);
  });

  it("surfaces malformed rows through onError without crashing", () => {
    const socket = new FakeSocket();
    const rows: LogRow[] = [];
    const errors: string[] = [];
    openRowStream(
      "ws://x",
      { onRow: (r) => rows.push(r), onError: (m) => errors.push(m) },
      () => socket,
    );
    socket.onmessage?.({ data: "not json" });
    socket.emit({ k: "zero" });
    socket.emit(row(0));
    expect(errors).toHaveLength(2);
    expect(rows.map((r) => r.k)).toEqual([0]);
  });
});
