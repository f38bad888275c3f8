import { describe, expect, it } from "vitest";
import { NavClient } from "../src/client.js";
import type { ConnectionStatus, SocketLike } from "../src/client.js";
import type { ServerMessage } from "../src/types.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closeCalled = false;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onerror: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closeCalled = true;
    this.onclose?.();
  }

  // --- test drivers ---
  open(): void {
    this.onopen?.();
  }

  message(data: string): void {
    this.onmessage?.({ data });
  }

  drop(): void {
    this.onclose?.();
  }
}

function harness(retryDelayMs = 1000) {
  const sockets: FakeSocket[] = [];
  const timers: Array<{ fn: () => void; ms: number }> = [];
  const statuses: ConnectionStatus[] = [];
  const messages: ServerMessage[] = [];
  const notices: string[] = [];
  const client = new NavClient(
    "ws://test/sessions/s1/ws",
    {
      onStatus: (s) => statuses.push(s),
      onMessage: (m) => messages.push(m),
      onNotice: (n) => notices.push(n),
    },
    {
      socketFactory: () => {
        const s = new FakeSocket();
        sockets.push(s);
        return s;
      },
      retryDelayMs,
      schedule: (fn, ms) => timers.push({ fn, ms }),
    },
  );
  return { client, sockets, timers, statuses, messages, notices };
}

const lostScene = JSON.stringify({
  kind: "SCENE_UPDATE", t: 2, state: "LOST", alert: "CLEAR",
  margin_mm: 10, instruments: [], clips: [],
});
const navScene = JSON.stringify({
  kind: "SCENE_UPDATE", t: 3, state: "NAVIGATING", alert: "CLEAR",
  margin_mm: 10, instruments: [], clips: [],
});

describe("connection lifecycle", () => {
  it("reports connecting then open", () => {
    const h = harness();
    h.client.connect();
    expect(h.statuses).toEqual(["connecting"]);
    h.sockets[0].open();
    expect(h.statuses).toEqual(["connecting", "open"]);
  });

  it("makes an unplanned drop visible and reconnects after the delay", () => {
    const h = harness(250);
    h.client.connect();
    h.sockets[0].open();
    h.sockets[0].drop();
    expect(h.client.status).toBe("retry");
    expect(h.statuses).toContain("retry");
    expect(h.timers.length).toBe(1);
    expect(h.timers[0].ms).toBe(250);
    h.timers[0].fn();
    expect(h.sockets.length).toBe(2);
    h.sockets[1].open();
    expect(h.client.status).toBe("open");
  });

  it("does not reconnect after a user close", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.client.close();
    expect(h.sockets[0].closeCalled).toBe(true);
    expect(h.client.status).toBe("closed");
    expect(h.timers.length).toBe(0);
  });
});

describe("messages", () => {
  it("decodes and forwards server messages", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.sockets[0].message(navScene);
    expect(h.messages.length).toBe(1);
    expect(h.messages[0].kind).toBe("SCENE_UPDATE");
  });

  it("flags undecodable payloads instead of throwing", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.sockets[0].message("{not json");
    h.sockets[0].message(JSON.stringify({ kind: "NO_SUCH_KIND" }));
    expect(h.messages.length).toBe(0);
    expect(h.notices.length).toBe(2);
  });
});

describe("commands", () => {
  it("sends steer with device, position and orientation", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    expect(h.client.steer([1, 2, 3])).toBe(true);
    const sent = JSON.parse(h.sockets[0].sent[0]);
    expect(sent).toEqual({
      cmd: "steer", device: "POINTER", p: [1, 2, 3], q: [1, 0, 0, 0],
    });
  });

  it("ignores steering while navigation is LOST", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.sockets[0].message(lostScene);
    expect(h.client.steer([1, 2, 3])).toBe(false);
    expect(h.sockets[0].sent.length).toBe(0);
    expect(h.notices.some((n) => n.includes("lost"))).toBe(true);
  });

  it("resumes steering when navigation recovers", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.sockets[0].message(lostScene);
    h.sockets[0].message(navScene);
    expect(h.client.steer([0, 0, 0])).toBe(true);
    expect(h.sockets[0].sent.length).toBe(1);
  });

  it("still forwards clip requests in LOST so the engine can reject visibly", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.sockets[0].message(lostScene);
    expect(h.client.placeClip()).toBe(true);
    expect(JSON.parse(h.sockets[0].sent[0])).toEqual({ cmd: "clip" });
  });

  it("sends margin changes", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].open();
    h.client.setMargin(7);
    expect(JSON.parse(h.sockets[0].sent[0])).toEqual({ cmd: "margin", margin_mm: 7 });
  });

  it("refuses to send while not open", () => {
    const h = harness();
    h.client.connect(); // connecting, socket not open yet
    expect(h.client.steer([0, 0, 0])).toBe(false);
    expect(h.client.placeClip()).toBe(false);
    expect(h.sockets[0].sent.length).toBe(0);
  });
});
