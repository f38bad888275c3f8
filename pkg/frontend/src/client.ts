/** WebSocket client for a live navigation session.
 *
 * Owns the connection lifecycle: connect, decode SCENE_UPDATE and reply
 * messages, send steer/clip/margin commands, and reconnect automatically
 * when the link drops. The socket constructor is injectable so tests can
 * drive the client with a fake.
 */

import { parseServerMessage } from "./types.js";
import type { NavState, Quat, ServerMessage, Vec3 } from "./types.js";

/** Subset of the WebSocket API the client needs. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionStatus = "connecting" | "open" | "retry" | "closed";

export interface NavClientEvents {
  onStatus?: (status: ConnectionStatus) => void;
  onMessage?: (msg: ServerMessage) => void;
  /** Local notices (commands suppressed client-side, decode failures). */
  onNotice?: (text: string) => void;
}

export interface NavClientOptions {
  socketFactory?: SocketFactory;
  retryDelayMs?: number;
  /** Injectable timer for tests. */
  schedule?: (fn: () => void, ms: number) => void;
}

const defaultFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as SocketLike;

export class NavClient {
  readonly url: string;
  private readonly events: NavClientEvents;
  private readonly factory: SocketFactory;
  private readonly retryDelayMs: number;
  private readonly schedule: (fn: () => void, ms: number) => void;

  private sock: SocketLike | null = null;
  private closedByUser = false;
  private lastState: NavState | null = null;
  status: ConnectionStatus = "closed";

  constructor(url: string, events: NavClientEvents = {}, opts: NavClientOptions = {}) {
    this.url = url;
    this.events = events;
    this.factory = opts.socketFactory ?? defaultFactory;
    this.retryDelayMs = opts.retryDelayMs ?? 1000;
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
  }

  connect(): void {
    this.closedByUser = false;
    this.open();
  }

  private open(): void {
    this.setStatus("connecting");
    const sock = this.factory(this.url);
    this.sock = sock;
    sock.onopen = () => this.setStatus("open");
    sock.onmessage = (ev) => this.handleData(ev.data);
    sock.onerror = () => {
      /* onclose follows; nothing to do here */
    };
    sock.onclose = () => {
      this.sock = null;
      if (this.closedByUser) {
        this.setStatus("closed");
        return;
      }
      // Unplanned drop: make the retry visible, then try again.
      this.setStatus("retry");
      this.schedule(() => {
        if (!this.closedByUser) this.open();
      }, this.retryDelayMs);
    };
  }

  close(): void {
    this.closedByUser = true;
    if (this.sock) this.sock.close();
    else this.setStatus("closed");
  }

  private setStatus(status: ConnectionStatus): void {
    this.status = status;
    this.events.onStatus?.(status);
  }

  private handleData(data: unknown): void {
    if (typeof data !== "string") return;
    const msg = parseServerMessage(data);
    if (msg === null) {
      this.events.onNotice?.("unreadable message from server");
      return;
    }
    if (msg.kind === "SCENE_UPDATE") this.lastState = msg.state;
    this.events.onMessage?.(msg);
  }

  private send(payload: Record<string, unknown>): boolean {
    if (this.status !== "open" || this.sock === null) return false;
    this.sock.send(JSON.stringify(payload));
    return true;
  }

  /** Move an instrument. Suppressed while navigation is LOST — steering a
   * scene the engine isn't tracking would only desynchronize the view. */
  steer(p: Vec3, device = "POINTER", q: Quat = [1, 0, 0, 0]): boolean {
    if (this.lastState === "LOST") {
      this.events.onNotice?.("steering ignored: navigation lost");
      return false;
    }
    return this.send({ cmd: "steer", device, p, q });
  }

  /** Request a clip at the pointer tip. Always forwarded: the engine is the
   * authority on whether digitization is possible, and its CLIP_REJECTED
   * reply tells the user why. */
  placeClip(): boolean {
    return this.send({ cmd: "clip" });
  }

  setMargin(marginMm: number): boolean {
    return this.send({ cmd: "margin", margin_mm: marginMm });
  }

  detach(): boolean {
    return this.send({ cmd: "detach" });
  }

  reattach(): boolean {
    return this.send({ cmd: "reattach" });
  }
}
