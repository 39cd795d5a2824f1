// Gateway session: one socket, a command queue with per-command refs
// for ack matching, and reconnect with exponential backoff. While the
// socket is down every control is inert (send() refuses).

import type { Command, CommandOp, ServerMessage } from "./protocol.js";
import { parseServerMessage } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientHooks {
  onMessage(msg: ServerMessage): void;
  onStatus(status: "connecting" | "open" | "closed"): void;
}

export const BACKOFF_BASE_MS = 500;
export const BACKOFF_MAX_MS = 8000;

export function backoffDelay(attempt: number): number {
  return Math.min(BACKOFF_MAX_MS, BACKOFF_BASE_MS * 2 ** attempt);
}

export class GatewayClient {
  private socket: SocketLike | null = null;
  private nextRef = 1;
  private attempt = 0;
  private closedByUser = false;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(private url: string, private hooks: ClientHooks,
              private factory: SocketFactory,
              private schedule: (fn: () => void, ms: number) => ReturnType<typeof setTimeout> = setTimeout) {}

  connect(): void {
    this.closedByUser = false;
    this.hooks.onStatus("connecting");
    const ws = this.factory(this.url);
    this.socket = ws;
    ws.onopen = () => {
      this.attempt = 0;
      this.hooks.onStatus("open");
    };
    ws.onmessage = (ev) => {
      const msg = parseServerMessage(ev.data);
      if (msg) this.hooks.onMessage(msg);
    };
    ws.onerror = () => { /* onclose follows */ };
    ws.onclose = () => {
      this.socket = null;
      this.hooks.onStatus("closed");
      if (!this.closedByUser) {
        const delay = backoffDelay(this.attempt);
        this.attempt += 1;
        this.timer = this.schedule(() => this.connect(), delay);
      }
    };
  }

  get connected(): boolean {
    return this.socket !== null;
  }

  /** Sends a command; returns its ref, or null while disconnected. */
  send(op: CommandOp, args: Record<string, unknown> = {}): number | null {
    if (!this.socket) return null;
    const cmd: Command = { type: "cmd", op, args, ref: this.nextRef };
    this.nextRef += 1;
    this.socket.send(JSON.stringify(cmd));
    return cmd.ref;
  }

  close(): void {
    this.closedByUser = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.socket?.close();
    this.socket = null;
  }
}
