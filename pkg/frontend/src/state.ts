// View model: the latest snapshot plus UI-only concerns (selection,
// pending command acks, the event feed tail). Pure reducers -- no
// simulation logic lives on the client, and rendering is a function of
// (snapshot, selection) alone.

import type { Reply, ServerMessage, Snapshot, TraceEvent } from "./protocol.js";

export const FEED_LIMIT = 200;

export interface PendingCommand {
  ref: number;
  op: string;
  coord?: [number, number];
  sentAt: number;
}

export interface InspectDetail {
  cell: number;
  coord: [number, number];
  status: string;
  occupancy: { state: string; robot: number | null };
  dist: Record<string, number>;
  next: Record<string, string>;
  links: Record<string, { physical: boolean; virtual: boolean;
                          heartbeat_age_ms: number | null }>;
  policy: { one_way: string | null; parking: boolean };
}

export interface ViewModel {
  connection: "connecting" | "open" | "closed";
  schema: string | null;
  paused: boolean;
  speed: number;
  snapshot: Snapshot | null;
  selected: [number, number] | null;
  inspect: InspectDetail | null;
  pending: PendingCommand[];
  feed: TraceEvent[];
  toasts: string[];
  lastSeq: number;
}

export function initialModel(): ViewModel {
  return {
    connection: "connecting",
    schema: null,
    paused: false,
    speed: 1,
    snapshot: null,
    selected: null,
    inspect: null,
    pending: [],
    feed: [],
    toasts: [],
    lastSeq: -1,
  };
}

export function applyServerMessage(model: ViewModel, msg: ServerMessage): ViewModel {
  switch (msg.type) {
    case "hello":
      return { ...model, connection: "open", schema: msg.schema,
               paused: msg.paused, speed: msg.speed };
    case "snapshot":
      return { ...model, snapshot: msg };
    case "event": {
      // the feed mirrors trace order: seq strictly increases
      if (msg.seq <= model.lastSeq) return model;
      const feed = [...model.feed, msg];
      if (feed.length > FEED_LIMIT) feed.splice(0, feed.length - FEED_LIMIT);
      return { ...model, feed, lastSeq: msg.seq };
    }
    case "ack":
    case "err":
      return applyReply(model, msg);
  }
}

function applyReply(model: ViewModel, reply: Reply): ViewModel {
  const pending = model.pending.filter((p) => p.ref !== reply.ref);
  const done = model.pending.find((p) => p.ref === reply.ref);
  let next: ViewModel = { ...model, pending };
  if (reply.type === "err") {
    const reason = (reply as { error?: string }).error ?? "rejected";
    const what = done ? done.op : "command";
    next = { ...next, toasts: [...model.toasts, `${what}: ${reason}`] };
  } else if (done?.op === "inspect_cell" && "dist" in reply) {
    next = { ...next, inspect: reply as unknown as InspectDetail };
  } else if (done?.op === "pause") {
    next = { ...next, paused: true };
  } else if (done?.op === "resume") {
    next = { ...next, paused: false };
  } else if (done?.op === "set_speed" && "speed" in reply) {
    const speed = reply.speed as number;
    next = { ...next, speed, paused: speed === 0 };
  }
  return next;
}

export function trackCommand(model: ViewModel, cmd: PendingCommand): ViewModel {
  return { ...model, pending: [...model.pending, cmd] };
}

export function selectCell(model: ViewModel, coord: [number, number] | null): ViewModel {
  return { ...model, selected: coord, inspect: coord ? model.inspect : null };
}

export function connectionLost(model: ViewModel): ViewModel {
  // controls go inert; the stale snapshot stays visible but grayed
  return { ...model, connection: "closed", pending: [] };
}

export function dropToast(model: ViewModel): ViewModel {
  return { ...model, toasts: model.toasts.slice(1) };
}

/** A cell is rendered "pending" from command send until its ack. */
export function pendingCoords(model: ViewModel): Set<string> {
  const out = new Set<string>();
  for (const p of model.pending) {
    if (p.coord) out.add(`${p.coord[0]},${p.coord[1]}`);
  }
  return out;
}

export function feedIsSeqMonotonic(model: ViewModel): boolean {
  for (let i = 1; i < model.feed.length; i++) {
    if (model.feed[i].seq <= model.feed[i - 1].seq) return false;
  }
  return true;
}
