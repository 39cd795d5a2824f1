// Wire types for the gateway protocol (schema cellnav-gateway/1).
// The client never computes simulation state: these shapes are read-only
// views produced by the server.

export type Direction = "N" | "E" | "S" | "W";

export interface Occupancy {
  state: "free" | "reserved" | "occupied";
  robot: number | null;
}

export interface DistPreview {
  dist: number;
  dir: Direction | "self" | null;
}

export interface CellView {
  id: number;
  coord: [number, number];
  status: "correct" | "failed";
  occupancy: Occupancy;
  dist_preview: DistPreview | null;
}

export interface RobotView {
  id: number;
  mode: "afada" | "selfnav";
  pos: [number, number] | { from: [number, number]; to: [number, number] } | null;
  steps: number;
  done: boolean;
  goals_left: number;
}

export interface Snapshot {
  type: "snapshot";
  t: number;
  grid: CellView[];
  robots: RobotView[];
}

export interface Hello {
  type: "hello";
  schema: string;
  snapshot_ms: number;
  speed: number;
  paused: boolean;
}

export interface TraceEvent {
  type: "event";
  t: number;
  seq: number;
  kind: string;
  src: string | null;
  dst: string | null;
  payload: Record<string, unknown> | null;
  cause: number | null;
}

export interface Reply {
  type: "ack" | "err";
  ref: unknown;
  [key: string]: unknown;
}

export type ServerMessage = Hello | Snapshot | TraceEvent | Reply;

export type CommandOp =
  | "add_cell" | "remove_cell" | "fail_cell" | "recover_cell"
  | "spawn_robot" | "set_goals"
  | "pause" | "resume" | "step" | "set_speed"
  | "inspect_cell";

export interface Command {
  type: "cmd";
  op: CommandOp;
  args: Record<string, unknown>;
  ref: number;
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const type = (msg as { type?: unknown }).type;
  if (type === "hello" || type === "snapshot" || type === "event" ||
      type === "ack" || type === "err") {
    return msg as ServerMessage;
  }
  return null;
}
