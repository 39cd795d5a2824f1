import { describe, expect, it } from "vitest";

import {
  applyServerMessage, connectionLost, FEED_LIMIT, feedIsSeqMonotonic,
  initialModel, pendingCoords, selectCell, trackCommand,
} from "../src/state.js";
import type { Snapshot, TraceEvent } from "../src/protocol.js";

const snapshot: Snapshot = {
  type: "snapshot",
  t: 4000,
  grid: [
    { id: 0, coord: [0, 0], status: "correct",
      occupancy: { state: "occupied", robot: 0 }, dist_preview: null },
    { id: 1, coord: [1, 0], status: "failed",
      occupancy: { state: "free", robot: null },
      dist_preview: { dist: 3, dir: "W" } },
  ],
  robots: [{ id: 0, mode: "afada", pos: [0, 0], steps: 2, done: false,
             goals_left: 1 }],
};

function event(seq: number): TraceEvent {
  return { type: "event", t: seq * 10, seq, kind: "deliver",
           src: "cell:0", dst: "cell:1", payload: null, cause: null };
}

describe("view model", () => {
  it("hello opens the connection and adopts pacing", () => {
    const m = applyServerMessage(initialModel(), {
      type: "hello", schema: "cellnav-gateway/1", snapshot_ms: 200,
      speed: 0, paused: true,
    });
    expect(m.connection).toBe("open");
    expect(m.paused).toBe(true);
    expect(m.schema).toBe("cellnav-gateway/1");
  });

  it("snapshot replaces wholesale, never merged client-side", () => {
    let m = applyServerMessage(initialModel(), snapshot);
    expect(m.snapshot?.grid.length).toBe(2);
    const next: Snapshot = { ...snapshot, t: 5000, grid: [snapshot.grid[0]] };
    m = applyServerMessage(m, next);
    expect(m.snapshot?.t).toBe(5000);
    expect(m.snapshot?.grid.length).toBe(1);
  });

  it("event feed keeps trace order and drops duplicates", () => {
    let m = initialModel();
    for (const seq of [1, 2, 2, 3, 1, 4]) {
      m = applyServerMessage(m, event(seq));
    }
    expect(m.feed.map((e) => e.seq)).toEqual([1, 2, 3, 4]);
    expect(feedIsSeqMonotonic(m)).toBe(true);
  });

  it("event feed is bounded", () => {
    let m = initialModel();
    for (let seq = 0; seq < FEED_LIMIT + 50; seq++) {
      m = applyServerMessage(m, event(seq));
    }
    expect(m.feed.length).toBe(FEED_LIMIT);
    expect(m.feed[0].seq).toBe(50);
  });

  it("ack clears the pending command", () => {
    let m = trackCommand(initialModel(),
                         { ref: 7, op: "add_cell", coord: [2, 1], sentAt: 0 });
    expect(pendingCoords(m).has("2,1")).toBe(true);
    m = applyServerMessage(m, { type: "ack", ref: 7 });
    expect(m.pending).toEqual([]);
    expect(pendingCoords(m).size).toBe(0);
    expect(m.toasts).toEqual([]);
  });

  it("nack surfaces the engine reason as a toast", () => {
    let m = trackCommand(initialModel(),
                         { ref: 9, op: "remove_cell", coord: [0, 0], sentAt: 0 });
    m = applyServerMessage(m, { type: "err", ref: 9, error: "robot-present" });
    expect(m.pending).toEqual([]);
    expect(m.toasts).toEqual(["remove_cell: robot-present"]);
  });

  it("inspect ack fills the panel model", () => {
    let m = trackCommand(initialModel(),
                         { ref: 3, op: "inspect_cell", coord: [0, 0], sentAt: 0 });
    m = applyServerMessage(m, {
      type: "ack", ref: 3, cell: 0, coord: [0, 0], status: "correct",
      occupancy: { state: "free", robot: null }, dist: { "0": 0 },
      next: { "0": "self" }, links: {}, policy: { one_way: null, parking: false },
    } as never);
    expect(m.inspect?.cell).toBe(0);
    expect(m.inspect?.dist["0"]).toBe(0);
  });

  it("selection is cleared when deselecting", () => {
    let m = selectCell(initialModel(), [1, 1]);
    expect(m.selected).toEqual([1, 1]);
    m = selectCell(m, null);
    expect(m.selected).toBeNull();
    expect(m.inspect).toBeNull();
  });

  it("losing the connection clears pending commands (controls inert)", () => {
    let m = trackCommand(initialModel(),
                         { ref: 1, op: "fail_cell", coord: [1, 0], sentAt: 0 });
    m = connectionLost(m);
    expect(m.connection).toBe("closed");
    expect(m.pending).toEqual([]);
  });
});
