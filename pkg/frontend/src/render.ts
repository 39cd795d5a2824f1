// Canvas painting: immediate-mode redraw from the latest snapshot.
// Everything here is a pure function of (snapshot, selection, pending);
// the grid is small, so no incremental diffing.

import type { CellView, Direction, RobotView, Snapshot } from "./protocol.js";

export const CELL_PX = 56;
export const GAP_PX = 4;

export const STATUS_FILL: Record<string, string> = {
  correct: "#e8f0e8",
  failed: "#d9534f",
};

export const OCCUPANCY_RING: Record<string, string | null> = {
  free: null,
  reserved: "#e8a33d",
  occupied: "#4a78c2",
};

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function gridBounds(cells: CellView[]): { x0: number; y0: number;
                                                 x1: number; y1: number } {
  let x0 = Infinity, y0 = Infinity, x1 = -Infinity, y1 = -Infinity;
  for (const c of cells) {
    x0 = Math.min(x0, c.coord[0]);
    y0 = Math.min(y0, c.coord[1]);
    x1 = Math.max(x1, c.coord[0]);
    y1 = Math.max(y1, c.coord[1]);
  }
  if (cells.length === 0) return { x0: 0, y0: 0, x1: 0, y1: 0 };
  return { x0, y0, x1, y1 };
}

export function cellBox(coord: [number, number],
                        origin: { x0: number; y0: number }): Box {
  return {
    x: (coord[0] - origin.x0) * CELL_PX + GAP_PX,
    y: (coord[1] - origin.y0) * CELL_PX + GAP_PX,
    w: CELL_PX - 2 * GAP_PX,
    h: CELL_PX - 2 * GAP_PX,
  };
}

/** Inverse of cellBox: canvas pixel to grid coordinate. */
export function pixelToCoord(px: number, py: number,
                             origin: { x0: number; y0: number }): [number, number] {
  return [Math.floor(px / CELL_PX) + origin.x0,
          Math.floor(py / CELL_PX) + origin.y0];
}

const ARROW_VEC: Record<Direction, [number, number]> = {
  N: [0, -1], E: [1, 0], S: [0, 1], W: [-1, 0],
};

/** Arrow segment for the next-hop preview toward the inspected goal. */
export function arrowSegment(box: Box, dir: Direction):
    { x1: number; y1: number; x2: number; y2: number } {
  const cx = box.x + box.w / 2;
  const cy = box.y + box.h / 2;
  const [dx, dy] = ARROW_VEC[dir];
  const len = box.w * 0.32;
  return { x1: cx - dx * len, y1: cy - dy * len,
           x2: cx + dx * len, y2: cy + dy * len };
}

export function robotCenter(robot: RobotView,
                            origin: { x0: number; y0: number }):
    { x: number; y: number } | null {
  if (robot.pos === null) return null;
  if (Array.isArray(robot.pos)) {
    const b = cellBox(robot.pos, origin);
    return { x: b.x + b.w / 2, y: b.y + b.h / 2 };
  }
  const a = cellBox(robot.pos.from, origin);
  const b = cellBox(robot.pos.to, origin);
  return { x: (a.x + b.x) / 2 + a.w / 2, y: (a.y + b.y) / 2 + a.h / 2 };
}

// Minimal surface of CanvasRenderingContext2D used below, so tests can
// record operations without a DOM.
export interface Paint {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  clearRect(x: number, y: number, w: number, h: number): void;
}

export function draw(ctx: Paint, width: number, height: number,
                     snapshot: Snapshot | null,
                     selected: [number, number] | null,
                     pending: Set<string>, connectionOpen: boolean): void {
  ctx.clearRect(0, 0, width, height);
  if (!snapshot) return;
  const origin = gridBounds(snapshot.grid);
  for (const cell of snapshot.grid) {
    const box = cellBox(cell.coord, origin);
    ctx.fillStyle = STATUS_FILL[cell.status] ?? "#ccc";
    if (!connectionOpen) ctx.fillStyle = "#d8d8d8";
    ctx.fillRect(box.x, box.y, box.w, box.h);
    const ring = OCCUPANCY_RING[cell.occupancy.state];
    if (ring) {
      ctx.strokeStyle = ring;
      ctx.lineWidth = 3;
      ctx.strokeRect(box.x + 2, box.y + 2, box.w - 4, box.h - 4);
    }
    if (pending.has(`${cell.coord[0]},${cell.coord[1]}`)) {
      ctx.strokeStyle = "#999";
      ctx.lineWidth = 1;
      ctx.strokeRect(box.x - 2, box.y - 2, box.w + 4, box.h + 4);
    }
    if (selected && selected[0] === cell.coord[0] && selected[1] === cell.coord[1]) {
      ctx.strokeStyle = "#222";
      ctx.lineWidth = 2;
      ctx.strokeRect(box.x, box.y, box.w, box.h);
    }
    const preview = cell.dist_preview;
    if (preview && preview.dir && preview.dir !== "self") {
      const seg = arrowSegment(box, preview.dir as Direction);
      ctx.strokeStyle = "#2f7d32";
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.moveTo(seg.x1, seg.y1);
      ctx.lineTo(seg.x2, seg.y2);
      ctx.stroke();
      ctx.font = "9px sans-serif";
      ctx.fillStyle = "#2f7d32";
      ctx.fillText(String(preview.dist), box.x + 3, box.y + 11);
    }
  }
  for (const robot of snapshot.robots) {
    const at = robotCenter(robot, origin);
    if (!at) continue;
    ctx.beginPath();
    ctx.arc(at.x, at.y, CELL_PX * 0.22, 0, Math.PI * 2);
    ctx.fillStyle = robot.mode === "afada" ? "#6a3fb5" : "#777";
    ctx.fill();
    ctx.fillStyle = "#fff";
    ctx.font = "11px sans-serif";
    ctx.fillText(String(robot.id), at.x - 3, at.y + 4);
  }
}
