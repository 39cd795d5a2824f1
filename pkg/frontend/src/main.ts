// Console bootstrap: socket, canvas, toolbar, inspect panel, feed.

import { GatewayClient } from "./client.js";
import { CELL_PX, draw, gridBounds, pixelToCoord } from "./render.js";
import {
  applyServerMessage, connectionLost, dropToast, initialModel,
  pendingCoords, selectCell, trackCommand, ViewModel,
} from "./state.js";
import type { CommandOp, ServerMessage } from "./protocol.js";

type Tool = "inspect" | "add" | "remove" | "fail" | "recover" | "spawn" | "goal";

const params = new URLSearchParams(location.search);
const wsUrl = params.get("gateway")
  ?? `ws://${location.host || "127.0.0.1:8700"}/ws`;

let model: ViewModel = initialModel();
let tool: Tool = "inspect";
let spawnCounter = 100;

const canvas = document.getElementById("grid") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const panelEl = document.getElementById("panel")!;
const feedEl = document.getElementById("feed")!;
const toastEl = document.getElementById("toast")!;

const client = new GatewayClient(wsUrl, {
  onMessage(msg: ServerMessage) {
    model = applyServerMessage(model, msg);
    render();
  },
  onStatus(status) {
    model = status === "closed" ? connectionLost(model)
      : { ...model, connection: status };
    render();
  },
}, (url) => new WebSocket(url) as unknown as
  import("./client.js").SocketLike);

function send(op: CommandOp, args: Record<string, unknown> = {},
              coord?: [number, number]): void {
  const ref = client.send(op, args);
  if (ref === null) return; // disconnected: controls are inert
  model = trackCommand(model, { ref, op, coord, sentAt: Date.now() });
  render();
}

canvas.addEventListener("click", (ev) => {
  if (!model.snapshot || model.connection !== "open") return;
  const rect = canvas.getBoundingClientRect();
  const origin = gridBounds(model.snapshot.grid);
  const [x, y] = pixelToCoord(ev.clientX - rect.left, ev.clientY - rect.top,
                              origin);
  const occupied = model.snapshot.grid.some(
    (c) => c.coord[0] === x && c.coord[1] === y);
  switch (tool) {
    case "inspect":
      model = selectCell(model, occupied ? [x, y] : null);
      if (occupied) send("inspect_cell", { x, y }, [x, y]);
      break;
    case "add":
      if (!occupied) send("add_cell", { x, y }, [x, y]);
      break;
    case "remove":
      if (occupied) send("remove_cell", { x, y }, [x, y]);
      break;
    case "fail":
      if (occupied) send("fail_cell", { x, y }, [x, y]);
      break;
    case "recover":
      if (occupied) send("recover_cell", { x, y }, [x, y]);
      break;
    case "spawn":
      if (occupied) {
        send("spawn_robot", { x, y, mode: "afada", id: spawnCounter, goals: [] },
             [x, y]);
        spawnCounter += 1;
      }
      break;
    case "goal": {
      const robotField = document.getElementById("robot-id") as HTMLInputElement;
      const rid = Number(robotField.value);
      if (occupied && Number.isFinite(rid)) {
        send("set_goals", { robot: rid, goals: [[x, y]] });
      }
      break;
    }
  }
  render();
});

for (const button of document.querySelectorAll<HTMLButtonElement>("[data-tool]")) {
  button.addEventListener("click", () => {
    tool = button.dataset.tool as Tool;
    for (const other of document.querySelectorAll("[data-tool]")) {
      other.classList.toggle("active", other === button);
    }
  });
}

document.getElementById("pause")!.addEventListener("click", () => send("pause"));
document.getElementById("resume")!.addEventListener("click", () => send("resume"));
document.getElementById("step")!.addEventListener("click",
  () => send("step", { ms: 1000 }));
const speedInput = document.getElementById("speed") as HTMLInputElement;
speedInput.addEventListener("change",
  () => send("set_speed", { speed: Number(speedInput.value) }));

function render(): void {
  const snap = model.snapshot;
  if (snap) {
    const b = gridBounds(snap.grid);
    canvas.width = (b.x1 - b.x0 + 1) * CELL_PX;
    canvas.height = (b.y1 - b.y0 + 1) * CELL_PX;
  }
  draw(ctx, canvas.width, canvas.height, snap, model.selected,
       pendingCoords(model), model.connection === "open");
  statusEl.textContent =
    model.connection === "open"
      ? `t=${snap ? (snap.t / 1000).toFixed(1) : "?"}s ` +
        `${model.paused ? "paused" : `x${model.speed}`}`
      : model.connection === "connecting" ? "connecting..." : "disconnected (retrying)";
  statusEl.className = model.connection;
  renderPanel();
  renderFeed();
  renderToast();
}

function renderPanel(): void {
  const d = model.inspect;
  if (!model.selected || !d) {
    panelEl.textContent = "click a cell to inspect";
    return;
  }
  const lines: string[] = [];
  lines.push(`cell ${d.cell} @ (${d.coord[0]},${d.coord[1]}) — ${d.status}`);
  lines.push(`occupancy: ${d.occupancy.state}` +
    (d.occupancy.robot !== null ? ` by robot ${d.occupancy.robot}` : ""));
  if (d.policy.one_way) lines.push(`one-way ${d.policy.one_way}`);
  if (d.policy.parking) lines.push("parking space");
  lines.push("links:");
  for (const [dir, link] of Object.entries(d.links)) {
    const age = link.heartbeat_age_ms === null ? "-" : `${link.heartbeat_age_ms}ms`;
    lines.push(`  ${dir}: phys=${link.physical ? "y" : "n"} ` +
      `virt=${link.virtual ? "y" : "n"} hb-age=${age}`);
  }
  lines.push("routing (dist / next):");
  const entries = Object.entries(d.dist);
  for (const [cellId, dist] of entries.slice(0, 24)) {
    lines.push(`  -> ${cellId}: ${dist} via ${d.next[cellId]}`);
  }
  if (entries.length > 24) lines.push(`  ... ${entries.length - 24} more`);
  panelEl.textContent = lines.join("\n");
}

function renderFeed(): void {
  const tail = model.feed.slice(-14).reverse();
  feedEl.textContent = tail
    .map((e) => `${(e.t / 1000).toFixed(2)}s #${e.seq} ${e.kind}` +
      (e.src ? ` ${e.src}->${e.dst ?? "?"}` : ""))
    .join("\n");
}

let toastTimer: ReturnType<typeof setTimeout> | null = null;

function renderToast(): void {
  if (model.toasts.length === 0) {
    toastEl.classList.remove("visible");
    return;
  }
  toastEl.textContent = model.toasts[0];
  toastEl.classList.add("visible");
  if (toastTimer === null) {
    toastTimer = setTimeout(() => {
      toastTimer = null;
      model = dropToast(model);
      render();
    }, 3500);
  }
}

client.connect();
render();
