"""WebSocket gateway: the single integration surface for the web UI.

Wire protocol (JSON messages, schema cellnav-gateway/1):

  server -> client
    {"type": "hello", "schema", "snapshot_ms", "speed", "paused"}
    {"type": "snapshot", "t", "grid": [{id, coord, status, occupancy,
        dist_preview}], "robots": [...]}      periodic and after commands
    {"type": "event", ...trace record}        streamed in trace order
    {"type": "ack"|"err", "ref", ...}         one per command

  client -> server
    {"type": "cmd", "op": <add_cell|remove_cell|fail_cell|recover_cell|
        spawn_robot|set_goals|pause|resume|step|set_speed|inspect_cell>,
     "args": {...}, "ref": <any>}

The engine runs on the server's event loop only: websocket handlers and
the pacing task touch it strictly sequentially, which is the serialized
command queue the engine's concurrency contract requires.
"""

from __future__ import annotations

import asyncio
import contextlib
import json

try:
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
except ImportError:  # pragma: no cover - serve extra not installed
    FastAPI = WebSocket = WebSocketDisconnect = None

from .agents import AFADA
from .engine import Engine
from .scenarios import RobotSpec, ScriptOp

SCHEMA = "cellnav-gateway/1"


class GatewaySession:
    def __init__(self, scenario, seed: int, *, speed: float = 1.0,
                 snapshot_ms: int = 200, overrides: dict | None = None) -> None:
        self.engine = Engine(scenario, seed, collect_trace=True,
                             overrides=overrides)
        self.engine.advance(0)  # spawn robots, fire the first broadcasts
        self.speed = speed
        self.paused = speed == 0
        self.snapshot_ms = snapshot_ms
        self.preview_goal: int | None = None
        self.clients: list = []
        self._cursor = len(self.engine._trace)

    # -- state ----------------------------------------------------------

    def snapshot(self) -> dict:
        eng = self.engine
        grid = []
        for cid in sorted(eng.grid.cell_ids()):
            node = eng.cells.get(cid)
            preview = None
            if self.preview_goal is not None and node is not None:
                dist = node.routing.dist.get(self.preview_goal)
                if dist is not None:
                    preview = {"dist": dist,
                               "dir": node.routing.next_dir.get(self.preview_goal)}
            grid.append({
                "id": cid,
                "coord": list(eng.grid.coord_of(cid)),
                "status": eng.grid.status_of(cid),
                "occupancy": node.occupancy_view() if node is not None
                else {"state": "free", "robot": None},
                "dist_preview": preview,
            })
        robots = []
        for rid, rt in sorted(eng.robots.items()):
            if rt.despawned:
                continue
            if rt.transit is not None:
                frm = list(eng.grid.coord_of(rt.transit[0]))
                pos = {"from": frm, "to": list(rt.transit[2])}
            else:
                pos = list(eng.grid.coord_of(rt.cell)) if rt.cell is not None else None
            robots.append({"id": rid, "mode": rt.robot.mode, "pos": pos,
                           "steps": rt.robot.steps, "done": rt.done,
                           "goals_left": len(rt.robot.destinations)})
        return {"type": "snapshot", "t": eng.now, "grid": grid, "robots": robots}

    def drain_events(self) -> list[dict]:
        new = self.engine._trace[self._cursor:]
        self._cursor = len(self.engine._trace)
        return [{"type": "event", **rec} for rec in new]

    # -- commands --------------------------------------------------------

    def handle_cmd(self, op: str, args: dict) -> tuple[bool, dict]:
        eng = self.engine
        if op in ("add_cell", "remove_cell", "fail_cell", "recover_cell"):
            coord = (int(args["x"]), int(args["y"]))
            verb = op.split("_")[0]
            sop = ScriptOp(t=eng.now, op=verb, coord=coord)
            ok, detail = eng.apply_command(verb, sop)
            return ok, detail
        if op == "spawn_robot":
            return self._spawn(args)
        if op == "set_goals":
            return eng.set_robot_goals(int(args["robot"]), args["goals"])
        if op == "pause":
            self.paused = True
            return True, {"paused": True}
        if op == "resume":
            self.paused = False
            if self.speed == 0:
                self.speed = 1.0
            return True, {"paused": False, "speed": self.speed}
        if op == "step":
            ms = int(args.get("ms", 1000))
            eng.advance(eng.now + ms)
            return True, {"t": eng.now}
        if op == "set_speed":
            self.speed = float(args["speed"])
            self.paused = self.speed == 0
            return True, {"speed": self.speed, "paused": self.paused}
        if op == "inspect_cell":
            return self._inspect(args)
        return False, {"error": "unknown-op", "op": op}

    def _spawn(self, args: dict) -> tuple[bool, dict]:
        eng = self.engine
        coord = (int(args["x"]), int(args["y"]))
        cid = eng.grid.cell_at(coord)
        if cid is None or not eng.grid.is_correct(cid):
            return False, {"error": "no-correct-cell", "coord": list(coord)}
        if eng.cells[cid].occ_state != "free":
            return False, {"error": "cell-busy", "coord": list(coord)}
        rid = args.get("id")
        if rid is None:
            rid = max(eng.robots, default=-1) + 1
        rid = int(rid)
        if rid in eng.robots:
            return False, {"error": "robot-exists", "robot": rid}
        goals = [g if g == "park" else (int(g[0]), int(g[1]))
                 for g in args.get("goals", [])]
        dwell = args.get("dwell")
        spec = RobotSpec(rid=rid, mode=args.get("mode", AFADA), start=coord,
                         goals=goals,
                         dwell_range=tuple(dwell) if dwell else None,
                         despawn=bool(args.get("despawn", False)))
        eng._try_spawn(spec)
        if rid not in eng.robots:
            return False, {"error": "spawn-blocked", "coord": list(coord)}
        return True, {"robot": rid}

    def _inspect(self, args: dict) -> tuple[bool, dict]:
        eng = self.engine
        coord = (int(args["x"]), int(args["y"]))
        cid = eng.grid.cell_at(coord)
        if cid is None:
            return False, {"error": "no-cell", "coord": list(coord)}
        self.preview_goal = cid
        node = eng.cells.get(cid)
        if node is None:
            return True, {"cell": cid, "status": eng.grid.status_of(cid)}
        links = {}
        for d, link in node.links.items():
            age = None if link.last_heartbeat < 0 else eng.now - link.last_heartbeat
            links[d] = {"physical": link.physical, "virtual": link.virtual,
                        "heartbeat_age_ms": age}
        return True, {
            "cell": cid, "coord": list(coord),
            "status": eng.grid.status_of(cid),
            "occupancy": node.occupancy_view(),
            "dist": {str(k): v for k, v in sorted(node.routing.dist.items())},
            "next": {str(k): v for k, v in sorted(node.routing.next_dir.items())},
            "links": links,
            "policy": {"one_way": node.policy.one_way,
                       "parking": node.policy.parking},
        }


def build_app(session: GatewaySession, static_dir: str | None = None,
              tick_s: float = 0.02):
    if FastAPI is None:
        raise ImportError("fastapi is required for the gateway; "
                          "install cellnav[serve]")

    async def pump() -> None:
        last_snapshot = -1.0
        loop = asyncio.get_running_loop()
        last_wall = loop.time()
        while True:
            await asyncio.sleep(tick_s)
            now_wall = loop.time()
            elapsed_ms = (now_wall - last_wall) * 1000.0
            last_wall = now_wall
            if not session.paused and session.speed > 0:
                session.engine.advance(session.engine.now
                                       + int(elapsed_ms * session.speed))
            await broadcast_updates()
            if (now_wall - last_snapshot) * 1000.0 >= session.snapshot_ms:
                last_snapshot = now_wall
                await broadcast(session.snapshot())

    async def broadcast(message: dict) -> None:
        text = json.dumps(message, sort_keys=True)
        for ws in list(session.clients):
            try:
                await ws.send_text(text)
            except Exception:
                with contextlib.suppress(ValueError):
                    session.clients.remove(ws)

    async def broadcast_updates() -> None:
        for event in session.drain_events():
            await broadcast(event)

    @contextlib.asynccontextmanager
    async def lifespan(app):
        task = asyncio.create_task(pump())
        yield
        task.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await task

    app = FastAPI(lifespan=lifespan)
    app.state.session = session

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        session.clients.append(ws)
        await ws.send_text(json.dumps({
            "type": "hello", "schema": SCHEMA,
            "snapshot_ms": session.snapshot_ms,
            "speed": session.speed, "paused": session.paused}, sort_keys=True))
        await ws.send_text(json.dumps(session.snapshot(), sort_keys=True))
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        {"type": "err", "ref": None, "error": "bad-json"}))
                    continue
                ref = msg.get("ref")
                if msg.get("type") != "cmd":
                    await ws.send_text(json.dumps(
                        {"type": "err", "ref": ref, "error": "expected-cmd"},
                        sort_keys=True))
                    continue
                ok, detail = session.handle_cmd(msg.get("op", ""),
                                                msg.get("args", {}) or {})
                reply = {"type": "ack" if ok else "err", "ref": ref, **detail}
                await ws.send_text(json.dumps(reply, sort_keys=True))
                await broadcast_updates()
                await broadcast(session.snapshot())
        except WebSocketDisconnect:
            pass
        finally:
            with contextlib.suppress(ValueError):
                session.clients.remove(ws)

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(scenario, seed: int, *, host: str = "127.0.0.1", port: int = 8700,
          speed: float = 1.0, snapshot_ms: int = 200,
          overrides: dict | None = None, static_dir: str | None = None) -> None:
    import uvicorn

    session = GatewaySession(scenario, seed, speed=speed,
                             snapshot_ms=snapshot_ms, overrides=overrides)
    app = build_app(session, static_dir=static_dir)
    print(f"gateway on ws://{host}:{port}/ws (speed={speed}, "
          f"snapshot every {snapshot_ms} ms)")
    uvicorn.run(app, host=host, port=port, log_level="warning")
