"""Deterministic discrete-event core.

One logical event loop owns all mutation: the priority queue is keyed
by (time, arming sequence), so ties break by scheduling order and a
(scenario, seed) pair maps to exactly one trace. All randomness is
drawn from named substreams of one root seed, so e.g. changing the
message loss rate never perturbs the failure schedule.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import asdict, dataclass

from . import fabric as fb
from .agents import AFADA, GuidedRobot, SelfNavRobot
from .cells import FREE, OCCUPIED, CellNode
from .fabric import Fabric, FabricConfig
from .topology import CORRECT, FAILED, DIRECTIONS, OPPOSITE, Grid, step

TRACE_SCHEMA = "cellnav-trace/1"


class SafetyViolation(RuntimeError):
    pass


@dataclass
class EngineConfig:
    delay: int = 20
    loss_prob: float = 0.0
    heartbeat_period: int = 3000
    heartbeat_timeout: int = 10000
    broadcast_period: int = 2000
    d_bound: int = 64
    hop_ms: int = 1000
    wait_retry_ms: int = 1000
    request_timeout_ms: int = 2000
    reservation_mode: str = "single"
    chain_limit: int | None = None
    backoff_range: tuple[int, int] = (100, 500)
    greedy_retry_prob: float = 0.7
    p: float = 0.0
    q: float = 0.0
    failure_tick_ms: int = 1000
    budget_steps_factor: int = 10
    budget_time_ms: int = 600_000
    duration_ms: int | None = None
    time_scale: int = 1

    def __post_init__(self) -> None:
        for name in ("p", "q", "loss_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be within [0, 1]")
        k = self.time_scale
        if k != 1:
            # backoff_range is intentionally left unscaled: draws must
            # consume identical random values at every scale, so the
            # multiplier is applied after drawing.
            for name in ("delay", "heartbeat_period", "heartbeat_timeout",
                         "broadcast_period", "hop_ms", "wait_retry_ms",
                         "request_timeout_ms", "failure_tick_ms",
                         "budget_time_ms"):
                setattr(self, name, getattr(self, name) * k)
            if self.duration_ms is not None:
                self.duration_ms = self.duration_ms * k

    _PARAM_KEYS = {
        "p": float, "q": float, "loss": float, "delay": int,
        "heartbeat_period": int, "heartbeat_timeout": int,
        "broadcast_period": int, "d_bound": int, "hop_ms": int,
        "wait_retry_ms": int, "request_timeout_ms": int,
        "reservation": str, "chain_limit": int,
        "budget_steps_factor": int, "budget_time_ms": int,
        "duration": int, "greedy_retry_prob": float,
    }

    @classmethod
    def from_params(cls, params: dict, overrides: dict | None = None) -> "EngineConfig":
        kw: dict = {}
        for key, cast in cls._PARAM_KEYS.items():
            if key not in params:
                continue
            value = cast(params[key])
            if key == "loss":
                kw["loss_prob"] = value
            elif key == "reservation":
                kw["reservation_mode"] = value
            elif key == "duration":
                kw["duration_ms"] = value
            else:
                kw[key] = value
        if overrides:
            kw.update(overrides)
        return cls(**kw)


class RngHub:
    """Named, independent random streams derived from one root seed."""

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            digest = hashlib.sha256(f"{self.seed}/{name}".encode()).digest()
            rng = random.Random(int.from_bytes(digest[:8], "big"))
            self._streams[name] = rng
        return rng


class ReqIds:
    def __init__(self) -> None:
        self._n = 0

    def next(self) -> int:
        self._n += 1
        return self._n


@dataclass
class RunResult:
    seed: int
    completed: bool
    sim_time_ms: int
    steps: dict[int, int]
    total_steps: int
    violations: list
    task_failures: list
    trace: list | None

    def metrics_row(self, scenario: str, mode: str, p: float, q: float) -> dict:
        return {"scenario": scenario, "seed": self.seed, "mode": mode,
                "p": p, "q": q, "steps": self.total_steps,
                "completed": self.completed, "sim_time_ms": self.sim_time_ms}


@dataclass
class _RobotRt:
    """Engine-side physics record for one robot."""
    spec: object
    robot: object
    cell: int | None            # settled cell id (None while in transit)
    coord: tuple
    transit: tuple | None = None  # (from_id, to_id, to_coord)
    done: bool = False
    despawned: bool = False


class _StatusView:
    """Adjacency-limited world access handed to self-nav robots."""

    def __init__(self, grid: Grid) -> None:
        self._grid = grid

    def status_at(self, coord) -> str | None:
        cid = self._grid.cell_at(coord)
        return None if cid is None else self._grid.status_of(cid)


class Engine:
    def __init__(self, scenario, seed: int, *, mode_override: str | None = None,
                 collect_trace: bool = True, overrides: dict | None = None) -> None:
        self.scenario = scenario
        self.seed = seed
        self.config = EngineConfig.from_params(scenario.params, overrides)
        self.collect_trace = collect_trace
        self.now = 0
        self._sched_seq = 0
        self._queue: list = []
        self._trace: list = []
        self._trace_seq = 0
        self._cause: int | None = None
        self.violations: list = []
        self.task_failures: list = []
        self._stopped: str | None = None

        self.rng = RngHub(seed)
        self.grid, self.ann = scenario.build_grid()
        self._req_ids = ReqIds()
        self.cells: dict[int, CellNode] = {}
        self._policies = dict(scenario.policies)
        for cid in self.grid.cell_ids():
            self._make_node(cid)
        for cid, node in self.cells.items():
            for d, _nb in self.grid.neighbors(cid):
                node.links[d].contact_up(0)
        self.grid.observer = self._on_topology

        fabric_cfg = FabricConfig(self.config.delay, self.config.loss_prob,
                                  self.config.heartbeat_period,
                                  self.config.heartbeat_timeout)
        self.fabric = Fabric(fabric_cfg, self.rng.stream("loss"), self)

        self.robots: dict[int, _RobotRt] = {}
        self._mode_override = mode_override
        self._fail_set: set[int] = set()
        for coord in self.ann.fail_cells:
            cid = self.grid.cell_at(coord)
            if cid is not None:
                self._fail_set.add(cid)

        self._optimal_steps = self._compute_optimal(scenario, mode_override)
        self._steps_budget = (None if self._optimal_steps is None
                              else self.config.budget_steps_factor * self._optimal_steps)
        self.total_steps = 0

        self._cells_active = self._any_guided(scenario, mode_override)
        self._record("meta", payload={
            "schema": TRACE_SCHEMA, "seed": seed, "scenario": scenario.name,
            "scenario_text": scenario.serialize(),
            "mode_override": mode_override,
            "config": _config_dict(self.config)})
        self._arm_initial(scenario)

    # ------------------------------------------------------------------
    # setup

    def _make_node(self, cid: int) -> CellNode:
        policy = self._policies.get(self.grid.coord_of(cid))
        node = CellNode(cid, self.config, self.rng.stream("backoff"),
                        self.rng.stream("retry"), self._req_ids, policy)
        self.cells[cid] = node
        return node

    def _any_guided(self, scenario, mode_override) -> bool:
        if not scenario.robots and not any(op.op == "spawn" for op in scenario.script):
            return True
        specs = list(scenario.robots)
        specs.extend(op.robot for op in scenario.script if op.op == "spawn")
        for spec in specs:
            mode = mode_override or spec.mode
            if mode == AFADA:
                return True
        return False

    def _compute_optimal(self, scenario, mode_override) -> int | None:
        grid, _ = scenario.build_grid()
        total = 0
        specs = list(scenario.robots)
        specs.extend(op.robot for op in scenario.script if op.op == "spawn")
        for spec in specs:
            pos = spec.start
            for goal in spec.goals:
                if goal == "park":
                    return None
                a, b = grid.cell_at(pos), grid.cell_at(goal)
                if a is None or b is None:
                    return None
                d = grid.bfs_distance(a, b)
                if d is None:
                    return None
                total += d
                pos = goal
        return total

    def _arm_initial(self, scenario) -> None:
        cfg = self.config
        if self._cells_active:
            self._schedule(0, "tick_broadcast", None)
            self._schedule(0, "tick_heartbeat", None)
            self._schedule(cfg.failure_tick_ms, "sweep_timeouts", None)
        self._schedule(cfg.failure_tick_ms, "tick_failure", None)
        for op in scenario.script:
            self._schedule(op.t * cfg.time_scale, "script", op)
        for spec in scenario.robots:
            self._schedule(0, "spawn", spec)

    # ------------------------------------------------------------------
    # trace

    def _record(self, kind: str, src=None, dst=None, payload=None,
                cause: int | None = None) -> int | None:
        if not self.collect_trace:
            return None
        seq = self._trace_seq
        self._trace_seq += 1
        self._trace.append({"t": self.now, "seq": seq, "kind": kind,
                            "src": src, "dst": dst, "payload": payload,
                            "cause": cause if cause is not None else self._cause})
        return seq

    # ------------------------------------------------------------------
    # fabric env interface

    def record_send(self, src, dst, msg, cause) -> int | None:
        return self._record("send", _addr(src), _addr(dst), msg.describe(), cause)

    def record_drop(self, src, dst, msg, reason, cause) -> None:
        payload = msg.describe()
        payload["reason"] = reason
        self._record("drop", _addr(src), _addr(dst), payload, cause)

    def schedule_delivery(self, delay, src, dst, msg, cause) -> None:
        self._schedule(delay, "deliver", (src, dst, msg, cause))

    def cell_status(self, cid: int) -> str | None:
        return self.grid.status_of(cid) if self.grid.has_cell(cid) else None

    def robot_exists(self, rid: int) -> bool:
        rt = self.robots.get(rid)
        return rt is not None and not rt.despawned

    def robot_cell(self, rid: int) -> int | None:
        rt = self.robots.get(rid)
        return None if rt is None or rt.despawned else rt.cell

    def cells_adjacent(self, a: int, b: int) -> bool:
        if not (self.grid.has_cell(a) and self.grid.has_cell(b)):
            return False
        ca, cb = self.grid.coord_of(a), self.grid.coord_of(b)
        return abs(ca[0] - cb[0]) + abs(ca[1] - cb[1]) == 1

    # ------------------------------------------------------------------
    # topology events

    def _on_topology(self, event: tuple) -> None:
        kind = event[0]
        if kind == "added":
            _, cid, coord = event
            self._record("topo", payload={"op": "add", "cell": cid,
                                          "coord": list(coord)})
            node = self._make_node(cid)
            for d, nb in self.grid.neighbors(cid):
                if self.grid.is_correct(nb):
                    self._apply_cell_fx(cid, node.on_physical(d, True, self.now))
                    nb_node = self.cells[nb]
                    self._apply_cell_fx(
                        nb, nb_node.on_physical(OPPOSITE[d], True, self.now))
        elif kind == "removed":
            _, cid, coord, incident = event
            self._record("topo", payload={"op": "remove", "cell": cid,
                                          "coord": list(coord)})
            self.cells.pop(cid, None)
            for d, nb in incident:
                nb_node = self.cells.get(nb)
                if nb_node is not None and self.grid.is_correct(nb):
                    self._apply_cell_fx(
                        nb, nb_node.on_physical(OPPOSITE[d], False, self.now))
        elif kind == "status":
            _, cid, coord, status = event
            self._record("topo", payload={"op": "status", "cell": cid,
                                          "coord": list(coord), "status": status})

    # ------------------------------------------------------------------
    # scheduling and main loop

    def _schedule(self, delay: int, kind: str, data) -> None:
        self._sched_seq += 1
        heapq.heappush(self._queue, (self.now + delay, self._sched_seq, kind, data))

    def run(self, until_ms: int | None = None) -> RunResult:
        cfg = self.config
        hard_stop = cfg.duration_ms if cfg.duration_ms is not None else cfg.budget_time_ms
        while self._queue and self._stopped is None:
            t = self._queue[0][0]
            if until_ms is not None and t > until_ms:
                self.now = until_ms
                break
            if t > hard_stop and until_ms is None:
                self.now = hard_stop
                if self._unfinished_robots():
                    self._stopped = "budget-time"
                else:
                    self._stopped = "duration"
                break
            _t, _seq, kind, data = heapq.heappop(self._queue)
            self.now = t
            self._dispatch(kind, data)
            if self._stopped is None and self._all_robots_done():
                self._stopped = "completed"
        return self._result()

    def run_until(self, t_ms: int) -> None:
        self.run(until_ms=t_ms)

    def advance(self, to_ms: int) -> None:
        """Process every event due at or before to_ms, ignoring task
        completion (the gateway keeps serving a finished simulation)."""
        while self._stopped in (None, "completed") and self._queue \
                and self._queue[0][0] <= to_ms:
            _t, _seq, kind, data = heapq.heappop(self._queue)
            self.now = _t
            self._dispatch(kind, data)
        self.now = max(self.now, to_ms)

    def step_event(self) -> bool:
        """Process exactly one queued event; False when nothing can run."""
        if not self._queue or self._stopped not in (None, "completed"):
            return False
        t, _seq, kind, data = heapq.heappop(self._queue)
        self.now = t
        self._dispatch(kind, data)
        return True

    def _unfinished_robots(self) -> bool:
        if any(not rt.done for rt in self.robots.values()):
            return True
        return any(e[2] == "spawn" or (e[2] == "script" and e[3].op == "spawn")
                   for e in self._queue)

    def _all_robots_done(self) -> bool:
        if not self.robots:
            return False
        if any(not rt.done for rt in self.robots.values()):
            return False
        return not self._unfinished_robots()

    def _result(self) -> RunResult:
        completed = self._stopped in ("completed", "duration") \
            and not self.violations and not self.task_failures
        steps = {rid: rt.robot.steps for rid, rt in self.robots.items()}
        return RunResult(seed=self.seed, completed=completed,
                         sim_time_ms=self.now, steps=steps,
                         total_steps=self.total_steps,
                         violations=list(self.violations),
                         task_failures=list(self.task_failures),
                         trace=self._trace if self.collect_trace else None)

    # ------------------------------------------------------------------
    # dispatch

    def _dispatch(self, kind: str, data) -> None:
        self._cause = None
        if kind == "deliver":
            self._on_deliver(*data)
        elif kind == "tick_broadcast":
            for cid in list(self.cells):
                node = self.cells.get(cid)
                if node is not None and self.grid.is_correct(cid):
                    self._apply_cell_fx(cid, node.on_broadcast_tick(self.now))
            self._schedule(self.config.broadcast_period, "tick_broadcast", None)
        elif kind == "tick_heartbeat":
            for cid in list(self.cells):
                node = self.cells.get(cid)
                if node is not None and self.grid.is_correct(cid):
                    self._apply_cell_fx(cid, node.on_heartbeat_tick(self.now))
            self._schedule(self.config.heartbeat_period, "tick_heartbeat", None)
        elif kind == "sweep_timeouts":
            for cid in list(self.cells):
                node = self.cells.get(cid)
                if node is not None and self.grid.is_correct(cid):
                    self._apply_cell_fx(cid, node.on_timeout_sweep(self.now))
            self._schedule(self.config.failure_tick_ms, "sweep_timeouts", None)
        elif kind == "tick_failure":
            self._failure_tick()
            self._schedule(self.config.failure_tick_ms, "tick_failure", None)
        elif kind == "cell_timer":
            cid, tkind, tdata = data
            node = self.cells.get(cid)
            if node is not None and self.grid.is_correct(cid):
                self._apply_cell_fx(cid, node.on_timer(tkind, tdata, self.now))
        elif kind == "robot_timer":
            rid, tkind, tdata = data
            rt = self.robots.get(rid)
            if rt is not None and not rt.done and not rt.despawned:
                self._apply_robot_fx(rt, rt.robot.on_timer(tkind, tdata, self.now))
        elif kind == "hop_end":
            self._on_hop_end(data)
        elif kind == "selfnav_tick":
            self._on_selfnav_tick(data)
        elif kind == "script":
            self._on_script(data)
        elif kind == "spawn":
            self._try_spawn(data)

    # ------------------------------------------------------------------
    # delivery

    def _on_deliver(self, src, dst, msg, cause) -> None:
        reason = self.fabric.deliverable(src, dst)
        if reason is not None:
            self.record_drop(src, dst, msg, reason, cause)
            return
        self._cause = self._record("deliver", _addr(src), _addr(dst),
                                   msg.describe(), cause)
        dkind, did = dst
        if dkind == "cell":
            node = self.cells[did]
            if src[0] == "cell":
                origin = ("dir", self._direction_to(did, src[1]))
            else:
                origin = ("robot", src[1])
            self._apply_cell_fx(did, node.on_message(msg, origin, self.now))
        else:
            rt = self.robots.get(did)
            if rt is None or rt.done:
                return
            if msg.kind == fb.INSTRUCTION:
                self._apply_robot_fx(rt, rt.robot.on_instruction(msg.payload, self.now))

    def _direction_to(self, from_cell: int, to_cell: int) -> str:
        fc = self.grid.coord_of(from_cell)
        tc = self.grid.coord_of(to_cell)
        for d in DIRECTIONS:
            if step(fc, d) == tc:
                return d
        raise SafetyViolation(f"cells {from_cell} and {to_cell} not adjacent")

    # ------------------------------------------------------------------
    # effects

    def _apply_cell_fx(self, cid: int, fx: list) -> None:
        for eff in fx:
            tag = eff[0]
            if tag == "dir":
                _, d, msg = eff
                nb = self.grid.neighbor_in(cid, d) if self.grid.has_cell(cid) else None
                if nb is None:
                    self.record_drop(("cell", cid), ("void", d), msg,
                                     fb.DROP_NO_LINK, self._cause)
                else:
                    self.fabric.send(("cell", cid), ("cell", nb), msg, self._cause)
            elif tag == "robot":
                _, rid, msg = eff
                self.fabric.send(("cell", cid), ("robot", rid), msg, self._cause)
            elif tag == "timer":
                _, delay, tkind, tdata = eff
                self._schedule(delay, "cell_timer", (cid, tkind, tdata))
            elif tag == "trace":
                self._record(eff[1], payload=eff[2])
            elif tag == "violation":
                self._violation(eff[1])

    def _apply_robot_fx(self, rt: _RobotRt, fx: list) -> None:
        for eff in fx:
            tag = eff[0]
            if tag == "cell":
                if rt.cell is not None:
                    self.fabric.send(("robot", rt.robot.id), ("cell", rt.cell),
                                     eff[1], self._cause)
            elif tag == "timer":
                _, delay, tkind, tdata = eff
                self._schedule(delay, "robot_timer", (rt.robot.id, tkind, tdata))
            elif tag == "move":
                self._start_move(rt, eff[1])
            elif tag == "hop":
                self._selfnav_hop(rt, eff[1])
            elif tag == "complete":
                self._complete_robot(rt)
            elif tag == "task_failed":
                self.task_failures.append(eff[1])
                rt.done = True
                self._record("robot", payload={"robot": rt.robot.id,
                                               "event": "task-failed", **eff[1]})
            elif tag == "trace":
                self._record(eff[1], payload=eff[2])

    # ------------------------------------------------------------------
    # robot physics

    def _footprint(self, rt: _RobotRt) -> set[int]:
        if rt.despawned:
            return set()
        if rt.transit is not None:
            return {rt.transit[0], rt.transit[1]}
        return set() if rt.cell is None else {rt.cell}

    def _check_collision(self, rt: _RobotRt, entering: int) -> None:
        for other_id, other in self.robots.items():
            if other_id == rt.robot.id or other.despawned:
                continue
            if entering in self._footprint(other):
                self._violation({"collision": entering, "robot": rt.robot.id,
                                 "other": other_id})

    def _violation(self, detail: dict) -> None:
        self.violations.append(detail)
        self._record("violation", payload=detail)
        self._stopped = "violation"

    def _start_move(self, rt: _RobotRt, direction: str) -> None:
        if rt.cell is None:
            self._violation({"robot": rt.robot.id, "move_while_transit": direction})
            return
        target = self.grid.neighbor_in(rt.cell, direction)
        if target is None:
            self._violation({"robot": rt.robot.id, "non_adjacent_move": direction,
                             "from": rt.cell})
            return
        if not self.grid.is_correct(target):
            # Instruction raced a scripted failure; stay put and retry.
            rt.robot.phase = "waiting"
            self._record("note", payload={"robot": rt.robot.id,
                                          "move_onto_failed": target})
            self._schedule(self.config.wait_retry_ms, "robot_timer",
                           (rt.robot.id, "wait_retry", {}))
            return
        self._check_collision(rt, target)
        if self._stopped is not None:
            return
        to_coord = self.grid.coord_of(target)
        self._record("robot", payload={"robot": rt.robot.id, "event": "move-start",
                                       "from": rt.cell, "to": target})
        rt.transit = (rt.cell, target, to_coord)
        rt.cell = None
        self._schedule(self.config.hop_ms, "hop_end", rt.robot.id)

    def _on_hop_end(self, rid: int) -> None:
        rt = self.robots.get(rid)
        if rt is None or rt.transit is None:
            return
        _from_id, to_id, to_coord = rt.transit
        rt.transit = None
        rt.cell = to_id
        rt.coord = to_coord
        rt.robot.steps += 1
        self.total_steps += 1
        self._cause = None
        self._record("robot", payload={"robot": rid, "event": "hop",
                                       "to": to_id, "steps": rt.robot.steps})
        self._check_budget()
        if self._stopped is None:
            self._apply_robot_fx(rt, rt.robot.on_hop_complete(self.now))

    def _selfnav_hop(self, rt: _RobotRt, coord) -> None:
        target = self.grid.cell_at(coord)
        if target is None or not self.grid.is_correct(target):
            self._record("note", payload={"robot": rt.robot.id,
                                          "blocked_hop": list(coord)})
            return
        self._check_collision(rt, target)
        if self._stopped is not None:
            return
        rt.cell = target
        rt.coord = coord
        rt.robot.position = coord
        rt.robot.steps += 1
        self.total_steps += 1
        self._record("robot", payload={"robot": rt.robot.id, "event": "hop",
                                       "to": target, "steps": rt.robot.steps})
        self._check_budget()

    def _check_budget(self) -> None:
        if self._steps_budget is not None and self.total_steps > self._steps_budget:
            self._stopped = "budget-steps"

    def _on_selfnav_tick(self, rid: int) -> None:
        rt = self.robots.get(rid)
        if rt is None or rt.done or rt.despawned:
            return
        self._apply_robot_fx(rt, rt.robot.on_tick(_StatusView(self.grid), self.now))
        if not rt.done and not rt.despawned and self._stopped is None:
            self._schedule(self.config.hop_ms, "selfnav_tick", rid)

    def _complete_robot(self, rt: _RobotRt) -> None:
        rt.done = True
        self._record("robot", payload={"robot": rt.robot.id, "event": "complete",
                                       "steps": rt.robot.steps})
        if getattr(rt.spec, "despawn", False):
            node = self.cells.get(rt.cell) if rt.cell is not None else None
            if node is not None:
                fx: list = []
                node._set_occupancy(FREE, None, None, fx)
                self._apply_cell_fx(rt.cell, fx)
            rt.despawned = True
            rt.cell = None
            self._record("robot", payload={"robot": rt.robot.id, "event": "despawn"})

    # ------------------------------------------------------------------
    # spawning

    def _try_spawn(self, spec) -> None:
        coord = spec.start
        cid = self.grid.cell_at(coord)
        blocked = (cid is None or not self.grid.is_correct(cid)
                   or self.cells[cid].occ_state != FREE
                   or any(cid in self._footprint(rt) for rt in self.robots.values()))
        if blocked:
            self._record("note", payload={"spawn_deferred": spec.rid,
                                          "at": list(coord)})
            self._schedule(self.config.hop_ms, "spawn", spec)
            return
        mode = self._mode_override or spec.mode
        rid = spec.rid
        if mode == AFADA:
            goals = [self._goal_id(g) for g in spec.goals]
            robot = GuidedRobot(rid, goals, self.config,
                                self.rng.stream(f"robot.{rid}"),
                                dwell_range=spec.dwell_range)
        else:
            goals = list(spec.goals)
            robot = SelfNavRobot(rid, goals, {self.grid.coord_of(c)
                                              for c in self.grid.cell_ids()}, coord)
        rt = _RobotRt(spec=spec, robot=robot, cell=cid, coord=coord)
        self.robots[rid] = rt
        node = self.cells[cid]
        fx: list = []
        node._set_occupancy(OCCUPIED, rid, None, fx)
        self._apply_cell_fx(cid, fx)
        self._record("robot", payload={"robot": rid, "event": "spawn",
                                       "mode": mode, "at": list(coord)})
        if mode == AFADA:
            self._apply_robot_fx(rt, robot.start(self.now))
        else:
            self._schedule(self.config.hop_ms, "selfnav_tick", rid)

    def _goal_id(self, goal):
        if goal == "park":
            return "park"
        cid = self.grid.cell_at(goal)
        if cid is None:
            raise ValueError(f"goal coordinate {goal} holds no cell")
        return cid

    def set_robot_goals(self, rid: int, goals: list) -> tuple[bool, dict]:
        """Replace a robot's destination list (gateway command); a
        finished robot is revived."""
        rt = self.robots.get(rid)
        if rt is None or rt.despawned:
            return False, {"error": "no-robot", "robot": rid}
        try:
            if rt.robot.mode == AFADA:
                resolved = [g if g == "park" else self._goal_id(tuple(g))
                            for g in goals]
            else:
                resolved = [tuple(g) for g in goals]
        except ValueError as exc:
            return False, {"error": str(exc)}
        rt.robot.destinations = resolved
        self._record("robot", payload={"robot": rid, "event": "goals-set",
                                       "count": len(resolved)})
        if rt.done:
            rt.done = False
            self._stopped = None if self._stopped == "completed" else self._stopped
            if rt.robot.mode == AFADA:
                self._apply_robot_fx(rt, rt.robot._request())
            else:
                rt.robot.phase = "idle"
                self._schedule(self.config.hop_ms, "selfnav_tick", rid)
        return True, {"robot": rid, "goals": len(resolved)}

    # ------------------------------------------------------------------
    # failure model

    def _presence(self) -> set[int]:
        present: set[int] = set()
        for rt in self.robots.values():
            present |= self._footprint(rt)
        for cid, node in self.cells.items():
            if node.occ_state != FREE:
                present.add(cid)
        return present

    def _failure_tick(self) -> None:
        if not self._fail_set:
            return
        p, q = self.config.p, self.config.q
        rng = self.rng.stream("failure")
        present = self._presence()
        for cid in sorted(self._fail_set):
            if not self.grid.has_cell(cid):
                continue
            u = rng.random()
            if self.grid.is_correct(cid):
                if u < p and cid not in present:
                    self.grid.set_status(cid, FAILED)
            else:
                if u < q:
                    self.grid.set_status(cid, CORRECT)

    # ------------------------------------------------------------------
    # scripted operations

    def _on_script(self, op) -> None:
        self._cause = None
        result = self.apply_command(op.op, op)
        self._record("script", payload={"op": op.op, "ok": result[0],
                                        "detail": result[1]})

    def apply_command(self, kind: str, op) -> tuple[bool, dict]:
        """Topology/robot commands shared by scripts and the gateway."""
        if kind == "add":
            if self.grid.cell_at(op.coord) is not None:
                return False, {"error": "occupied", "coord": list(op.coord)}
            cid = self.grid.add_cell(op.coord)
            return True, {"cell": cid}
        if kind == "remove":
            cid = self.grid.cell_at(op.coord)
            if cid is None:
                return False, {"error": "no-cell", "coord": list(op.coord)}
            if self.cells[cid].occ_state != FREE:
                return False, {"error": "robot-present", "cell": cid}
            if any(cid in self._footprint(rt) for rt in self.robots.values()):
                return False, {"error": "robot-present", "cell": cid}
            self.grid.remove_cell(cid)
            return True, {"cell": cid}
        if kind in ("fail", "recover"):
            cid = self.grid.cell_at(op.coord)
            if cid is None:
                return False, {"error": "no-cell", "coord": list(op.coord)}
            self.grid.set_status(cid, FAILED if kind == "fail" else CORRECT)
            return True, {"cell": cid}
        if kind == "spawn":
            self._try_spawn(op.robot)
            return True, {"robot": op.robot.rid}
        return False, {"error": "unknown-op", "op": kind}

    # ------------------------------------------------------------------
    # introspection

    def state_snapshot(self) -> dict:
        grid = {cid: {"coord": list(self.grid.coord_of(cid)),
                      "status": self.grid.status_of(cid)}
                for cid in sorted(self.grid.cell_ids())}
        tables = {cid: {"dist": dict(sorted(self.cells[cid].routing.dist.items())),
                        "next": dict(sorted(self.cells[cid].routing.next_dir.items()))}
                  for cid in sorted(self.cells)}
        occupancy = {cid: self.cells[cid].occupancy_view() for cid in sorted(self.cells)}
        robots = {}
        for rid, rt in sorted(self.robots.items()):
            if rt.despawned:
                pos = None
            elif rt.transit is not None:
                pos = {"from": rt.transit[0], "to": rt.transit[1]}
            else:
                pos = rt.cell
            robots[rid] = {"pos": pos, "steps": rt.robot.steps,
                           "done": rt.done, "mode": rt.robot.mode}
        return {"grid": grid, "tables": tables, "occupancy": occupancy,
                "robots": robots}


def _addr(a) -> str:
    return f"{a[0]}:{a[1]}"


def _config_dict(cfg: EngineConfig) -> dict:
    d = asdict(cfg)
    d["backoff_range"] = list(d["backoff_range"])
    return d


def run(scenario, seed: int, *, mode_override: str | None = None,
        collect_trace: bool = True, overrides: dict | None = None) -> RunResult:
    eng = Engine(scenario, seed, mode_override=mode_override,
                 collect_trace=collect_trace, overrides=overrides)
    return eng.run()


def trace_to_jsonl(trace: list) -> str:
    return "".join(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
                   for rec in trace)


def trace_from_jsonl(text: str) -> list:
    records = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt trace at line {i}: {exc}") from None
    return records


def replay(trace: list, index: int) -> dict:
    """Fold trace records up to and including `index` into the state
    snapshot projection (grid, tables, occupancy, robots)."""
    if not trace or trace[0].get("kind") != "meta":
        raise ValueError("trace must begin with a meta record")
    if not 0 <= index < len(trace):
        raise ValueError(f"index {index} out of range 0..{len(trace) - 1}")
    from .scenarios import parse_scenario

    meta = trace[0]["payload"]
    scenario = parse_scenario(meta["scenario_text"], name=meta["scenario"])
    grid, _ann = scenario.build_grid()
    state = {
        "grid": {cid: {"coord": list(grid.coord_of(cid)), "status": CORRECT}
                 for cid in grid.cell_ids()},
        "tables": {cid: {"dist": {cid: 0}, "next": {cid: "self"}}
                   for cid in grid.cell_ids()},
        "occupancy": {cid: {"state": FREE, "robot": None} for cid in grid.cell_ids()},
        "robots": {},
    }
    for rec in trace[1:index + 1]:
        kind = rec["kind"]
        p = rec["payload"]
        if kind == "topo":
            cid = p["cell"]
            if p["op"] == "add":
                state["grid"][cid] = {"coord": p["coord"], "status": CORRECT}
                state["tables"][cid] = {"dist": {cid: 0}, "next": {cid: "self"}}
                state["occupancy"][cid] = {"state": FREE, "robot": None}
            elif p["op"] == "remove":
                state["grid"].pop(cid, None)
                state["tables"].pop(cid, None)
                state["occupancy"].pop(cid, None)
            else:
                state["grid"][cid]["status"] = p["status"]
        elif kind == "table":
            state["tables"][p["cell"]] = {
                "dist": {int(k): v for k, v in p["dist"].items()},
                "next": {int(k): v for k, v in p["next"].items()}}
        elif kind == "occupancy":
            state["occupancy"][p["cell"]] = {"state": p["state"], "robot": p["robot"]}
        elif kind == "robot":
            ev = p["event"]
            rid = p["robot"]
            if ev == "spawn":
                cid = _cell_at(state, p["at"])
                state["robots"][rid] = {"pos": cid, "steps": 0, "done": False,
                                        "mode": p["mode"]}
            elif ev == "move-start":
                state["robots"][rid]["pos"] = {"from": p["from"], "to": p["to"]}
            elif ev == "hop":
                state["robots"][rid]["pos"] = p["to"]
                state["robots"][rid]["steps"] = p["steps"]
            elif ev in ("complete", "task-failed"):
                state["robots"][rid]["done"] = True
            elif ev == "despawn":
                state["robots"][rid]["pos"] = None
    # canonicalize ordering to match Engine.state_snapshot
    return {
        "grid": {cid: state["grid"][cid] for cid in sorted(state["grid"])},
        "tables": {cid: {"dist": dict(sorted(state["tables"][cid]["dist"].items())),
                         "next": dict(sorted(state["tables"][cid]["next"].items()))}
                   for cid in sorted(state["tables"])},
        "occupancy": {cid: state["occupancy"][cid] for cid in sorted(state["occupancy"])},
        "robots": {rid: state["robots"][rid] for rid in sorted(state["robots"])},
    }


def _cell_at(state: dict, coord: list) -> int | None:
    for cid, rec in state["grid"].items():
        if rec["coord"] == coord:
            return cid
    return None
