"""The cell state machine: one instance per correct cell.

A cell owns its link liveness records, routing tables, occupancy and
any policy overlay. Handlers are transition functions invoked by the
engine loop: they mutate local state and return effect tuples

    ("dir", direction, Message)   send to the neighbor in direction
    ("robot", robot_id, Message)  send to the robot on this cell
    ("timer", delay, kind, data)  schedule a cell timer
    ("trace", kind, payload)      state-change record for the trace
    ("violation", detail)         safety violation (must never occur)

Cells know nothing global: no grid, no robot list, no other cell's
state beyond what messages delivered to them said.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import fabric as fb
from .fabric import LinkState, Message
from .routing import SELF_DIR, RoutingState, lookup_next, recompute
from .topology import DIRECTIONS

FREE = "free"
RESERVED = "reserved"
OCCUPIED = "occupied"

_INF = float("inf")
_MAX_REPLY_CACHE = 512


@dataclass
class CellPolicy:
    one_way: str | None = None       # forward direction for through traffic
    parking: bool = False            # this cell is a parking space
    park_dirs: list[str] = field(default_factory=list)  # adjacent spaces served


class CellNode:
    def __init__(self, cell_id: int, config, backoff_rng, retry_rng, req_ids,
                 policy: CellPolicy | None = None) -> None:
        self.id = cell_id
        self.config = config
        self.links: dict[str, LinkState] = {d: LinkState() for d in DIRECTIONS}
        self.routing = RoutingState()
        recompute(self.routing, self.id, config.d_bound)
        self.occ_state = FREE
        self.occ_robot: int | None = None
        self.occ_from_dir: str | None = None
        self.occ_came_from: str | None = None  # arrival direction of occupant
        self.reserved_ahead: dict[int, tuple[str, object]] = {}  # robot -> (dir, goal)
        self.forwarded: dict[int, dict] = {}  # req -> {from, to, robot}
        self.pending: dict | None = None
        self.replies: dict[int, tuple] = {}
        self.policy = policy or CellPolicy()
        self._backoff = backoff_rng
        self._retry = retry_rng
        self._req_ids = req_ids

    # ------------------------------------------------------------------
    # liveness

    def on_physical(self, direction: str, up: bool, now: int) -> list:
        fx: list = []
        link = self.links[direction]
        if up:
            link.contact_up(now)
            fx.append(("trace", "link", {"cell": self.id, "dir": direction, "up": True}))
        else:
            link.contact_down()
            fx.append(("trace", "link", {"cell": self.id, "dir": direction, "up": False}))
            self._drop_direction(direction, fx)
        return fx

    def on_heartbeat_tick(self, now: int) -> list:
        fx = []
        for d in DIRECTIONS:
            if self.links[d].physical:
                fx.append(("dir", d, Message(fb.HEARTBEAT, {})))
        return fx

    def on_timeout_sweep(self, now: int) -> list:
        fx: list = []
        timeout = self.config.heartbeat_timeout
        for d in DIRECTIONS:
            link = self.links[d]
            if link.timed_out(now, timeout):
                link.virtual = False
                fx.append(("trace", "link", {"cell": self.id, "dir": d,
                                             "up": False, "layer": "virtual"}))
                self._drop_direction(d, fx)
        return fx

    def _drop_direction(self, direction: str, fx: list) -> None:
        """Link went dead: forget its cached table and chain pointers."""
        self.routing.cache.pop(direction, None)
        if recompute(self.routing, self.id, self.config.d_bound):
            self._trace_table(fx)
        for rid, (d, _goal) in list(self.reserved_ahead.items()):
            if d == direction:
                del self.reserved_ahead[rid]

    # ------------------------------------------------------------------
    # routing

    def on_broadcast_tick(self, now: int) -> list:
        fx = []
        snapshot = dict(self.routing.dist)
        for d in DIRECTIONS:
            if self.links[d].virtual:
                fx.append(("dir", d, Message(fb.DIST, {"table": snapshot})))
        if recompute(self.routing, self.id, self.config.d_bound):
            self._trace_table(fx)
        return fx

    def _trace_table(self, fx: list) -> None:
        fx.append(("trace", "table", {"cell": self.id,
                                      "dist": dict(self.routing.dist),
                                      "next": dict(self.routing.next_dir)}))

    def _live_next(self, goal: int) -> str | None:
        d = lookup_next(self.routing, self.id, goal)
        if d is None or d == SELF_DIR:
            return d
        return d if self.links[d].virtual else None

    def _flow_target(self, goal) -> str | None:
        """Next direction for a robot standing on this cell.

        One-way cells steer through traffic strictly along their flow
        direction: the routing table ignores traffic policy and would
        happily point robots against it, and downstream cells reject
        against-flow entries, so the flow is the only move that can
        ever be granted here.
        """
        if self.policy.one_way is not None:
            ow = self.policy.one_way
            return ow if self.links[ow].virtual else None
        d = self._live_next(goal)
        if d is None or d == SELF_DIR or d != self.occ_came_from:
            return d
        # The table points straight back where the robot entered from.
        # If another direction is equally minimal, prefer it: this
        # breaks trivial two-cell oscillation without ever lengthening
        # the route (both candidates sit at my distance minus one).
        want = self.routing.cache.get(d, {}).get(goal)
        for alt in DIRECTIONS:
            if alt == d or not self.links[alt].virtual:
                continue
            if self.routing.cache.get(alt, {}).get(goal) == want:
                return alt
        return d

    # ------------------------------------------------------------------
    # message dispatch

    def on_message(self, msg: Message, origin: tuple, now: int) -> list:
        kind = msg.kind
        if kind == fb.HEARTBEAT:
            return self._on_heartbeat(origin[1], now)
        if kind == fb.DIST:
            return self._on_dist(origin[1], msg.payload["table"])
        if kind == fb.RESERVE_REQ:
            return self._on_reserve_req(origin[1], msg.payload, now)
        if kind == fb.RESERVE_ACK:
            return self._on_reserve_ack(origin[1], msg.payload)
        if kind == fb.RESERVE_REJECT:
            return self._on_reserve_reject(origin[1], msg.payload, now)
        if kind == fb.RELEASE:
            return self._on_release(msg.payload)
        if kind == fb.ROBOT_REQ:
            return self._on_robot_req(origin[1], msg.payload, now)
        if kind == fb.ARRIVED:
            return self._on_arrived(origin[1])
        return [("trace", "note", {"cell": self.id, "ignored": kind})]

    def _on_heartbeat(self, direction: str, now: int) -> list:
        fx: list = []
        if self.links[direction].heartbeat_seen(now):
            fx.append(("trace", "link", {"cell": self.id, "dir": direction,
                                         "up": True, "layer": "virtual"}))
        return fx

    def _on_dist(self, direction: str, table: dict) -> list:
        fx: list = []
        link = self.links[direction]
        if not link.virtual:
            # The detector declared this channel dead; ignore until a
            # heartbeat revives it, keeping the cache invariant tight.
            return fx
        if self.routing.cache.get(direction) != table:
            self.routing.cache[direction] = dict(table)
            if recompute(self.routing, self.id, self.config.d_bound):
                self._trace_table(fx)
        return fx

    # ------------------------------------------------------------------
    # reservation protocol, cell side

    def _reply(self, direction: str, req: int, reply: tuple) -> Message:
        self.replies[req] = (direction, reply)
        if len(self.replies) > _MAX_REPLY_CACHE:
            self.replies.pop(next(iter(self.replies)))
        if reply[0] == "ack":
            return Message(fb.RESERVE_ACK, {"req": req, "robot": reply[1], "path": reply[2]})
        return Message(fb.RESERVE_REJECT, {"req": req, "robot": reply[1]})

    def _on_reserve_req(self, direction: str, p: dict, now: int) -> list:
        fx: list = []
        req, robot, goal, chain = p["req"], p["robot"], p["goal"], p["chain"]
        cached = self.replies.get(req)
        if cached is not None:
            fx.append(("dir", direction, self._reply(direction, req, cached[1])))
            return fx
        if self.policy.one_way is not None and direction == self.policy.one_way:
            # Request came from the cell our one-way points to, so the
            # robot would enter against the flow.
            fx.append(("dir", direction, self._reply(direction, req, ("reject", robot))))
            return fx
        available = self.occ_state == FREE or \
            (self.occ_state == RESERVED and self.occ_robot == robot)
        if not available:
            fx.append(("dir", direction, self._reply(direction, req, ("reject", robot))))
            return fx
        self._set_occupancy(RESERVED, robot, direction, fx)
        if goal != self.id and goal != "park" and chain != 0:
            nd = self._live_next(goal)
            if nd is not None and nd != SELF_DIR:
                self.forwarded[req] = {"from": direction, "to": nd,
                                       "robot": robot, "goal": goal}
                next_chain = chain - 1 if chain > 0 else chain
                fx.append(("dir", nd, Message(fb.RESERVE_REQ, {
                    "req": req, "robot": robot, "goal": goal, "chain": next_chain})))
                return fx
        fx.append(("dir", direction, self._reply(direction, req, ("ack", robot, [self.id]))))
        return fx

    def _on_reserve_ack(self, direction: str, p: dict) -> list:
        fx: list = []
        req, robot, path = p["req"], p["robot"], p["path"]
        fwd = self.forwarded.pop(req, None)
        if fwd is not None:
            self.reserved_ahead[robot] = (fwd["to"], fwd["goal"])
            reply = ("ack", robot, [self.id] + list(path))
            fx.append(("dir", fwd["from"], self._reply(fwd["from"], req, reply)))
            return fx
        pend = self.pending
        if pend is not None and pend.get("req") == req:
            fx.append(("robot", pend["robot"], Message(fb.INSTRUCTION, {
                "op": "move", "dir": pend["dir"], "epoch": pend["epoch"]})))
            self.pending = None
            return fx
        fx.append(("trace", "note", {"cell": self.id, "stale_ack": req}))
        return fx

    def _on_reserve_reject(self, direction: str, p: dict, now: int) -> list:
        fx: list = []
        req, robot = p["req"], p["robot"]
        fwd = self.forwarded.pop(req, None)
        if fwd is not None:
            # Chain stops here: relay an ack for the prefix reserved so
            # far (this cell included), in reverse order.
            reply = ("ack", robot, [self.id])
            fx.append(("dir", fwd["from"], self._reply(fwd["from"], req, reply)))
            return fx
        pend = self.pending
        if pend is None or pend.get("req") != req:
            fx.append(("trace", "note", {"cell": self.id, "stale_reject": req}))
            return fx
        if pend.get("attempts"):
            self._try_next_attempt(pend, fx)
            return fx
        lo, hi = self.config.backoff_range
        delay = self._backoff.randint(lo, hi) * self.config.time_scale
        pend["await_retry"] = True
        fx.append(("timer", delay, "retry", {"epoch": pend["epoch"]}))
        return fx

    def _on_release(self, p: dict) -> list:
        fx: list = []
        if self.occ_robot == p["robot"] and self.occ_state in (RESERVED, OCCUPIED):
            self._set_occupancy(FREE, None, None, fx)
        else:
            fx.append(("trace", "note", {"cell": self.id, "stale_release": p["robot"]}))
        return fx

    # ------------------------------------------------------------------
    # robot interaction

    def _on_robot_req(self, rid: int, p: dict, now: int) -> list:
        fx: list = []
        if self.occ_state == OCCUPIED and self.occ_robot != rid:
            fx.append(("trace", "note", {"cell": self.id, "foreign_request": rid}))
            return fx
        if not (self.occ_state == OCCUPIED and self.occ_robot == rid):
            # The fabric only delivers robot traffic from the robot on
            # this cell, so an inconsistent occupancy means an earlier
            # Arrived was lost; adopt the robot and release backwards.
            came_from = self.occ_from_dir if self.occ_robot == rid else None
            if self.occ_state == RESERVED and self.occ_robot == rid and self.occ_from_dir:
                fx.append(("dir", self.occ_from_dir, Message(fb.RELEASE, {"robot": rid})))
            fx.append(("trace", "note", {"cell": self.id, "implicit_arrival": rid}))
            self._set_occupancy(OCCUPIED, rid, None, fx)
            self.occ_came_from = came_from
        goal, epoch = p["goal"], p["epoch"]
        self.pending = {"robot": rid, "goal": goal, "epoch": epoch,
                        "req": None, "dir": None}
        if goal == "park":
            return self._park_request(rid, epoch, fx)
        if goal == self.id:
            fx.append(("robot", rid, Message(fb.INSTRUCTION,
                                             {"op": "arrived", "dir": None, "epoch": epoch})))
            self.pending = None
            return fx
        # A chain pointer only biases the direction: the move itself
        # still needs a fresh ack, because the downstream reservation
        # may have been released and granted to another robot since the
        # chain formed. A cell still reserved for this robot re-acks
        # immediately, so an intact chain stays fast.
        nd = None
        ahead = self.reserved_ahead.pop(rid, None)
        if ahead is not None:
            adir, agoal = ahead
            if agoal == goal and self.links[adir].virtual:
                nd = adir
        if nd is None:
            nd = self._flow_target(goal)
        if nd is None:
            fx.append(("robot", rid, Message(fb.INSTRUCTION,
                                             {"op": "wait", "dir": None, "epoch": epoch})))
            self.pending = None
            return fx
        self._send_reserve(nd, goal, fx)
        return fx

    def _chain_budget(self) -> int:
        if self.config.reservation_mode != "multi":
            return 0
        limit = self.config.chain_limit
        return -1 if limit is None else max(0, limit - 1)

    def _send_reserve(self, direction: str, goal, fx: list) -> None:
        req = self._req_ids.next()
        pend = self.pending
        pend["req"] = req
        pend["dir"] = direction
        pend["await_retry"] = False
        chain = 0 if goal == "park" else self._chain_budget()
        fx.append(("dir", direction, Message(fb.RESERVE_REQ, {
            "req": req, "robot": pend["robot"], "goal": goal, "chain": chain})))

    def _park_request(self, rid: int, epoch: int, fx: list) -> list:
        if self.policy.parking:
            fx.append(("robot", rid, Message(fb.INSTRUCTION,
                                             {"op": "arrived", "dir": None, "epoch": epoch})))
            self.pending = None
            return fx
        self.pending["attempts"] = self._park_attempts()
        if not self.pending["attempts"]:
            fx.append(("robot", rid, Message(fb.INSTRUCTION,
                                             {"op": "wait", "dir": None, "epoch": epoch})))
            self.pending = None
            return fx
        self._try_next_attempt(self.pending, fx)
        return fx

    def _park_attempts(self) -> list[str]:
        attempts = [d for d in self.policy.park_dirs if self.links[d].virtual]
        ow = self.policy.one_way
        if ow is not None and self.links[ow].virtual:
            attempts.append(ow)
        return attempts

    def _try_next_attempt(self, pend: dict, fx: list) -> None:
        if not pend["attempts"]:
            lo, hi = self.config.backoff_range
            pend["await_retry"] = True
            fx.append(("timer",
                       self._backoff.randint(lo, hi) * self.config.time_scale,
                       "retry", {"epoch": pend["epoch"]}))
            return
        direction = pend["attempts"].pop(0)
        self._send_reserve(direction, "park", fx)

    def _on_arrived(self, rid: int) -> list:
        fx: list = []
        if self.occ_state == RESERVED and self.occ_robot == rid:
            from_dir = self.occ_from_dir
            self._set_occupancy(OCCUPIED, rid, None, fx)
            self.occ_came_from = from_dir
            if from_dir is not None:
                fx.append(("dir", from_dir, Message(fb.RELEASE, {"robot": rid})))
            return fx
        if self.occ_state == OCCUPIED and self.occ_robot == rid:
            fx.append(("trace", "note", {"cell": self.id, "duplicate_arrival": rid}))
            return fx
        if self.occ_state == FREE:
            fx.append(("trace", "note", {"cell": self.id, "unreserved_arrival": rid}))
            self._set_occupancy(OCCUPIED, rid, None, fx)
            return fx
        fx.append(("violation", {"cell": self.id, "arrived": rid,
                                 "holder": self.occ_robot, "state": self.occ_state}))
        return fx

    # ------------------------------------------------------------------
    # timers

    def on_timer(self, kind: str, data: dict, now: int) -> list:
        fx: list = []
        if kind != "retry":
            return fx
        pend = self.pending
        if pend is None or pend["epoch"] != data["epoch"] or not pend.get("await_retry"):
            return fx
        goal = pend["goal"]
        if goal == "park":
            pend["attempts"] = self._park_attempts()
            self._try_next_attempt(pend, fx)
            return fx
        if self.policy.one_way is not None:
            # The flow direction is the only sane retry on one-way cells.
            target = self._flow_target(goal)
            if target is None:
                fx.append(("robot", pend["robot"], Message(fb.INSTRUCTION, {
                    "op": "wait", "dir": None, "epoch": pend["epoch"]})))
                self.pending = None
                return fx
            self._send_reserve(target, goal, fx)
            return fx
        candidates = [d for d in DIRECTIONS if self.links[d].virtual]
        if not candidates:
            fx.append(("robot", pend["robot"], Message(fb.INSTRUCTION, {
                "op": "wait", "dir": None, "epoch": pend["epoch"]})))
            self.pending = None
            return fx
        preferred = self._flow_target(goal)
        target = None
        if self._retry.random() < self.config.greedy_retry_prob:
            target = preferred if preferred not in (None, SELF_DIR) else None
        if target is None:
            # "another j": a random neighbor other than the one that
            # just rejected us (unless it is the only one), avoiding
            # distance-increasing directions when a better one exists.
            pool = [d for d in candidates if d != pend["dir"]] or candidates
            my_d = self.routing.dist.get(goal, _INF)
            cache = self.routing.cache
            better = [d for d in pool
                      if cache.get(d, {}).get(goal, _INF) <= my_d]
            pool = better or pool
            target = pool[self._retry.randrange(len(pool))]
        self._send_reserve(target, goal, fx)
        return fx

    # ------------------------------------------------------------------
    # bookkeeping

    def _set_occupancy(self, state: str, robot: int | None, from_dir: str | None,
                       fx: list) -> None:
        self.occ_state = state
        self.occ_robot = robot
        self.occ_from_dir = from_dir
        if state == FREE:
            self.occ_came_from = None
        fx.append(("trace", "occupancy", {"cell": self.id, "state": state,
                                          "robot": robot}))

    def occupancy_view(self) -> dict:
        return {"state": self.occ_state, "robot": self.occ_robot}
