"""Robot state machines.

GuidedRobot carries no map and no planner: it asks the cell under it
for instructions and obeys. By construction its type has no map field,
so mode isolation is structural. SelfNavRobot is the baseline: a full
static map, shortest-path planning, adjacency-limited failure sensing
and on-demand replanning; it never exchanges a message with any cell.

Handlers return effect tuples consumed by the engine:

    ("cell", Message)        send to the cell under the robot
    ("timer", delay, kind, data)
    ("move", direction)      start a hop (guided robot)
    ("hop", coord)           atomic hop (self-nav robot)
    ("complete",) / ("task_failed", detail)
    ("trace", kind, payload)
"""

from __future__ import annotations

from collections import deque

from . import fabric as fb
from .fabric import Message
from .topology import DIRECTIONS, step

AFADA = "afada"
SELFNAV = "selfnav"

IDLE = "idle"
AWAITING = "awaiting"
MOVING = "moving"
WAITING = "waiting"
DONE = "done"


class GuidedRobot:
    mode = AFADA

    def __init__(self, rid: int, destinations: list, config, rng,
                 dwell_range: tuple[int, int] | None = None) -> None:
        self.id = rid
        self.destinations = list(destinations)
        self.config = config
        self.phase = IDLE
        self.epoch = 0
        self.steps = 0
        self._rng = rng
        self._dwell_range = dwell_range

    def start(self, now: int) -> list:
        return self._request()

    def _request(self) -> list:
        if not self.destinations:
            self.phase = DONE
            return [("complete",)]
        self.epoch += 1
        self.phase = AWAITING
        goal = self.destinations[0]
        return [
            ("cell", Message(fb.ROBOT_REQ, {"robot": self.id, "goal": goal,
                                            "epoch": self.epoch})),
            ("timer", self.config.request_timeout_ms, "resend", {"epoch": self.epoch}),
        ]

    def on_instruction(self, p: dict, now: int) -> list:
        if self.phase != AWAITING or p["epoch"] != self.epoch:
            return [("trace", "note", {"robot": self.id, "stale_instruction": p["epoch"]})]
        op = p["op"]
        if op == "arrived":
            popped = self.destinations.pop(0)
            if self.destinations and self._dwell_range is not None:
                # Pause at intermediate destinations (parking errand,
                # demo choreography); the final goal completes at once.
                self.phase = WAITING
                dwell = self._rng.randint(*self._dwell_range) * self.config.time_scale
                return [("trace", "robot", {"robot": self.id, "event": "dwell",
                                            "at_goal": popped, "dwell_ms": dwell}),
                        ("timer", dwell, "dwell", {})]
            return self._request()
        if op == "wait":
            self.phase = WAITING
            return [("trace", "robot", {"robot": self.id, "event": "told-to-wait"}),
                    ("timer", self.config.wait_retry_ms, "wait_retry", {})]
        if op == "move":
            self.phase = MOVING
            return [("move", p["dir"])]
        return [("trace", "note", {"robot": self.id, "bad_instruction": op})]

    def on_timer(self, kind: str, data: dict, now: int) -> list:
        if kind == "resend":
            if self.phase == AWAITING and data["epoch"] == self.epoch:
                return self._request()
            return []
        if kind in ("wait_retry", "dwell"):
            if self.phase == WAITING:
                return self._request()
            return []
        return []

    def on_hop_complete(self, now: int) -> list:
        # Announce arrival first so the cell is occupied before it sees
        # the follow-up request (same link, FIFO).
        fx = [("cell", Message(fb.ARRIVED, {"robot": self.id}))]
        fx.extend(self._request())
        return fx


def plan_path(coords, blocked, start, goal):
    """BFS shortest path over a coordinate set, excluding blocked
    coordinates. Returns the hop list after start, or None."""
    if goal == start:
        return []
    if goal not in coords or goal in blocked:
        return None
    parent = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for d in DIRECTIONS:
            nxt = step(cur, d)
            if nxt in parent or nxt not in coords or nxt in blocked:
                continue
            parent[nxt] = cur
            if nxt == goal:
                path = [nxt]
                while parent[path[-1]] != start:
                    path.append(parent[path[-1]])
                path.reverse()
                return path
            queue.append(nxt)
    return None


class SelfNavRobot:
    mode = SELFNAV

    def __init__(self, rid: int, destinations: list, map_coords, start) -> None:
        self.id = rid
        self.destinations = list(destinations)
        self.map_coords = frozenset(map_coords)
        self.known_failed: set = set()
        self.position = start
        self.path: list = []
        self.phase = IDLE
        self.steps = 0

    def on_tick(self, view, now: int) -> list:
        if self.phase == DONE:
            return []
        fx: list = []
        self._sense(view)
        while self.destinations and self.destinations[0] == self.position:
            self.destinations.pop(0)
            fx.append(("trace", "robot", {"robot": self.id, "event": "goal-reached",
                                          "at": list(self.position)}))
            self.path = []
        if not self.destinations:
            self.phase = DONE
            fx.append(("complete",))
            return fx
        goal = self.destinations[0]
        if goal not in self.map_coords:
            self.phase = DONE
            fx.append(("task_failed", {"robot": self.id, "unknown_goal": list(goal)}))
            return fx
        if self._path_blocked():
            self.path = plan_path(self.map_coords, self.known_failed,
                                  self.position, goal) or []
        if not self.path:
            self.phase = WAITING
            return fx
        self.phase = MOVING
        fx.append(("hop", self.path.pop(0)))
        return fx

    def _sense(self, view) -> None:
        for d in DIRECTIONS:
            c = step(self.position, d)
            if c not in self.map_coords:
                continue
            status = view.status_at(c)
            if status == "correct":
                self.known_failed.discard(c)
            else:
                # failed, or removed since the map snapshot
                self.known_failed.add(c)

    def _path_blocked(self) -> bool:
        if not self.path:
            return True
        nxt = self.path[0]
        if nxt in self.known_failed:
            return True
        return abs(nxt[0] - self.position[0]) + abs(nxt[1] - self.position[1]) != 1
