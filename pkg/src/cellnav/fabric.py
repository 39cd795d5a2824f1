"""Simulated communication substrate.

Neighbor-to-neighbor and cell<->robot messaging with fixed per-hop
delay and i.i.d. loss, plus the per-direction link liveness record
used by the two-stage connection detector (physical contact events,
heartbeat-maintained virtual liveness).

Messages travel exactly one hop; forwarding is protocol behavior, not
a transport feature. All mutation happens inside the engine's event
loop: handlers return outgoing messages, the fabric schedules them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# message kinds
DIST = "dist"
HEARTBEAT = "heartbeat"
RESERVE_REQ = "reserve_req"
RESERVE_ACK = "reserve_ack"
RESERVE_REJECT = "reserve_reject"
RELEASE = "release"
ROBOT_REQ = "robot_req"
INSTRUCTION = "instruction"
ARRIVED = "arrived"

# drop reasons
DROP_LOSS = "loss"
DROP_NO_LINK = "no-link"
DROP_ENDPOINT_DEAD = "endpoint-dead"


@dataclass(slots=True)
class Message:
    kind: str
    payload: dict

    def describe(self) -> dict:
        return {"kind": self.kind, **self.payload}


@dataclass
class FabricConfig:
    delay: int = 20                  # per-hop latency, ms
    loss_prob: float = 0.0           # per-message drop probability
    heartbeat_period: int = 3000     # ms
    heartbeat_timeout: int = 10000   # ms

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be within [0, 1]")
        if self.heartbeat_timeout <= self.heartbeat_period:
            raise ValueError("heartbeat_timeout must exceed heartbeat_period")

    def scaled(self, k: int) -> "FabricConfig":
        return FabricConfig(self.delay * k, self.loss_prob,
                            self.heartbeat_period * k, self.heartbeat_timeout * k)


@dataclass(slots=True)
class LinkState:
    """One cell's view of one of its four directions.

    physical tracks contact events (add/remove of the neighbor cell);
    virtual tracks heartbeat liveness. A neighbor's *failure* produces
    no physical event -- it is only discovered when heartbeats stop.
    """

    physical: bool = False
    virtual: bool = False
    last_heartbeat: int = -1

    def contact_up(self, now: int) -> None:
        # Physical detection doubles as the first liveness proof.
        self.physical = True
        self.virtual = True
        self.last_heartbeat = now

    def contact_down(self) -> None:
        self.physical = False
        self.virtual = False
        self.last_heartbeat = -1

    def heartbeat_seen(self, now: int) -> bool:
        """Returns True when this heartbeat revives a dead link."""
        self.last_heartbeat = now
        if self.physical and not self.virtual:
            self.virtual = True
            return True
        return False

    def timed_out(self, now: int, timeout: int) -> bool:
        """Inclusive boundary: staleness == timeout already counts."""
        return self.virtual and self.last_heartbeat >= 0 and \
            now - self.last_heartbeat >= timeout


class Fabric:
    """Message transport owned by the engine's event loop.

    The env object supplies the simulation services the fabric needs:
    now, scheduling, trace recording, grid status lookups and robot
    positions. Loss draws come from a dedicated seeded stream so the
    loss rate never perturbs other random processes.
    """

    def __init__(self, config: FabricConfig, loss_rng, env) -> None:
        self.config = config
        self._rng = loss_rng
        self._env = env

    def send(self, src: tuple, dst: tuple, msg: Message, cause: int | None) -> None:
        env = self._env
        link_err = self._link_error(src, dst)
        if link_err is not None:
            env.record_drop(src, dst, msg, link_err, cause)
            return
        lost = self._rng.random() < self.config.loss_prob
        send_seq = env.record_send(src, dst, msg, cause)
        if lost:
            env.record_drop(src, dst, msg, DROP_LOSS, send_seq)
            return
        env.schedule_delivery(self.config.delay, src, dst, msg, send_seq)

    def deliverable(self, src: tuple, dst: tuple) -> str | None:
        """Delivery-time check: endpoints must still be alive.

        Returns a drop reason or None. Messages never reach or leave a
        failed cell, and a cell removed mid-flight swallows traffic.
        """
        for end in (src, dst):
            kind, ident = end
            if kind == "cell":
                status = self._env.cell_status(ident)
                if status != "correct":
                    return DROP_ENDPOINT_DEAD
            else:
                if not self._env.robot_exists(ident):
                    return DROP_ENDPOINT_DEAD
        return None

    def _link_error(self, src: tuple, dst: tuple) -> str | None:
        skind, sid = src
        dkind, did = dst
        if skind == "cell" and dkind == "cell":
            if not self._env.cells_adjacent(sid, did):
                return DROP_NO_LINK
        elif skind == "cell" and dkind == "robot":
            if self._env.robot_cell(did) != sid:
                return DROP_NO_LINK
        elif skind == "robot" and dkind == "cell":
            if self._env.robot_cell(sid) != did:
                return DROP_NO_LINK
        else:
            return DROP_NO_LINK
        return None
