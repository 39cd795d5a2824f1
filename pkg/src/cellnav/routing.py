"""Per-cell distance-vector routing: periodic table broadcast plus a
clear-and-relax rebuild from cached neighbor tables.

The rebuild is self-stabilizing: whatever garbage the tables or caches
hold, entries at or beyond the diameter bound are discarded before
relaxation, so stale information ages out within a bounded number of
broadcast rounds while genuine shortest paths win the relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .topology import DIRECTIONS

SELF_DIR = "self"


@dataclass
class RoutingConfig:
    d_bound: int = 64            # diameter bound, constant per run
    broadcast_period: int = 2000  # ms

    def __post_init__(self) -> None:
        if self.d_bound < 1:
            raise ValueError("d_bound must be >= 1")

    def scaled(self, k: int) -> "RoutingConfig":
        return RoutingConfig(self.d_bound, self.broadcast_period * k)


@dataclass
class RoutingState:
    """dist maps cell id -> estimated hops; next_dir maps cell id ->
    the direction of the neighbor to forward to (SELF_DIR for self).
    cache keeps the last table received per virtually-live direction.
    """

    dist: dict[int, int] = field(default_factory=dict)
    next_dir: dict[int, str] = field(default_factory=dict)
    cache: dict[str, dict[int, int]] = field(default_factory=dict)


def recompute(state: RoutingState, self_id: int, d_bound: int) -> bool:
    """Clear-and-relax rebuild. Returns True when the tables changed.

    Neighbors are visited in fixed N,E,S,W order and relaxation is
    strict less-than, so ties deterministically keep the first
    direction. Advertisements at or beyond d_bound are skipped, which
    means a stored distance can be at most d_bound.
    """
    dist = {self_id: 0}
    next_dir = {self_id: SELF_DIR}
    cache = state.cache
    for d in DIRECTIONS:
        table = cache.get(d)
        if not table:
            continue
        for k, dk in table.items():
            if dk >= d_bound:
                continue
            nd = dk + 1
            old = dist.get(k)
            if old is None or nd < old:
                dist[k] = nd
                next_dir[k] = d
    if dist == state.dist and next_dir == state.next_dir:
        return False
    state.dist = dist
    state.next_dir = next_dir
    return True


def lookup_next(state: RoutingState, self_id: int, goal: int) -> str | None:
    """Direction toward goal, SELF_DIR when already there, None when
    the goal is unknown (caller decides to wait)."""
    if goal == self_id:
        return SELF_DIR
    return state.next_dir.get(goal)
