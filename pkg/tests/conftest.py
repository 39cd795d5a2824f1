"""Shared helpers: independent oracles (flood fill, BFS, eccentricity)
and scenario/engine builders. The oracles deliberately reimplement
graph logic over raw coordinate sets so they share no code with the
package under test."""

from __future__ import annotations

import random
from collections import deque

import pytest

from cellnav.engine import Engine
from cellnav.scenarios import Scenario, parse_scenario

OFFSETS = ((0, -1), (1, 0), (0, 1), (-1, 0))


# ----------------------------------------------------------------------
# independent graph oracles (coordinate-set based)

def flood_components(coords: set) -> list[set]:
    left = set(coords)
    out = []
    while left:
        seed = next(iter(sorted(left)))
        comp = {seed}
        queue = deque([seed])
        while queue:
            x, y = queue.popleft()
            for dx, dy in OFFSETS:
                nxt = (x + dx, y + dy)
                if nxt in left and nxt not in comp:
                    comp.add(nxt)
                    queue.append(nxt)
        out.append(comp)
        left -= comp
    return out


def oracle_bfs(coords: set, a, b) -> int | None:
    if a not in coords or b not in coords:
        return None
    if a == b:
        return 0
    dist = {a: 0}
    queue = deque([a])
    while queue:
        cur = queue.popleft()
        for dx, dy in OFFSETS:
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in coords and nxt not in dist:
                dist[nxt] = dist[cur] + 1
                if nxt == b:
                    return dist[nxt]
                queue.append(nxt)
    return None


def oracle_all_dists(coords: set, a) -> dict:
    dist = {a: 0}
    queue = deque([a])
    while queue:
        cur = queue.popleft()
        for dx, dy in OFFSETS:
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in coords and nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return dist


def oracle_eccentricity(coords: set) -> int:
    ecc = 0
    for a in coords:
        dist = oracle_all_dists(coords, a)
        if len(dist) != len(coords):
            raise ValueError("disconnected")
        ecc = max(ecc, max(dist.values()))
    return ecc


def random_connected_coords(rng: random.Random, width: int, height: int,
                            hole_frac: float = 0.3) -> set:
    """Connected random layout, normalized so the bounding box starts
    at (0,0) (field rows re-origin at the occupied bounding box)."""
    while True:
        coords = {(x, y) for x in range(width) for y in range(height)
                  if rng.random() >= hole_frac}
        if len(coords) >= 2 and len(flood_components(coords)) == 1:
            x0 = min(c[0] for c in coords)
            y0 = min(c[1] for c in coords)
            return {(x - x0, y - y0) for x, y in coords}


# ----------------------------------------------------------------------
# scenario builders

def rows_from_coords(coords: set, marks: dict | None = None) -> list[str]:
    marks = marks or {}
    xs = [c[0] for c in coords]
    ys = [c[1] for c in coords]
    rows = []
    for y in range(min(ys), max(ys) + 1):
        row = []
        for x in range(min(xs), max(xs) + 1):
            if (x, y) in coords:
                row.append(marks.get((x, y), "."))
            else:
                row.append("#")
        rows.append("".join(row))
    return rows


def scenario_text(rows, params: dict | None = None,
                  directives: list | None = None) -> str:
    lines = list(rows)
    tail = [f"{k}={v}" for k, v in (params or {}).items()]
    tail.extend(directives or [])
    if tail:
        lines.append("")
        lines.extend(tail)
    return "\n".join(lines) + "\n"


def make_scenario(rows, params=None, directives=None, name="test") -> Scenario:
    return parse_scenario(scenario_text(rows, params, directives), name=name)


def make_engine(rows, seed=0, params=None, directives=None,
                overrides=None, collect_trace=True) -> Engine:
    scn = make_scenario(rows, params, directives)
    return Engine(scn, seed, collect_trace=collect_trace, overrides=overrides)


def run_rounds(eng: Engine, rounds: int, margin: int = 200) -> None:
    eng.run_until(rounds * eng.config.broadcast_period + margin)


def engine_coords(eng: Engine, correct_only: bool = True) -> set:
    out = set()
    for cid in eng.grid.cell_ids():
        if correct_only and not eng.grid.is_correct(cid):
            continue
        out.add(eng.grid.coord_of(cid))
    return out


def tables_match_oracle(eng: Engine) -> bool:
    """Every correct cell's dist table equals BFS distances over the
    correct cells, computed by the independent oracle."""
    coords = engine_coords(eng)
    by_coord = {eng.grid.coord_of(cid): cid for cid in eng.grid.cell_ids()}
    for coord in coords:
        cid = by_coord[coord]
        expected = {by_coord[c]: d for c, d in
                    oracle_all_dists(coords, coord).items()}
        if eng.cells[cid].routing.dist != expected:
            return False
    return True


def descent_holds(eng: Engine) -> bool:
    """At convergence next-hop neighbors are exactly one hop closer."""
    from cellnav.topology import step

    for cid, node in eng.cells.items():
        if not eng.grid.is_correct(cid):
            continue
        coord = eng.grid.coord_of(cid)
        for goal, d in node.routing.dist.items():
            if goal == cid:
                continue
            nd = node.routing.next_dir[goal]
            nb = eng.grid.cell_at(step(coord, nd))
            if nb is None or eng.cells[nb].routing.dist.get(goal) != d - 1:
                return False
    return True


@pytest.fixture
def rng():
    return random.Random(20240811)
