"""Scenario files: field grammar plus robots, timed scripts, and
per-cell policy overlays, and the canonical scenario library.

The three evaluation fields are reconstructions: the originals exist
only as photographs, so the shipped layouts preserve the documented
structural properties (loop/bridge detours, the fail-set cut between
the targets) rather than exact cell counts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

from .cells import CellPolicy
from .topology import (DIRECTIONS, FieldAnnotations, FieldDoc, FieldParseError,
                       Grid, build_grid, parse_field_doc, step)

Coord = tuple[int, int]

_COORD_RE = re.compile(r"\((-?\d+),(-?\d+)\)")


@dataclass
class RobotSpec:
    rid: int
    mode: str = "afada"
    start: Coord | None = None
    goals: list = field(default_factory=list)  # coords and/or "park"
    dwell_range: tuple[int, int] | None = None
    despawn: bool = False


@dataclass
class ScriptOp:
    t: int
    op: str  # add | remove | fail | recover | spawn
    coord: Coord | None = None
    robot: RobotSpec | None = None


@dataclass
class Scenario:
    name: str
    doc: FieldDoc
    params: dict
    robots: list[RobotSpec]
    script: list[ScriptOp]
    policies: dict[Coord, CellPolicy]

    def build_grid(self) -> tuple[Grid, FieldAnnotations]:
        return build_grid(self.doc.rows)

    def serialize(self) -> str:
        return self.doc.serialize()


def _parse_coord(token: str, lineno: int) -> Coord:
    m = _COORD_RE.fullmatch(token.strip())
    if m is None:
        raise FieldParseError(f"expected (x,y), got {token!r}", lineno)
    return (int(m.group(1)), int(m.group(2)))


def _split_goal_tokens(value: str, lineno: int) -> list[str]:
    """Split a goal list on commas outside parentheses."""
    tokens, buf, depth = [], [], 0
    for ch in value:
        if ch == "," and depth == 0:
            tokens.append("".join(buf))
            buf = []
            continue
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise FieldParseError(f"unbalanced parens in {value!r}", lineno)
        buf.append(ch)
    tokens.append("".join(buf))
    return tokens


def _parse_goals(value: str, ann: FieldAnnotations, lineno: int) -> list:
    goals: list = []
    for token in _split_goal_tokens(value, lineno):
        token = token.strip()
        if not token:
            continue
        if token == "S":
            if ann.start is None:
                raise FieldParseError("goal S but field has no S", lineno)
            goals.append(ann.start)
        elif token == "G":
            if ann.goal is None:
                raise FieldParseError("goal G but field has no G", lineno)
            goals.append(ann.goal)
        elif token == "park":
            goals.append("park")
        else:
            goals.append(_parse_coord(token, lineno))
    return goals


def _parse_kv(tokens: list[str], ann: FieldAnnotations, lineno: int) -> dict:
    out: dict = {}
    for tok in tokens:
        if "=" not in tok:
            raise FieldParseError(f"expected key=value, got {tok!r}", lineno)
        key, _, value = tok.partition("=")
        if key == "mode":
            if value not in ("afada", "selfnav"):
                raise FieldParseError(f"unknown mode {value!r}", lineno)
            out["mode"] = value
        elif key == "goals":
            out["goals"] = _parse_goals(value, ann, lineno)
        elif key == "dwell":
            lo, _, hi = value.partition("-")
            out["dwell_range"] = (int(lo), int(hi or lo))
        elif key == "despawn":
            out["despawn"] = value.lower() in ("1", "true", "yes")
        else:
            raise FieldParseError(f"unknown robot option {key!r}", lineno)
    return out


def _parse_robot(tokens: list[str], ann: FieldAnnotations, lineno: int,
                 start: Coord | None = None) -> RobotSpec:
    if len(tokens) < 1 or not tokens[0].isdigit():
        raise FieldParseError("robot directive needs a digit id", lineno)
    rid = int(tokens[0])
    rest = tokens[1:]
    if len(rest) >= 2 and rest[0] == "at":
        start = _parse_coord(rest[1], lineno)
        rest = rest[2:]
    opts = _parse_kv(rest, ann, lineno)
    if start is None:
        start = ann.robot_starts.get(str(rid), ann.start)
    if start is None:
        raise FieldParseError(f"robot {rid} has no start (no digit, no S)", lineno)
    spec = RobotSpec(rid=rid, start=start, **opts)
    if spec.mode == "selfnav" and "park" in spec.goals:
        raise FieldParseError("selfnav robots cannot take park goals", lineno)
    return spec


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    doc = parse_field_doc(text)
    grid, ann = build_grid(doc.rows)
    robots: list[RobotSpec] = []
    script: list[ScriptOp] = []
    policies: dict[Coord, CellPolicy] = {}
    for lineno, line in enumerate(doc.directives, start=1):
        if line.startswith("#"):
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "robot":
            robots.append(_parse_robot(tokens[1:], ann, lineno))
        elif head == "policy":
            coord = _parse_coord(tokens[1], lineno)
            if grid.cell_at(coord) is None:
                raise FieldParseError(f"policy on empty coordinate {coord}", lineno)
            policy = policies.setdefault(coord, CellPolicy())
            if tokens[2] == "one-way":
                if tokens[3] not in DIRECTIONS:
                    raise FieldParseError(f"bad direction {tokens[3]!r}", lineno)
                policy.one_way = tokens[3]
            elif tokens[2] == "parking":
                policy.parking = True
            else:
                raise FieldParseError(f"unknown policy {tokens[2]!r}", lineno)
        elif head == "at":
            t = int(tokens[1])
            op = tokens[2]
            if op in ("add", "remove", "fail", "recover"):
                coord = _parse_coord("".join(tokens[3:]), lineno)
                script.append(ScriptOp(t=t, op=op, coord=coord))
            elif op == "spawn":
                if tokens[3] != "robot":
                    raise FieldParseError("expected 'spawn robot ...'", lineno)
                spec = _parse_robot(tokens[4:], ann, lineno)
                if spec.start is None:
                    raise FieldParseError("spawned robot needs 'at (x,y)'", lineno)
                script.append(ScriptOp(t=t, op="spawn", robot=spec))
            else:
                raise FieldParseError(f"unknown script op {op!r}", lineno)
        else:
            raise FieldParseError(f"unknown directive {head!r}", lineno)

    _apply_trips_default(robots, doc.params, ann)
    _validate_script(script, grid)
    _derive_park_dirs(policies)
    seen = set()
    for spec in robots + [op.robot for op in script if op.robot is not None]:
        if spec.rid in seen:
            raise FieldParseError(f"duplicate robot id {spec.rid}", 1)
        seen.add(spec.rid)
    return Scenario(name=name, doc=doc, params=dict(doc.params),
                    robots=robots, script=script, policies=policies)


def _apply_trips_default(robots: list[RobotSpec], params: dict,
                         ann: FieldAnnotations) -> None:
    trips = params.get("trips")
    if trips is None:
        return
    n = int(trips)
    for spec in robots:
        if spec.goals:
            continue
        if ann.start is None or ann.goal is None:
            raise FieldParseError("trips default requires S and G targets", 1)
        spec.goals = [ann.goal, ann.start] * n


def _validate_script(script: list[ScriptOp], grid: Grid) -> None:
    present = {grid.coord_of(c) for c in grid.cell_ids()}
    last_t = 0
    for op in script:
        if op.t < last_t:
            raise FieldParseError("script times must be non-decreasing", 1)
        last_t = op.t
        if op.op == "add":
            if op.coord in present:
                raise FieldParseError(f"add at occupied {op.coord}", 1)
            present.add(op.coord)
        elif op.op == "remove":
            if op.coord not in present:
                raise FieldParseError(f"remove at empty {op.coord}", 1)
            present.discard(op.coord)
        elif op.op in ("fail", "recover"):
            if op.coord not in present:
                raise FieldParseError(f"{op.op} at empty {op.coord}", 1)
        elif op.op == "spawn":
            if op.robot.start not in present:
                raise FieldParseError(f"spawn at empty {op.robot.start}", 1)


def _derive_park_dirs(policies: dict[Coord, CellPolicy]) -> None:
    spaces = {c for c, p in policies.items() if p.parking}
    if not spaces:
        return
    for coord, policy in policies.items():
        if policy.parking:
            continue
        policy.park_dirs = [d for d in DIRECTIONS if step(coord, d) in spaces]


# ----------------------------------------------------------------------
# canonical library

def load_builtin(name: str) -> Scenario:
    text = resources.files("cellnav").joinpath(f"fields/{name}.field").read_text()
    return parse_scenario(text, name=name)


def list_builtin() -> list[str]:
    out = []
    for entry in resources.files("cellnav").joinpath("fields").iterdir():
        if entry.name.endswith(".field"):
            out.append(entry.name[:-len(".field")])
    return sorted(out)


EVALUATION_FIELDS = ("simple-loop", "two-bridge", "two-loop")


def demo_reconfig() -> Scenario:
    """Round trip where the goal starts disconnected: the robot waits,
    crosses once a bridging cell is added, loses that cell behind it,
    and returns over a newly added cell."""
    return load_builtin("reconfig")


def demo_parking() -> Scenario:
    """4x4 lot: side columns are parking spaces, center columns a
    one-way circuit; robots enter at the bottom, park, dwell, leave."""
    return load_builtin("parking")


def demo_mapf(n_robots: int = 3) -> Scenario:
    """4x3 multi-robot pathfinding demo with crossing start/goal pairs.

    The photographed assignment is unreadable; this one is
    representative. Robot count is configurable up to 4.
    """
    if n_robots == 3:
        return load_builtin("mapf-4x3")
    if not 1 <= n_robots <= 4:
        raise ValueError("n_robots must be within 1..4")
    starts = [(0, 0), (3, 0), (0, 2), (3, 2)]
    goals = [(3, 2), (0, 2), (3, 0), (0, 0)]
    rows = ["....", "....", "...."]
    marked = []
    for y in range(3):
        row = list(rows[y])
        for rid in range(n_robots):
            if starts[rid][1] == y:
                row[starts[rid][0]] = str(rid)
        marked.append("".join(row))
    directives = [
        f"robot {rid} mode=afada goals=({goals[rid][0]},{goals[rid][1]})"
        for rid in range(n_robots)
    ]
    doc = FieldDoc(comments=["# multi-robot pathfinding demo (generated)"],
                   rows=marked, params={"loss": "0"}, directives=directives)
    return parse_scenario(doc.serialize(), name=f"mapf-4x3-r{n_robots}")
