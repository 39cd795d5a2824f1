"""Grid ground truth: cell placement, adjacency, status, and field files.

The grid is the physical arrangement of cells on integer coordinates.
Adjacency is the 4-neighborhood of occupied coordinates. A failed cell
still occupies its coordinate (robots cannot pass through it) but takes
no part in communication; the fabric consults the grid for that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import deque

Coord = tuple[int, int]
CellId = int

CORRECT = "correct"
FAILED = "failed"

# Direction order is significant: iteration in N, E, S, W order is the
# deterministic tie-break used by the routing rebuild.
DIRECTIONS = ("N", "E", "S", "W")
DELTAS = {"N": (0, -1), "E": (1, 0), "S": (0, 1), "W": (-1, 0)}
OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}

ROW_ALPHABET = set(".#FSG0123456789")


class TopologyError(ValueError):
    pass


class CoordinateOccupied(TopologyError):
    pass


class UnknownCell(TopologyError):
    pass


class FieldParseError(TopologyError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def step(coord: Coord, direction: str) -> Coord:
    dx, dy = DELTAS[direction]
    return (coord[0] + dx, coord[1] + dy)


@dataclass
class CellRecord:
    id: CellId
    coord: Coord
    status: str = CORRECT


class Grid:
    """Mutable cell arrangement. Ids are never reused after removal.

    An optional observer receives ("added" | "removed" | "status", ...)
    tuples; the engine wires it to the fabric so topology changes turn
    into physical link events.
    """

    def __init__(self) -> None:
        self._by_coord: dict[Coord, CellId] = {}
        self._cells: dict[CellId, CellRecord] = {}
        self._next_id: CellId = 0
        self.observer = None

    def __len__(self) -> int:
        return len(self._cells)

    def cell_ids(self) -> list[CellId]:
        return list(self._cells)

    def records(self) -> list[CellRecord]:
        return list(self._cells.values())

    def cell_at(self, coord: Coord) -> CellId | None:
        return self._by_coord.get(coord)

    def has_cell(self, cell_id: CellId) -> bool:
        return cell_id in self._cells

    def coord_of(self, cell_id: CellId) -> Coord:
        return self._record(cell_id).coord

    def status_of(self, cell_id: CellId) -> str:
        return self._record(cell_id).status

    def is_correct(self, cell_id: CellId) -> bool:
        return self._record(cell_id).status == CORRECT

    def _record(self, cell_id: CellId) -> CellRecord:
        try:
            return self._cells[cell_id]
        except KeyError:
            raise UnknownCell(f"no cell with id {cell_id}") from None

    def neighbors(self, cell_id: CellId) -> list[tuple[str, CellId]]:
        """Physically adjacent cells (any status), in N,E,S,W order."""
        coord = self.coord_of(cell_id)
        out = []
        for d in DIRECTIONS:
            other = self._by_coord.get(step(coord, d))
            if other is not None:
                out.append((d, other))
        return out

    def neighbor_in(self, cell_id: CellId, direction: str) -> CellId | None:
        return self._by_coord.get(step(self.coord_of(cell_id), direction))

    def add_cell(self, at: Coord) -> CellId:
        if at in self._by_coord:
            raise CoordinateOccupied(f"coordinate {at} already holds a cell")
        cell_id = self._next_id
        self._next_id += 1
        self._cells[cell_id] = CellRecord(cell_id, at, CORRECT)
        self._by_coord[at] = cell_id
        if self.observer is not None:
            self.observer(("added", cell_id, at))
        return cell_id

    def remove_cell(self, cell_id: CellId) -> None:
        rec = self._record(cell_id)
        incident = self.neighbors(cell_id)
        del self._by_coord[rec.coord]
        del self._cells[cell_id]
        if self.observer is not None:
            self.observer(("removed", cell_id, rec.coord, incident))

    def set_status(self, cell_id: CellId, status: str) -> None:
        if status not in (CORRECT, FAILED):
            raise TopologyError(f"unknown status {status!r}")
        rec = self._record(cell_id)
        if rec.status == status:
            return
        rec.status = status
        if self.observer is not None:
            self.observer(("status", cell_id, rec.coord, status))

    def bfs_distance(self, a: CellId, b: CellId) -> int | None:
        """Hop count over correct cells only; None if unreachable."""
        if not self.is_correct(a) or not self.is_correct(b):
            return None
        if a == b:
            return 0
        seen = {a: 0}
        queue = deque([a])
        while queue:
            cur = queue.popleft()
            d = seen[cur]
            for _, nb in self.neighbors(cur):
                if nb in seen or not self.is_correct(nb):
                    continue
                if nb == b:
                    return d + 1
                seen[nb] = d + 1
                queue.append(nb)
        return None

    def components(self) -> list[set[CellId]]:
        """Connected components over correct cells (flood fill)."""
        seen: set[CellId] = set()
        out: list[set[CellId]] = []
        for cid in self._cells:
            if cid in seen or not self.is_correct(cid):
                continue
            comp = {cid}
            queue = deque([cid])
            while queue:
                cur = queue.popleft()
                for _, nb in self.neighbors(cur):
                    if nb not in comp and self.is_correct(nb):
                        comp.add(nb)
                        queue.append(nb)
            seen |= comp
            out.append(comp)
        return out

    def bounds(self) -> tuple[Coord, Coord] | None:
        if not self._cells:
            return None
        xs = [c.coord[0] for c in self._cells.values()]
        ys = [c.coord[1] for c in self._cells.values()]
        return (min(xs), min(ys)), (max(xs), max(ys))

    def to_rows(self, annotations: FieldAnnotations | None = None) -> list[str]:
        """Render the current layout as field rows (presence only)."""
        box = self.bounds()
        if box is None:
            return []
        (x0, y0), (x1, y1) = box
        special: dict[Coord, str] = {}
        if annotations is not None:
            for c in annotations.fail_cells:
                special[c] = "F"
            for digit, c in annotations.robot_starts.items():
                special[c] = digit
            if annotations.start is not None:
                special[annotations.start] = "S"
            if annotations.goal is not None:
                special[annotations.goal] = "G"
        rows = []
        for y in range(y0, y1 + 1):
            row = []
            for x in range(x0, x1 + 1):
                if (x, y) in self._by_coord:
                    row.append(special.get((x, y), "."))
                else:
                    row.append("#")
            rows.append("".join(row))
        return rows


@dataclass
class FieldAnnotations:
    start: Coord | None = None
    goal: Coord | None = None
    fail_cells: list[Coord] = field(default_factory=list)
    robot_starts: dict[str, Coord] = field(default_factory=dict)


@dataclass
class FieldDoc:
    """Structured form of a field/scenario file.

    Directive lines (robot/policy/at ...) are kept verbatim; the
    scenario layer interprets them. Canonical serialization is
    comments, rows, a blank line, then directives, so canonical files
    round-trip byte-exactly.
    """

    comments: list[str] = field(default_factory=list)
    rows: list[str] = field(default_factory=list)
    params: dict[str, str] = field(default_factory=dict)
    directives: list[str] = field(default_factory=list)

    def serialize(self) -> str:
        lines = list(self.comments)
        lines.extend(self.rows)
        tail = [f"{k}={v}" for k, v in self.params.items()]
        tail.extend(self.directives)
        if tail:
            lines.append("")
            lines.extend(tail)
        return "\n".join(lines) + "\n"


def _is_row(line: str) -> bool:
    return bool(line) and all(ch in ROW_ALPHABET for ch in line)


def parse_field_doc(text: str) -> FieldDoc:
    """Split a field file into comments, grid rows, params, directives.

    A '#' line is a comment outside the grid block; inside the block a
    line made only of row glyphs is a row. The block starts at the
    first row line containing a non-'#' glyph and ends at the first
    blank or non-row line. '#' lines after the block stay with the
    directives so canonical files round-trip byte-exactly.
    """
    doc = FieldDoc()
    state = "head"  # head -> grid -> tail
    width: int | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip():
            if state == "grid":
                state = "tail"
            continue
        if state == "head" and _is_row(line) and set(line) != {"#"}:
            state = "grid"
        if state == "grid":
            if _is_row(line):
                if width is None:
                    width = len(line)
                elif len(line) != width:
                    raise FieldParseError("ragged row (width differs)", lineno)
                doc.rows.append(line)
                continue
            state = "tail"
        if line.startswith("#"):
            if state == "head":
                doc.comments.append(line)
            else:
                doc.directives.append(line)
            continue
        first = line.split(None, 1)[0]
        if first in ("robot", "at", "policy"):
            doc.directives.append(line)
        elif "=" in line:
            key, _, value = line.partition("=")
            doc.params[key.strip()] = value.strip()
        else:
            raise FieldParseError(f"unrecognized line {line!r}", lineno)
    if not doc.rows:
        raise FieldParseError("no grid block found", 1)
    return doc


def build_grid(rows: list[str]) -> tuple[Grid, FieldAnnotations]:
    grid = Grid()
    ann = FieldAnnotations()
    for y, row in enumerate(rows):
        for x, glyph in enumerate(row):
            if glyph not in ROW_ALPHABET:
                raise FieldParseError(f"unknown glyph {glyph!r}", y + 1)
            if glyph == "#":
                continue
            grid.add_cell((x, y))
            if glyph == "S":
                if ann.start is not None:
                    raise FieldParseError("duplicate S target", y + 1)
                ann.start = (x, y)
            elif glyph == "G":
                if ann.goal is not None:
                    raise FieldParseError("duplicate G target", y + 1)
                ann.goal = (x, y)
            elif glyph == "F":
                ann.fail_cells.append((x, y))
            elif glyph.isdigit():
                if glyph in ann.robot_starts:
                    raise FieldParseError(f"duplicate robot digit {glyph}", y + 1)
                ann.robot_starts[glyph] = (x, y)
    return grid, ann


def parse_field(text: str) -> tuple[Grid, FieldAnnotations, FieldDoc]:
    doc = parse_field_doc(text)
    grid, ann = build_grid(doc.rows)
    return grid, ann, doc
