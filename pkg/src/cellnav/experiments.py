"""Batch evaluation: repeated seeded runs over (field, mode, q)
conditions, median step counts, and Mann-Whitney U comparisons.

Runs that fail to complete (budget exhausted, protocol starvation) are
excluded from the statistic; the completed/failed split is reported.
Paired seeding is the default: both modes of a repetition share the
root seed, hence the same failure-draw schedule.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from statistics import median

from . import engine as eng

METRIC_COLUMNS = ["scenario", "seed", "mode", "p", "q", "steps",
                  "completed", "sim_time_ms"]


def mann_whitney_u(sample_a: list, sample_b: list) -> tuple[float, float]:
    """U statistic of sample_a (pairs won + half the ties) and the
    two-tailed P from the tie-corrected, continuity-corrected normal
    approximation."""
    n1, n2 = len(sample_a), len(sample_b)
    if n1 == 0 or n2 == 0:
        raise ValueError("mann_whitney_u needs non-empty samples")
    pooled = sorted([(v, 0) for v in sample_a] + [(v, 1) for v in sample_b])
    ranks: dict[int, float] = {}
    r1 = 0.0
    tie_term = 0.0
    i = 0
    while i < len(pooled):
        j = i
        while j < len(pooled) and pooled[j][0] == pooled[i][0]:
            j += 1
        midrank = (i + 1 + j) / 2.0
        t = j - i
        if t > 1:
            tie_term += t ** 3 - t
        for k in range(i, j):
            if pooled[k][1] == 0:
                r1 += midrank
        i = j
    u1 = r1 - n1 * (n1 + 1) / 2.0
    n = n1 + n2
    mu = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return u1, 1.0
    diff = u1 - mu
    if diff > 0:
        diff -= 0.5
    elif diff < 0:
        diff += 0.5
    z = diff / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return u1, min(1.0, p)


@dataclass
class ExperimentPlan:
    fields: list[str]
    modes: list[str] = field(default_factory=lambda: ["afada", "selfnav"])
    p: float = 0.01
    q_values: list[float] = field(default_factory=lambda: [0.01, 0.05])
    repetitions: int = 30
    seed_base: int = 1000
    paired: bool = True
    loss: float = 0.0
    reservation: str = "single"

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def seeds(self, mode_index: int, rep: int) -> int:
        if self.paired:
            return self.seed_base + rep
        return self.seed_base + rep * len(self.modes) + mode_index


def parse_plan(text: str) -> ExperimentPlan:
    kw: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"plan line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "fields":
            kw["fields"] = [v.strip() for v in value.split(",") if v.strip()]
        elif key == "modes":
            kw["modes"] = [v.strip() for v in value.split(",") if v.strip()]
        elif key == "q":
            kw["q_values"] = [float(v) for v in value.split(",") if v.strip()]
        elif key == "p":
            kw["p"] = float(value)
        elif key == "reps":
            kw["repetitions"] = int(value)
        elif key == "seed_base":
            kw["seed_base"] = int(value)
        elif key == "paired":
            kw["paired"] = value.lower() in ("1", "true", "yes")
        elif key == "loss":
            kw["loss"] = float(value)
        elif key == "reservation":
            kw["reservation"] = value
        else:
            raise ValueError(f"plan line {lineno}: unknown key {key!r}")
    if "fields" not in kw:
        raise ValueError("plan needs a fields= line")
    return ExperimentPlan(**kw)


@dataclass
class Condition:
    steps: list[int] = field(default_factory=list)
    completed: int = 0
    failed: int = 0

    @property
    def median(self) -> float | None:
        return median(self.steps) if self.steps else None


@dataclass
class ResultTable:
    plan: ExperimentPlan
    rows: list[dict] = field(default_factory=list)
    conditions: dict[tuple, Condition] = field(default_factory=dict)
    tests: dict[tuple, dict] = field(default_factory=dict)

    def condition(self, fld: str, q: float, mode: str) -> Condition:
        return self.conditions.setdefault((fld, q, mode), Condition())

    def add_row(self, row: dict) -> None:
        self.rows.append(row)
        cond = self.condition(row["scenario"], row["q"], row["mode"])
        if row["completed"]:
            cond.completed += 1
            cond.steps.append(row["steps"])
        else:
            cond.failed += 1

    def finish(self) -> None:
        for fld in self.plan.fields:
            for q in self.plan.q_values:
                if len(self.plan.modes) != 2:
                    continue
                ca = self.conditions.get((fld, q, self.plan.modes[0]))
                cb = self.conditions.get((fld, q, self.plan.modes[1]))
                if not ca or not cb:
                    continue
                if len(ca.steps) < 2 or len(cb.steps) < 2:
                    continue  # a one-run sample carries no statistic
                u, p = mann_whitney_u(ca.steps, cb.steps)
                self.tests[(fld, q)] = {"U": u, "n1": len(ca.steps),
                                        "n2": len(cb.steps), "P": p}


def _load_scenario(name: str):
    from .scenarios import load_builtin, parse_scenario
    from pathlib import Path

    path = Path(name)
    if path.suffix == ".field" and path.exists():
        return parse_scenario(path.read_text(), name=path.stem)
    return load_builtin(name)


def run_plan(plan: ExperimentPlan, progress=None) -> ResultTable:
    table = ResultTable(plan)
    for fld in plan.fields:
        scenario = _load_scenario(fld)
        for q in plan.q_values:
            for mode_index, mode in enumerate(plan.modes):
                for rep in range(plan.repetitions):
                    seed = plan.seeds(mode_index, rep)
                    overrides = {"p": plan.p, "q": q, "loss_prob": plan.loss,
                                 "reservation_mode": plan.reservation}
                    try:
                        result = eng.run(scenario, seed, mode_override=mode,
                                         collect_trace=False, overrides=overrides)
                        row = result.metrics_row(fld, mode, plan.p, q)
                    except Exception as exc:  # a crashed run is a failed run
                        row = {"scenario": fld, "seed": seed, "mode": mode,
                               "p": plan.p, "q": q, "steps": -1,
                               "completed": False, "sim_time_ms": -1,
                               "error": str(exc)}
                    table.add_row({k: row.get(k) for k in METRIC_COLUMNS})
                    if progress is not None:
                        progress(row)
    table.finish()
    return table


# ----------------------------------------------------------------------
# persistence and report

def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["completed"] = "1" if row["completed"] else "0"
        writer.writerow(out)
    return buf.getvalue()


def rows_from_csv(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append({"scenario": rec["scenario"], "seed": int(rec["seed"]),
                     "mode": rec["mode"], "p": float(rec["p"]),
                     "q": float(rec["q"]), "steps": int(rec["steps"]),
                     "completed": rec["completed"] == "1",
                     "sim_time_ms": int(rec["sim_time_ms"])})
    return rows


def table_from_rows(plan: ExperimentPlan, rows: list[dict]) -> ResultTable:
    table = ResultTable(plan)
    for row in rows:
        table.add_row(row)
    table.finish()
    return table


def render_report(table: ResultTable) -> str:
    plan = table.plan
    lines = ["# Dynamic-environment navigation results", ""]
    lines.append(f"p={plan.p}, loss={plan.loss}, repetitions={plan.repetitions}, "
                 f"{'paired' if plan.paired else 'unpaired'} seeds, "
                 f"{plan.reservation}-step reservation")
    lines.append("")
    for fld in plan.fields:
        lines.append(f"## {fld}")
        lines.append("")
        lines.append("| q | mode | completed | failed | median steps |")
        lines.append("|---|------|-----------|--------|--------------|")
        for q in plan.q_values:
            for mode in plan.modes:
                cond = table.conditions.get((fld, q, mode))
                if cond is None:
                    continue
                med = "n/a" if cond.median is None else f"{cond.median:g}"
                lines.append(f"| {q:g} | {mode} | {cond.completed} "
                             f"| {cond.failed} | {med} |")
        stat_lines = []
        for q in plan.q_values:
            test = table.tests.get((fld, q))
            if test is None:
                continue
            stat_lines.append(
                f"- q={q:g}: U={test['U']:g}, n1={test['n1']}, "
                f"n2={test['n2']}, two-tailed P={test['P']:.3g}")
        if stat_lines:
            lines.append("")
            lines.append(f"Mann-Whitney ({plan.modes[0]} vs {plan.modes[1]}, "
                         "failed runs excluded):")
            lines.extend(stat_lines)
        lines.append("")
    return "\n".join(lines)
