"""Command-line surface: exit codes, artifacts, determinism."""

import json

from cellnav.cli import main

import pytest


def test_run_writes_trace_and_metrics(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "simple-loop", "--seed", "7", "--out", str(out)])
    assert code == 0
    assert (out / "trace.jsonl").exists()
    metrics = (out / "metrics.csv").read_text()
    assert "scenario,seed,mode,p,q,steps,completed,sim_time_ms" in metrics
    assert "simple-loop,7" in metrics


def test_run_missing_file_exits_one(capsys):
    code = main(["run", "definitely-missing.field"])
    assert code == 1
    err = capsys.readouterr().err
    assert "definitely-missing.field" in err


def test_run_parse_error_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.field"
    bad.write_text("..\n...\n")
    code = main(["run", str(bad)])
    assert code == 1
    assert "line" in capsys.readouterr().err


def test_run_twice_identical_metrics(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", "two-bridge", "--seed", "5", "--out", str(out1),
                 "--quiet"]) == 0
    assert main(["run", "two-bridge", "--seed", "5", "--out", str(out2),
                 "--quiet"]) == 0
    assert (out1 / "metrics.csv").read_text() == (out2 / "metrics.csv").read_text()
    assert (out1 / "trace.jsonl").read_bytes() == (out2 / "trace.jsonl").read_bytes()


def test_run_task_failure_exit_code(tmp_path):
    scn = tmp_path / "stuck.field"
    scn.write_text("0#G\n\nbudget_time_ms=3000\nrobot 0 mode=afada goals=G\n")
    code = main(["run", str(scn), "--seed", "1", "--out",
                 str(tmp_path / "o"), "--quiet"])
    assert code == 2


def test_run_json_format(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "simple-loop", "--seed", "3", "--out", str(out),
                 "--format", "json", "--quiet"]) == 0
    row = json.loads((out / "metrics.json").read_text())
    assert row["scenario"] == "simple-loop" and row["completed"] is True


def test_plan_produces_csv_and_report(tmp_path):
    plan = tmp_path / "tiny.plan"
    plan.write_text("fields=simple-loop\nmodes=afada,selfnav\np=0\n"
                    "q=0.01\nreps=2\nseed_base=5\n")
    out = tmp_path / "res"
    assert main(["plan", str(plan), "--out", str(out), "--quiet"]) == 0
    assert (out / "runs.csv").exists()
    report = (out / "report.md").read_text()
    assert "simple-loop" in report and "median" in report
    out2 = tmp_path / "res2"
    assert main(["plan", str(plan), "--out", str(out2), "--quiet"]) == 0
    assert (out / "report.md").read_text() == (out2 / "report.md").read_text()
    assert (out / "runs.csv").read_text() == (out2 / "runs.csv").read_text()


def test_plan_missing_file_exits_one(capsys):
    assert main(["plan", "nope.plan"]) == 1


def test_replay_initial_state(tmp_path, capsys):
    out = tmp_path / "o"
    main(["run", "two-bridge", "--seed", "4", "--out", str(out), "--quiet"])
    capsys.readouterr()
    code = main(["replay", str(out / "trace.jsonl"), "--index", "0"])
    assert code == 0
    snap = json.loads(capsys.readouterr().out)
    assert set(snap) == {"grid", "tables", "occupancy", "robots"}
    assert all(rec["status"] == "correct" for rec in snap["grid"].values())


def test_replay_bad_index_exits_one(tmp_path, capsys):
    out = tmp_path / "o"
    main(["run", "simple-loop", "--out", str(out), "--quiet"])
    capsys.readouterr()
    assert main(["replay", str(out / "trace.jsonl"), "--index", "999999"]) == 1


def test_inspect_prints_layout(capsys):
    assert main(["inspect", "two-bridge"]) == 0
    out = capsys.readouterr().out
    assert "cells: 16" in out
    assert "S.#.G" in out
    assert "bfs=6" in out


def test_unknown_verb_exits_one(capsys):
    assert main(["frobnicate"]) == 1
