"""Scenario library: grammar, canonical files, and the three demos."""

import pytest

from cellnav import engine as eng
from cellnav.scenarios import (demo_mapf, demo_parking, demo_reconfig,
                               list_builtin, load_builtin, parse_scenario)
from cellnav.topology import FieldParseError

from conftest import make_scenario, scenario_text


def test_builtin_library_contents():
    names = list_builtin()
    for expected in ("simple-loop", "two-bridge", "two-loop", "reconfig",
                     "parking", "mapf-4x3"):
        assert expected in names


@pytest.mark.parametrize("name", ["simple-loop", "two-bridge", "two-loop",
                                  "reconfig", "parking", "mapf-4x3"])
def test_every_builtin_runs_clean_without_loss(name):
    scn = load_builtin(name)
    result = eng.run(scn, 7, overrides={"p": 0.0, "q": 0.0, "loss_prob": 0.0},
                     collect_trace=False)
    assert result.completed, f"{name} did not complete"
    assert not result.violations


def test_robot_directive_grammar():
    scn = make_scenario(["0.S", "..G"],
                        directives=["robot 0 mode=selfnav goals=G,S"])
    spec = scn.robots[0]
    assert spec.mode == "selfnav"
    assert spec.start == (0, 0)
    assert spec.goals == [(2, 1), (2, 0)]


def test_robot_defaults_start_to_s_target():
    scn = make_scenario(["S.G"], params={"trips": "2"},
                        directives=["robot 0 mode=afada"])
    spec = scn.robots[0]
    assert spec.start == (0, 0)
    assert spec.goals == [(2, 0), (0, 0)] * 2


def test_selfnav_park_goal_rejected():
    with pytest.raises(FieldParseError):
        make_scenario(["0."], directives=["robot 0 mode=selfnav goals=park"])


def test_script_validation_errors():
    with pytest.raises(FieldParseError):
        make_scenario([".."], directives=["at 1000 add (0,0)"])  # occupied
    with pytest.raises(FieldParseError):
        make_scenario([".."], directives=["at 1000 remove (5,5)"])
    with pytest.raises(FieldParseError):
        make_scenario([".."], directives=["at 2000 fail (1,0)",
                                          "at 1000 fail (1,0)"])  # times decrease


def test_policy_grammar_and_park_dirs():
    scn = make_scenario(["..", ".."],
                        directives=["policy (0,0) parking",
                                    "policy (1,0) one-way N",
                                    "policy (1,1) one-way N"])
    assert scn.policies[(0, 0)].parking
    assert scn.policies[(1, 0)].one_way == "N"
    assert scn.policies[(1, 0)].park_dirs == ["W"]
    assert scn.policies[(1, 1)].park_dirs == []


def test_duplicate_robot_ids_rejected():
    with pytest.raises(FieldParseError):
        make_scenario(["01"], directives=["robot 0 mode=afada goals=(1,0)",
                                          "robot 0 mode=afada goals=(0,0)"])


# ----------------------------------------------------------------------
# reconfigurable environment demo

def test_reconfig_robot_waits_until_reconnection():
    scn = demo_reconfig()
    result = eng.run(scn, 7)
    add_ts = [r["t"] for r in result.trace if r["kind"] == "topo"
              and r["payload"]["op"] == "add"]
    first_add = min(add_ts)
    hops_before = [r for r in result.trace if r["kind"] == "robot"
                   and r["payload"].get("event") == "hop" and r["t"] <= first_add]
    assert not hops_before
    waits = [r for r in result.trace if r["kind"] == "deliver"
             and r["payload"]["kind"] == "instruction"
             and r["payload"]["op"] == "wait" and r["t"] < first_add]
    assert waits, "robot should be told to wait while the goal is unreachable"


def test_reconfig_outbound_and_return_routes_differ():
    scn = demo_reconfig()
    result = eng.run(scn, 7)
    assert result.completed
    adds = {tuple(r["payload"]["coord"]): r["payload"]["cell"]
            for r in result.trace if r["kind"] == "topo"
            and r["payload"]["op"] == "add"}
    bridge = adds[(2, 1)]
    late = adds[(0, 1)]
    hops = [r["payload"]["to"] for r in result.trace if r["kind"] == "robot"
            and r["payload"].get("event") == "hop"]
    goal_cell = 3  # G at (0,2) is the fourth cell of the initial grid
    outbound = hops[:hops.index(goal_cell) + 1]
    ret = hops[hops.index(goal_cell) + 1:]
    assert bridge in outbound
    assert late in ret and bridge not in ret


# ----------------------------------------------------------------------
# automated parking demo

def test_parking_all_robots_park_dwell_and_leave():
    scn = demo_parking()
    for seed in (1, 2, 3):
        result = eng.run(scn, seed)
        assert result.completed and not result.violations
        despawns = [r for r in result.trace if r["kind"] == "robot"
                    and r["payload"].get("event") == "despawn"]
        assert len(despawns) == 4
        dwells = [r for r in result.trace if r["kind"] == "robot"
                  and r["payload"].get("event") == "dwell"]
        assert len(dwells) == 4
        for d in dwells:
            assert 5000 <= d["payload"]["dwell_ms"] <= 15000


def test_parking_full_lot_circulates_without_collision():
    """Six blockers keep every space occupied; the seeker circulates
    the one-way circuit without parking and without any collision."""
    rows = ["....", "....", "....", "...."]
    directives = [
        "policy (0,0) parking", "policy (0,1) parking", "policy (0,2) parking",
        "policy (3,0) parking", "policy (3,1) parking", "policy (3,2) parking",
        "policy (1,0) one-way E", "policy (1,1) one-way N",
        "policy (1,2) one-way N", "policy (1,3) one-way N",
        "policy (2,0) one-way S", "policy (2,1) one-way S",
        "policy (2,2) one-way S", "policy (2,3) one-way W",
    ]
    rid = 1
    for x in (0, 3):
        for y in (0, 1, 2):
            directives.append(f"robot {rid} at ({x},{y}) mode=afada goals=({x},{y})")
            rid += 1
    directives.append("robot 7 at (1,3) mode=afada goals=park,(2,3) despawn=true")
    scn = parse_scenario(scenario_text(rows, {"loss": "0"}, directives),
                         name="full-lot")
    e = eng.Engine(scn, 3, overrides={"budget_time_ms": 90_000})
    e.advance(80_000)
    assert not e.violations
    seeker = e.robots[7]
    assert not seeker.done
    assert seeker.robot.steps >= 8, "seeker should circulate the circuit"
    parked = [r for r in e._trace if r["kind"] == "robot"
              and r["payload"].get("event") == "dwell"]
    assert not parked


def test_one_way_cells_never_ack_against_flow_in_running_demo():
    scn = demo_parking()
    result = eng.run(scn, 5)
    grid, _ = scn.build_grid()
    one_way = {}
    for coord, policy in scn.policies.items():
        if policy.one_way:
            one_way[grid.cell_at(coord)] = policy.one_way
    from cellnav.topology import OPPOSITE, DELTAS, step
    coords = {cid: grid.coord_of(cid) for cid in grid.cell_ids()}
    for rec in result.trace:
        if rec["kind"] != "deliver" or rec["payload"]["kind"] != "reserve_ack":
            continue
        src = int(rec["src"].split(":")[1])
        dst = int(rec["dst"].split(":")[1])
        flow = one_way.get(src)
        if flow is None or not rec["src"].startswith("cell:") \
                or not rec["dst"].startswith("cell:"):
            continue
        # an ack back toward the flow direction would mean the granted
        # robot enters against the flow
        assert step(coords[src], flow) != coords.get(dst), rec


# ----------------------------------------------------------------------
# multi-robot pathfinding demo

def test_mapf_single_robot_is_bfs_optimal():
    scn = demo_mapf(n_robots=1)
    for mode in ("single", "multi"):
        result = eng.run(scn, 2, overrides={"reservation_mode": mode},
                         collect_trace=False)
        assert result.completed and result.total_steps == 5


def test_mapf_seeded_batch_success_rates():
    for mode in ("single", "multi"):
        ok = sum(eng.run(demo_mapf(), seed, overrides={"reservation_mode": mode},
                         collect_trace=False).completed
                 for seed in range(30))
        assert ok >= 29, f"{mode}: {ok}/30"


def test_mapf_multi_step_reserves_ahead():
    result = eng.run(demo_mapf(), 4, overrides={"reservation_mode": "multi"})
    assert result.completed
    chains = {}
    for rec in result.trace:
        if rec["kind"] == "deliver" and rec["payload"]["kind"] == "reserve_ack":
            req = rec["payload"]["req"]
            chains[req] = max(chains.get(req, 0), len(rec["payload"]["path"]))
    mean_chain = sum(chains.values()) / len(chains)
    assert mean_chain > 1.0
