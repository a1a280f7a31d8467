import json

import pytest

from ssaqn.gamefmt import bundled_game, load_game


def game_doc(states, start="s0", max_steps=20, r_max=10.0, step_penalty=-0.1, rules=None, game_id="t"):
    """Compact game document builder.

    ``states`` maps ids to either a number (terminal with that reward), a
    string (terminal classified by ``rules``) or a list of actions. An action is
    a target id or a list of (target, p) pairs.
    """
    out = {}
    for sid, spec in states.items():
        if isinstance(spec, (int, float)):
            out[sid] = {"description_variants": [f"ending {sid}"], "terminal": True, "ending_reward": spec,
                        "actions": []}
        elif isinstance(spec, str):
            out[sid] = {"description_variants": [spec], "terminal": True, "actions": []}
        else:
            actions = []
            for k, act in enumerate(spec):
                trans = [(act, 1.0)] if isinstance(act, str) else act
                actions.append({"description_variants": [f"go {sid} {k}"],
                                "transitions": [{"target": t, "p": p} for t, p in trans]})
            out[sid] = {"description_variants": [f"room {sid}"], "terminal": False, "actions": actions}
    return {"format": 1, "id": game_id, "title": game_id, "start_state": start, "max_steps": max_steps,
            "r_max": r_max, "step_penalty": step_penalty, "states": out, "ending_rules": rules or []}


def make_game(states, **kw):
    return load_game(json.dumps(game_doc(states, **kw)))


@pytest.fixture(scope="session")
def mini_quest():
    return bundled_game("mini-quest")


@pytest.fixture(scope="session")
def loop_trap():
    return bundled_game("loop-trap")


@pytest.fixture(scope="session")
def mini_fate():
    return bundled_game("mini-fate")


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
