import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualplan.env.base import DialogueEnv
from dualplan.env.scripted import ScriptedBackend, enumerate_returns, make_cases
from dualplan.errors import SimulationAborted, StepFailed, TerminalStateError
from dualplan.mcts import MctsConfig, SearchNode, SearchTree, plan, puct_score
from oracles import puct


def test_puct_worked_example():
    assert puct_score(0.5, 0.25, 3, 9, 1.0) == 0.6875


@given(st.floats(-1, 1), st.floats(0, 1), st.integers(0, 500), st.integers(0, 5000), st.floats(0, 5))
def test_puct_matches_reference(q, p, n, total, c):
    assert puct_score(q, p, n, total, c) == pytest.approx(puct(q, p, n, total, c), abs=1e-12)


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=100), st.floats(-5, 5))
def test_backpropagate_keeps_running_mean(values, q0):
    node = SearchNode((), None, N=np.zeros(2, dtype=int), Q=np.full(2, q0))
    for v in values:
        SearchTree.backpropagate([(node, 1)], v)
    assert node.N[1] == len(values)
    assert node.Q[1] == pytest.approx(np.mean(values), abs=1e-9)
    assert node.Q[0] == q0


def test_select_breaks_ties_to_lowest_id(two_phase_env, two_phase_case):
    tree = SearchTree(two_phase_env.initial_state(two_phase_case), two_phase_env)
    assert tree.select(tree.root) == 0


def test_plan_cost_within_budget(two_phase_env, two_phase_case):
    counter = two_phase_env.counter
    tree = SearchTree(two_phase_env.initial_state(two_phase_case), two_phase_env, config=MctsConfig(10))
    result = tree.run()
    assert counter.units() <= 30
    assert counter.units("simulation", "system") == counter.units("simulation", "critic")
    assert result.visits.sum() == 10
    assert result.action == int(np.argmax(result.visits))


def test_cached_prefixes_are_not_resimulated(two_phase_env, two_phase_case):
    tree = SearchTree(two_phase_env.initial_state(two_phase_case), two_phase_env,
                      config=MctsConfig(40), record_trace=True)
    tree.run()
    created = two_phase_env.counter.units("simulation", "system")
    naive = sum(len(s["path"]) for s in tree.trace)
    assert created < naive
    assert created <= 40


def test_realized_transition_costs_nothing(two_phase_env, two_phase_case):
    tree = SearchTree(two_phase_env.initial_state(two_phase_case), two_phase_env)
    res = tree.run()
    before = two_phase_env.counter.units()
    tr = tree.realized_transition(res.action)
    assert two_phase_env.counter.units() == before
    assert tr.action == res.action and tr.source == "mcts"
    with pytest.raises(KeyError):
        SearchTree(two_phase_env.initial_state(two_phase_case), two_phase_env).realized_transition(0)


def test_terminal_root_rejected(two_phase_env, two_phase_case):
    state = two_phase_env.initial_state(two_phase_case).finished()
    with pytest.raises(TerminalStateError):
        plan(state, None, two_phase_env)


def test_backend_failure_aborts_simulation(esconv, two_phase, fixed_backend):
    class Broken(fixed_backend):
        def user_respond(self, state):
            raise StepFailed("down")

    env = DialogueEnv(esconv, Broken())
    with pytest.raises(SimulationAborted):
        plan(env.initial_state({"situation": "x"}), None, env)


def test_prior_bias_changes_choice(esconv, two_phase, fixed_backend):
    # flat values everywhere: the prior alone decides
    env = DialogueEnv(esconv, fixed_backend())

    class Prior:
        def distribution(self, state):
            p = np.full(8, 0.01)
            p[5] = 1 - 0.07
            return p

    res = plan(env.initial_state({"situation": "x"}), Prior(), env, MctsConfig(5))
    assert res.action == 5


def test_finds_optimum_on_two_phase(esconv, two_phase):
    from dualplan.env.scripted import sub_task

    task = sub_task(esconv, 8, 2)
    case = make_cases(two_phase, 1, seed=3)[0]
    oracle = enumerate_returns(two_phase, task, case)
    env = DialogueEnv(task, ScriptedBackend(two_phase, seed=0))
    assert plan(env.initial_state(case), None, env, MctsConfig(50)).action == oracle.best_first_action


def test_trace_dump(tmp_path, two_phase_env, two_phase_case):
    tree = SearchTree(two_phase_env.initial_state(two_phase_case), two_phase_env, record_trace=True)
    tree.run(3)
    data = json.loads(tree.dump_trace(tmp_path / "t.json").read_text())
    assert len(data["simulations"]) == 3
    assert sum(data["tree"]["N"]) == 3


def test_config_validation():
    with pytest.raises(ValueError):
        MctsConfig(n_simulations=0)
    with pytest.raises(ValueError):
        MctsConfig(c_p=-1)
