import json

import numpy as np
import pytest

from dualplan.env.base import DialogueEnv
from dualplan.env.scripted import (
    ScriptedBackend,
    ScriptedSimSpec,
    enumerate_returns,
    load_scripted_spec,
    logged_episodes,
    make_cases,
    random_policy_success,
    random_policy_success_memo,
    random_spec,
    sub_task,
)
from dualplan.errors import ConfigError
from dualplan.tasks import load_task


@pytest.mark.parametrize("name,task", [("two_phase", "esconv"), ("esconv", "esconv"), ("cima", "cima"),
                                       ("cb", "cb")])
def test_expert_always_succeeds(name, task):
    spec, task = load_scripted_spec(name), load_task(task)
    env = DialogueEnv(task, ScriptedBackend(spec, seed=0))
    eps = logged_episodes(env, spec, make_cases(spec, 20, seed=0), expert_rate=1.0)
    assert all(ep.success for ep in eps)
    assert all(t.source == "logged" for ep in eps for t in ep.transitions)


def test_spec_round_trip(tmp_path):
    for name in ("two_phase", "esconv", "cima", "cb"):
        spec = load_scripted_spec(name)
        assert ScriptedSimSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
    path = tmp_path / "s.json"
    path.write_text(json.dumps(load_scripted_spec("cima").to_dict()))
    assert load_scripted_spec(path) == load_scripted_spec("cima")
    with pytest.raises(ConfigError):
        load_scripted_spec("nope")


def test_backend_is_pure(esconv, two_phase, two_phase_case):
    a = DialogueEnv(esconv, ScriptedBackend(two_phase, seed=5))
    b = DialogueEnv(esconv, ScriptedBackend(two_phase, seed=5))
    s = a.initial_state(two_phase_case)
    for act in (0, 3, 1):
        ta, tb = a.step(s, act), b.step(s, act)
        assert ta == tb
        s = ta.next_state
        if ta.done:
            break


def test_noise_varies_with_seed(esconv, two_phase):
    cases = make_cases(two_phase, 30, seed=0)
    out = []
    for seed in (0, 1):
        env = DialogueEnv(esconv, ScriptedBackend(two_phase, seed=seed))
        out.append([env.evaluate(env.initial_state(c).extend("x", 0, "y")).verdicts for c in cases])
    assert out[0] != out[1]


def test_make_cases_deterministic(two_phase):
    assert make_cases(two_phase, 5, seed=3) == make_cases(two_phase, 5, seed=3)
    assert make_cases(two_phase, 5, seed=3) != make_cases(two_phase, 5, seed=4)


def test_profile_hints():
    spec = load_scripted_spec("esconv")
    cases = make_cases(spec, 400, seed=0)
    words = set(spec.profile_words.values())
    for c in cases:
        assert any(w in c["hint_text"] for w in words)
    truthful = np.mean([spec.profile_words[c["profile"]] in c["hint_text"] for c in cases])
    assert 0.7 < truthful < 0.95


def test_random_policy_success_agrees_with_memo(esconv):
    spec = load_scripted_spec("two_phase")
    task = sub_task(esconv, 8, 4)
    for case in make_cases(spec, 5, seed=1):
        assert random_policy_success(spec, task, case) == pytest.approx(
            random_policy_success_memo(spec, task, case), abs=1e-12)


def test_enumerate_returns_brute_force(esconv):
    rng = np.random.default_rng(0)
    spec = random_spec(rng, 3)
    task = sub_task(esconv, 3, 2)
    case = make_cases(spec, 1)[0]
    orc = enumerate_returns(spec, task, case)
    best = -np.inf
    for a in range(3):
        r1, s1 = spec.outcome(task, case, (a,))
        if s1:
            best = max(best, r1)
            continue
        for b in range(3):
            best = max(best, r1 + task.gamma * spec.outcome(task, case, (a, b))[0])
    assert orc.best_return == pytest.approx(best)
    assert len(orc.first_action_returns) == 3


def test_enumeration_cap(esconv, two_phase):
    with pytest.raises(ValueError):
        enumerate_returns(two_phase, esconv, make_cases(two_phase, 1)[0])


def test_bargain_offers_and_deal(cb):
    spec = load_scripted_spec("cb")
    case = make_cases(spec, 1, seed=0)[0]
    offer, deal = spec.offer_after(case, [3, 4])
    assert not deal and case["seller_floor"] <= offer < case["listed_price"]
    price, deal = spec.offer_after(case, [3, 4, spec.bargain.closing_actions[0]])
    assert deal and price == pytest.approx(offer)
    env = DialogueEnv(cb, ScriptedBackend(spec))
    ev = env.evaluate(env.initial_state(case).extend("x", spec.bargain.closing_actions[0], "y"))
    assert ev.success and ev.deal_price == case["listed_price"]
    assert ev.reward == 0.0


def test_spec_validation():
    with pytest.raises(ConfigError):
        ScriptedSimSpec("bad", 2, {"default": ((0.0, 1.0),)}, verdict_texts=("a",), user_texts=("b",))
