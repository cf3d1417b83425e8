import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualplan.dialogue import (
    DialogueState,
    Episode,
    Speaker,
    Transition,
    Utterance,
    cumulative_return,
    discounted_returns,
    first_sentence,
    map_verdicts_to_reward,
    read_episodes,
    write_episodes,
)
from dualplan.errors import UnrecognizedVerdict

rewards = st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=12)


@pytest.mark.parametrize("text,score", [
    ("The Patient feels worse.", -1.0),
    ("The Patient feels the same.", -0.5),
    ("The Patient feels better.", 0.1),
    ("The Patient’s issue has been solved.", 1.0),
])
def test_esconv_verdicts(esconv, text, score):
    assert esconv.reward_map.score(text) == score


@pytest.mark.parametrize("text,score", [
    ("The Student’s answer is incorrect.", -1.0),
    ("The Student did not try to translate.", -0.5),
    ("No answer was given.", -0.5),
    ("The Student only correctly translated a part of the sentence.", 0.5),
    ("The answer is partially correct.", 0.5),
    ("The Student correctly translated the whole sentence.", 1.0),
])
def test_cima_verdicts(cima, text, score):
    assert cima.reward_map.score(text) == score


def test_only_first_sentence_counts(esconv):
    assert esconv.reward_map.score("The Patient feels better. Earlier they felt worse.") == 0.1


@pytest.mark.parametrize("text", ["Hard to say.", "", "The Patient feels better and feels worse."])
def test_ambiguous_or_unknown_verdict_raises(esconv, text):
    with pytest.raises(UnrecognizedVerdict):
        esconv.reward_map.match(text)


def test_nested_deal_phrase(cb):
    assert cb.reward_map.match("They have not reached a deal.").verdict == "not reached a deal"


def test_mixed_verdict_mean(esconv):
    verdicts = ["feels worse"] * 3 + ["feels better"] * 5 + ["solved"] * 2
    assert map_verdicts_to_reward(verdicts, esconv.reward_map) == pytest.approx(-0.05, abs=1e-12)


def test_empty_verdicts_raise(esconv):
    with pytest.raises(UnrecognizedVerdict):
        map_verdicts_to_reward([], esconv.reward_map)


def test_first_sentence():
    assert first_sentence("\n  A b. C d.") == "A b."
    assert first_sentence("no stop") == "no stop"


@given(rewards, st.floats(0.0, 1.0))
def test_discounted_returns_recurrence(rs, gamma):
    q = discounted_returns(rs, gamma)
    assert q[-1] == rs[-1]
    for t in range(len(rs) - 1):
        assert q[t] == pytest.approx(rs[t] + gamma * q[t + 1], abs=1e-12)


@given(rewards)
def test_discounted_returns_direct_sum(rs):
    gamma = 0.999
    q = discounted_returns(rs, gamma)
    for t in range(len(rs)):
        direct = sum(gamma ** (k - t) * rs[k] for k in range(t, len(rs)))
        assert q[t] == pytest.approx(direct, abs=1e-12)


def _episode(n=3):
    bg = {"situation": "s", "case_id": "c1"}
    state = DialogueState(bg, (Utterance(Speaker.USER, "hi", 0),))
    transitions = []
    for k in range(n):
        nxt = state.extend(f"sys {k}", k % 2, f"usr {k}")
        transitions.append(Transition(state, k % 2, 0.1 * k, nxt, k == n - 1, ("feels better",), "policy"))
        state = nxt
    return Episode.from_transitions("ESConv", transitions, False, case_id="c1", stage="eval")


def test_cumulative_return_indexing():
    ep = _episode()
    assert cumulative_return(ep, 1, 0.5) == pytest.approx(0.0 + 0.5 * 0.1 + 0.25 * 0.2)
    with pytest.raises(IndexError):
        cumulative_return(ep, 0, 0.5)


def test_episode_round_trip(tmp_path):
    ep = _episode()
    write_episodes(tmp_path / "e.jsonl", [ep, ep])
    back = read_episodes(tmp_path / "e.jsonl")
    assert back == [ep, ep]
    assert json.loads((tmp_path / "e.jsonl").read_text().splitlines()[0])["case_id"] == "c1"


def test_state_invariants():
    s = DialogueState({}, (Utterance(Speaker.USER, "a", 0),))
    assert s.extend("b", 3, "c").actions == (3,)
    with pytest.raises(ValueError):
        DialogueState({}, (Utterance(Speaker.USER, "a", 1), Utterance(Speaker.SYSTEM, "b", 1)))
    with pytest.raises(ValueError):
        Utterance(Speaker.USER, "  ", 0)


def test_episode_turn_count_checked():
    ep = _episode(2)
    with pytest.raises(ValueError):
        Episode("ESConv", ep.transitions, False, 3)


def test_rewards_are_floats():
    assert np.allclose(_episode().rewards, [0.0, 0.1, 0.2])
