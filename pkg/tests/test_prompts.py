import pytest

from dualplan.env.base import initial_state
from dualplan.env.prompts import PromptPack, fill_placeholders, parse_template
from dualplan.errors import ConfigError


@pytest.mark.parametrize("task", ["esconv", "cima", "cb"])
def test_packs_load(task):
    pack = PromptPack.load(task)
    assert pack.assistant and pack.user and pack.critic
    assert pack.critic[0][0] == "system"


def test_parse_template():
    assert parse_template("### system\nA\n### user\nB\nC\n") == [("system", "A"), ("user", "B\nC")]
    with pytest.raises(ConfigError):
        parse_template("stray\n### system\nA")


def test_placeholders():
    text = fill_placeholders("[item name] at [seller target price]", {"item_name": "lamp", "listed_price": 40})
    assert text == "lamp at $40"


def test_no_unfilled_placeholders(cima, cb):
    s = initial_state(cima, {"exercise": "The dog is red.", "situation": "ok"})
    for msgs in (PromptPack.load("cima").critic_messages(s), PromptPack.load("cima").user_messages(s)):
        assert "[exercise]" not in " ".join(m["content"] for m in msgs)
    bg = {"item_name": "lamp", "item_description": "brass", "listed_price": 40.0, "buyer_target": 25.0}
    s = initial_state(cb, bg)
    joined = " ".join(m["content"] for m in PromptPack.load("cb").system_messages(s, "Offer less."))
    assert "$25" in joined and "Offer less." in joined and "[action]" not in joined


def test_missing_files(tmp_path):
    with pytest.raises(ConfigError):
        PromptPack.load("esconv", directory=tmp_path)
