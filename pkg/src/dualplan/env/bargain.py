"""Price bargaining helpers: deal-answer parsing, sale-to-list ratio, price-scored rewards."""

from __future__ import annotations

import math
import re
from collections.abc import Mapping, Sequence

from dualplan.dialogue import RewardMap, first_sentence
from dualplan.errors import InvalidPrices, ParseFailure

_NO_DEAL = re.compile(r"\bnot\s+reached\s+a\s+deal\b", re.IGNORECASE)
_DEAL = re.compile(r"\breached\s+a\s+deal\s+at\s*\$?\s*(\d[\d,]*(?:\.\d+)?)", re.IGNORECASE)


def parse_deal_answer(text: str) -> float | None:
    """Price from "They have reached a deal at $X.", None for "They have not reached a deal."."""
    sentence = first_sentence(text)
    if _NO_DEAL.search(sentence):
        return None
    m = _DEAL.search(sentence)
    if m is None:
        raise ParseFailure(f"unrecognized deal answer: {text!r}")
    return float(m.group(1).replace(",", ""))


def extract_deal(state, backend) -> float | None:
    """Ask the critic once whether the conversation closed a deal and at what price."""
    return parse_deal_answer(backend.critic_judge(state, 0))


def compute_sl(deal_price: float | None, listed: float, buyer_target: float) -> float:
    """Sale-to-list ratio from the buyer's side: 1 at the buyer's target, 0 at the list price."""
    if not listed > buyer_target > 0:
        raise InvalidPrices(f"need listed > buyer_target > 0, got {listed} and {buyer_target}")
    if deal_price is None:
        return 0.0
    sl = (listed - deal_price) / (listed - buyer_target)
    return min(max(sl, 0.0), 1.5)


def bargain_evaluation(verdicts: Sequence[str], background: Mapping, reward_map: RewardMap):
    """Score deal verdicts by price and the rest by the reward map.

    A deal sample scores min(SL, 1); the state counts as a deal when most
    samples report one, at the median reported price.
    """
    from dualplan.env.base import Evaluation, median_price

    listed = float(background["listed_price"])
    target = float(background["buyer_target"])
    scores, prices = [], []
    for v in verdicts:
        entry = reward_map.match(v)
        price = parse_deal_answer(v)
        if price is None:
            scores.append(entry.score)
        else:
            prices.append(price)
            scores.append(min(compute_sl(price, listed, target), 1.0))
    deal = 2 * len(prices) > len(verdicts)
    reward = math.fsum(scores) / len(scores)
    return Evaluation(reward, tuple(verdicts), deal, median_price(prices) if deal else None)
