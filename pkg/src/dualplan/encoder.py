"""State encoders: map a DialogueState to a fixed-length feature vector."""

from __future__ import annotations

import hashlib
import json
import re
import zlib
from typing import Protocol, runtime_checkable

import numpy as np

from dualplan.dialogue import DialogueState, TaskSpec

_TOKEN = re.compile(r"[a-z']+|\d+")
_PRICE = re.compile(r"\$\s?(\d[\d,]*(?:\.\d+)?)|(\d[\d,]*(?:\.\d+)?)\s?(?:dollars|bucks)")


@runtime_checkable
class StateEncoder(Protocol):
    dim: int

    def encode(self, state: DialogueState) -> np.ndarray: ...

    def config(self) -> dict: ...


def config_hash(encoder: StateEncoder) -> str:
    blob = json.dumps(encoder.config(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def extract_price(text: str) -> float | None:
    """Last dollar amount mentioned in ``text``, if any."""
    found = None
    for m in _PRICE.finditer(text):
        raw = m.group(1) or m.group(2)
        found = float(raw.replace(",", ""))
    return found


class FeatureEncoder:
    """Hand-built featurizer standing in for a pretrained sentence encoder.

    Layout: [turn/T, one-hot(last strategy), decayed bag of past strategies,
    hashed bag-of-words of the last user utterance, task scalars].
    """

    def __init__(self, task: TaskSpec, n_buckets: int = 64, decay: float = 0.5):
        self.task_name = task.name
        self.n_actions = task.n_actions
        self.max_turns = task.max_turns
        self.strategy_names = task.catalog.names
        self.n_buckets = n_buckets
        self.decay = decay
        self.price_features = task.reward_map.price_scored
        self.dim = 1 + 2 * self.n_actions + n_buckets + (2 if self.price_features else 0)

    def config(self) -> dict:
        return {
            "kind": "feature",
            "task": self.task_name,
            "strategies": self.strategy_names,
            "max_turns": self.max_turns,
            "n_buckets": self.n_buckets,
            "decay": self.decay,
            "price_features": self.price_features,
        }

    def _bag_of_words(self, text: str) -> np.ndarray:
        vec = np.zeros(self.n_buckets)
        tokens = _TOKEN.findall(text.lower().replace("’", "'"))
        for tok in tokens:
            vec[zlib.crc32(tok.encode()) % self.n_buckets] += 1.0
        if tokens:
            vec /= np.sqrt(len(tokens))
        return vec

    def _price_scalars(self, state: DialogueState) -> np.ndarray:
        bg = state.background
        listed = float(bg.get("listed_price", 0.0))
        target = float(bg.get("buyer_target", 0.0))
        price = extract_price(state.last_user_text)
        if price is None or listed <= target:
            return np.zeros(2)
        gap = (price - target) / (listed - target)
        return np.array([float(np.clip(gap, -1.0, 2.0)), 1.0])

    def encode(self, state: DialogueState) -> np.ndarray:
        A = self.n_actions
        out = np.zeros(self.dim)
        out[0] = state.turn / self.max_turns
        actions = state.actions
        if actions:
            out[1 + actions[-1]] = 1.0
            for age, a in enumerate(reversed(actions)):
                out[1 + A + a] += self.decay**age
        start = 1 + 2 * A
        out[start:start + self.n_buckets] = self._bag_of_words(state.last_user_text)
        if self.price_features:
            out[start + self.n_buckets:] = self._price_scalars(state)
        return out

    def encode_many(self, states) -> np.ndarray:
        return np.stack([self.encode(s) for s in states]) if states else np.zeros((0, self.dim))
