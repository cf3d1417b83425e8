"""Dialogue MDP value types and the reward/return arithmetic shared by every module.

All types here are frozen dataclasses; a transition never mutates the state
it was produced from.
"""

from __future__ import annotations

import enum
import functools
import json
import math
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from dualplan.errors import UnrecognizedVerdict


class Speaker(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"


@dataclass(frozen=True)
class Strategy:
    id: int
    name: str
    instruction: str

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"strategy id must be non-negative, got {self.id}")
        if not self.instruction.strip():
            raise ValueError(f"strategy {self.name!r} has an empty instruction")


@dataclass(frozen=True)
class StrategyCatalog:
    task: str
    strategies: tuple[Strategy, ...]

    def __post_init__(self):
        ids = [s.id for s in self.strategies]
        if ids != list(range(len(ids))):
            raise ValueError(f"strategy ids must be contiguous from 0, got {ids}")

    def __len__(self) -> int:
        return len(self.strategies)

    def __getitem__(self, idx: int) -> Strategy:
        return self.strategies[idx]

    def __iter__(self):
        return iter(self.strategies)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.strategies]

    def resolve(self, key: int | str) -> Strategy:
        """Look a strategy up by id or (case-insensitive) name."""
        if isinstance(key, int):
            return self.strategies[key]
        lowered = key.strip().lower()
        for s in self.strategies:
            if s.name.lower() == lowered:
                return s
        raise KeyError(f"unknown strategy {key!r} for task {self.task}")


@dataclass(frozen=True)
class VerdictEntry:
    verdict: str
    score: float
    patterns: tuple[str, ...] = ()

    @property
    def key_phrases(self) -> tuple[str, ...]:
        return self.patterns or (self.verdict,)


@functools.lru_cache(maxsize=None)
def _phrase_regex(phrase: str) -> re.Pattern:
    return re.compile(r"\b" + re.escape(phrase.lower()) + r"\b")


_SENTENCE_END = re.compile(r"^(.*?[.!?])(?=\s|$)", re.DOTALL)


def first_sentence(text: str) -> str:
    for line in text.strip().splitlines():
        line = line.strip()
        if line:
            m = _SENTENCE_END.match(line)
            return m.group(1) if m else line
    return ""


def _normalize(text: str) -> str:
    return first_sentence(text).replace("’", "'").lower()


@dataclass(frozen=True)
class RewardMap:
    verdicts: tuple[VerdictEntry, ...]
    success_score: float = 1.0
    # CraigslistBargain: deal verdicts are scored by the deal price, see env.bargain
    price_scored: bool = False

    def match(self, text: str) -> VerdictEntry:
        """Return the single entry whose key phrase occurs in the verdict.

        Matching runs on the first sentence, case-insensitively, on word
        boundaries. A hit nested inside a longer hit of another entry is
        dropped, so "not reached a deal" does not also count as "reached a deal".
        """
        sentence = _normalize(text)
        hits = []
        for idx, entry in enumerate(self.verdicts):
            for phrase in entry.key_phrases:
                for m in _phrase_regex(phrase).finditer(sentence):
                    hits.append((m.start(), m.end(), idx))
        kept = {
            idx
            for start, end, idx in hits
            if not any(
                other != idx and s2 <= start and end <= e2 and (e2 - s2) > (end - start)
                for s2, e2, other in hits
            )
        }
        if len(kept) != 1:
            found = [self.verdicts[i].verdict for i in sorted(kept)]
            raise UnrecognizedVerdict(f"verdict {text!r} matched {found or 'no entry'}")
        return self.verdicts[kept.pop()]

    def score(self, text: str) -> float:
        return self.match(text).score


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str
    turn_index: int
    # strategy id that produced a system utterance; None for user turns and openers
    strategy: int | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("utterance text must be non-empty")
        if self.turn_index < 0:
            raise ValueError("turn_index must be non-negative")


@dataclass(frozen=True)
class DialogueState:
    background: Mapping[str, Any]
    history: tuple[Utterance, ...] = ()
    turn: int = 0
    done: bool = False

    def __post_init__(self):
        for prev, cur in zip(self.history, self.history[1:]):
            if cur.turn_index <= prev.turn_index:
                raise ValueError("utterance turn_index must strictly increase")

    @property
    def case_id(self) -> str | None:
        return self.background.get("case_id")

    @property
    def last_user_text(self) -> str:
        for utt in reversed(self.history):
            if utt.speaker is Speaker.USER:
                return utt.text
        return ""

    @property
    def actions(self) -> tuple[int, ...]:
        """Strategy ids of the system turns taken so far, oldest first."""
        return tuple(u.strategy for u in self.history if u.strategy is not None)

    def extend(self, system_text: str, strategy: int, user_text: str) -> DialogueState:
        """Append one system/user exchange and advance the turn counter."""
        nxt = self.history[-1].turn_index + 1 if self.history else 0
        history = self.history + (
            Utterance(Speaker.SYSTEM, system_text, nxt, strategy),
            Utterance(Speaker.USER, user_text, nxt + 1),
        )
        return replace(self, history=history, turn=self.turn + 1)

    def finished(self) -> DialogueState:
        return replace(self, done=True)

    def to_dict(self) -> dict:
        return {
            "background": dict(self.background),
            "history": [
                {
                    "speaker": u.speaker.value,
                    "text": u.text,
                    "turn_index": u.turn_index,
                    "strategy": u.strategy,
                }
                for u in self.history
            ],
            "turn": self.turn,
            "done": self.done,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> DialogueState:
        history = tuple(
            Utterance(Speaker(u["speaker"]), u["text"], u["turn_index"], u.get("strategy"))
            for u in d.get("history", ())
        )
        return cls(dict(d["background"]), history, d.get("turn", 0), d.get("done", False))


@dataclass(frozen=True)
class TaskSpec:
    name: str
    catalog: StrategyCatalog
    reward_map: RewardMap
    max_turns: int = 8
    gamma: float = 0.999
    critic_samples: int = 10

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValueError("max_turns must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.critic_samples < 1:
            raise ValueError("critic_samples must be positive")

    @property
    def n_actions(self) -> int:
        return len(self.catalog)


@dataclass(frozen=True)
class Transition:
    state: DialogueState
    action: int
    reward: float
    next_state: DialogueState
    done: bool
    verdicts: tuple[str, ...] = ()
    # provenance: "policy", "mcts", "logged" or "human"
    source: str = "policy"
    deal_price: float | None = None

    def to_dict(self) -> dict:
        return {
            "state": self.state.to_dict(),
            "action": self.action,
            "reward": self.reward,
            "next_state": self.next_state.to_dict(),
            "done": self.done,
            "verdicts": list(self.verdicts),
            "source": self.source,
            "deal_price": self.deal_price,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Transition:
        return cls(
            state=DialogueState.from_dict(d["state"]),
            action=int(d["action"]),
            reward=float(d["reward"]),
            next_state=DialogueState.from_dict(d["next_state"]),
            done=bool(d["done"]),
            verdicts=tuple(d.get("verdicts", ())),
            source=d.get("source", "policy"),
            deal_price=d.get("deal_price"),
        )


@dataclass(frozen=True)
class Episode:
    task: str
    transitions: tuple[Transition, ...]
    success: bool
    turns: int
    deal_price: float | None = None
    case_id: str | None = None
    stage: str | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.turns != len(self.transitions):
            raise ValueError(f"turns={self.turns} but {len(self.transitions)} transitions")

    @classmethod
    def from_transitions(cls, task: str, transitions: Sequence[Transition], success: bool, **kw):
        return cls(task, tuple(transitions), success, len(transitions), **kw)

    @property
    def rewards(self) -> list[float]:
        return [t.reward for t in self.transitions]

    @property
    def initial_state(self) -> DialogueState | None:
        return self.transitions[0].state if self.transitions else None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "transitions": [t.to_dict() for t in self.transitions],
            "success": self.success,
            "turns": self.turns,
            "deal_price": self.deal_price,
            "case_id": self.case_id,
            "stage": self.stage,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Episode:
        return cls(
            task=d["task"],
            transitions=tuple(Transition.from_dict(t) for t in d["transitions"]),
            success=bool(d["success"]),
            turns=int(d["turns"]),
            deal_price=d.get("deal_price"),
            case_id=d.get("case_id"),
            stage=d.get("stage"),
            meta=dict(d.get("meta") or {}),
        )


def map_verdicts_to_reward(verdicts: Iterable[str], reward_map: RewardMap) -> float:
    """Mean of the mapped scores of the critic's verdicts."""
    scores = [reward_map.score(v) for v in verdicts]
    if not scores:
        raise UnrecognizedVerdict("no verdicts to score")
    return math.fsum(scores) / len(scores)


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    """Q-hat for every step: sum_{k>=t} gamma^(k-t) r_k, computed back to front."""
    out = [0.0] * len(rewards)
    acc = 0.0
    for k in range(len(rewards) - 1, -1, -1):
        acc = rewards[k] + gamma * acc
        out[k] = acc
    return out


def cumulative_return(episode: Episode, t: int, gamma: float) -> float:
    """Discounted return from 1-based turn ``t`` to the end of the episode."""
    if not 1 <= t <= len(episode.transitions):
        raise IndexError(f"turn {t} outside 1..{len(episode.transitions)}")
    return discounted_returns(episode.rewards[t - 1:], gamma)[0]


def is_success(reward: float, reward_map: RewardMap) -> bool:
    return reward >= reward_map.success_score


def write_episodes(path: str | Path, episodes: Iterable[Episode], append: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a" if append else "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_dict(), ensure_ascii=False) + "\n")


def read_episodes(path: str | Path) -> list[Episode]:
    with Path(path).open(encoding="utf-8") as fh:
        return [Episode.from_dict(json.loads(line)) for line in fh if line.strip()]
