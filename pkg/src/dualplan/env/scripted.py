"""Deterministic scripted role simulator and its exhaustive-search oracles.

The scripted user carries a hidden score. Each system strategy shifts it by
an amount read from an effect table indexed by case profile and turn phase;
the critic reports the band the score falls in. Bargaining specs instead
track the seller's current offer.
"""

from __future__ import annotations

import itertools
import json
import zlib
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from dualplan.dialogue import DialogueState, Episode, Strategy, StrategyCatalog, TaskSpec
from dualplan.env.bargain import compute_sl
from dualplan.env.base import DialogueEnv, _fmt_price, transition_succeeded
from dualplan.errors import ConfigError


@dataclass(frozen=True)
class BargainSpec:
    # fraction of (offer - floor) the seller gives up after each buyer strategy
    concessions: tuple[float, ...]
    closing_actions: tuple[int, ...]
    item_name: str = "bike"
    item_description: str = "A lightly used road bike."
    listed_price: float = 100.0
    buyer_target: float = 60.0
    floor_range: tuple[float, float] = (0.55, 0.8)


@dataclass(frozen=True)
class ScriptedSimSpec:
    name: str
    n_actions: int
    # profile -> phase -> per-action score change
    effects: Mapping[str, tuple[tuple[float, ...], ...]]
    thresholds: tuple[float, ...] = (-1.0, 1.0, 3.0)
    verdict_texts: tuple[str, ...] = ()
    user_texts: tuple[str, ...] = ()
    initial_scores: tuple[float, ...] = (0.0,)
    phase_cues: tuple[str, ...] = ()
    profile_words: Mapping[str, str] = field(default_factory=dict)
    hint_accuracy: float = 1.0
    ambiguous_rate: float = 0.0
    noise: float = 0.0
    background: Mapping[str, str] = field(default_factory=dict)
    bargain: BargainSpec | None = None

    def __post_init__(self):
        if self.bargain is None:
            if len(self.verdict_texts) != len(self.thresholds) + 1:
                raise ConfigError("need one verdict text per score band")
            if len(self.user_texts) != len(self.thresholds) + 1:
                raise ConfigError("need one user text per score band")
            for profile, table in self.effects.items():
                if any(len(row) != self.n_actions for row in table):
                    raise ConfigError(f"effect rows of profile {profile!r} must have {self.n_actions} entries")
        elif len(self.bargain.concessions) != self.n_actions:
            raise ConfigError("need one concession per action")

    @property
    def profiles(self) -> list[str]:
        return sorted(self.effects) if self.effects else ["default"]

    # -- hidden dynamics -------------------------------------------------

    def score_after(self, background: Mapping, actions: Sequence[int]) -> float:
        table = self.effects[background.get("profile", "default")]
        score = float(background.get("initial_score", self.initial_scores[0]))
        for k, a in enumerate(actions):
            score += table[k % len(table)][a]
        return score

    def band(self, score: float, offsets: np.ndarray | None = None) -> int:
        edges = np.asarray(self.thresholds)
        if offsets is not None:
            edges = edges + offsets
        return int(np.sum(score >= edges))

    def offer_after(self, background: Mapping, actions: Sequence[int]) -> tuple[float, bool]:
        """Seller's standing offer after ``actions`` and whether a deal closed."""
        spec = self.bargain
        offer = float(background.get("listed_price", spec.listed_price))
        floor = float(background["seller_floor"])
        for a in actions:
            if a in spec.closing_actions:
                return offer, True
            offer = round(offer - spec.concessions[a] * (offer - floor), 2)
        return offer, False

    def fill(self, text: str, background: Mapping) -> str:
        for key, value in background.items():
            text = text.replace(f"[{key}]", str(value))
        return text

    # -- noise-free outcome, shared by the oracles -------------------------

    def outcome(self, task: TaskSpec, background: Mapping, actions: Sequence[int]) -> tuple[float, bool]:
        """(reward, success) of the state reached by ``actions`` with noise switched off."""
        if self.bargain is not None:
            offer, deal = self.offer_after(background, actions)
            if deal:
                listed = float(background.get("listed_price", self.bargain.listed_price))
                target = float(background.get("buyer_target", self.bargain.buyer_target))
                return min(compute_sl(offer, listed, target), 1.0), True
            return task.reward_map.score("They have not reached a deal."), False
        verdict = self.fill(self.verdict_texts[self.band(self.score_after(background, actions))], background)
        reward = task.reward_map.score(verdict)
        return reward, reward >= task.reward_map.success_score

    def expert_action(self, background: Mapping, actions: Sequence[int]) -> int:
        """Action with the largest immediate effect (lowest id on ties)."""
        if self.bargain is not None:
            if len(actions) >= 3:
                return self.bargain.closing_actions[0]
            return int(np.argmax(self.bargain.concessions))
        table = self.effects[background.get("profile", "default")]
        return int(np.argmax(table[len(actions) % len(table)]))

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["effects"] = {k: [list(r) for r in v] for k, v in self.effects.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> ScriptedSimSpec:
        d = dict(d)
        try:
            bargain = d.pop("bargain", None)
            if bargain is not None:
                bargain = BargainSpec(**{
                    k: tuple(v) if isinstance(v, list) else v for k, v in bargain.items()
                })
            effects = {k: tuple(tuple(float(x) for x in row) for row in v)
                       for k, v in d.pop("effects", {}).items()}
            tuples = {k: tuple(v) for k, v in d.items() if isinstance(v, list)}
            d.update(tuples)
            return cls(effects=effects, bargain=bargain, **d)
        except TypeError as exc:
            raise ConfigError(f"invalid scripted spec: {exc}") from exc


def load_scripted_spec(name_or_path: str | Path) -> ScriptedSimSpec:
    name = str(name_or_path)
    pkg = resources.files("dualplan.data.scripted")
    if pkg.joinpath(f"{name}.json").is_file():
        return ScriptedSimSpec.from_dict(json.loads(pkg.joinpath(f"{name}.json").read_text("utf-8")))
    path = Path(name)
    if not path.exists():
        raise ConfigError(f"unknown scripted spec {name!r}")
    return ScriptedSimSpec.from_dict(json.loads(path.read_text("utf-8")))


class ScriptedBackend:
    """RoleBackend driven by a ScriptedSimSpec; every reply is a pure function of the state."""

    def __init__(self, spec: ScriptedSimSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed

    def system_respond(self, state: DialogueState, strategy: Strategy) -> str:
        return f"[{strategy.name}] {strategy.instruction}"

    def user_respond(self, state: DialogueState) -> str:
        spec, bg, actions = self.spec, state.background, state.actions
        if spec.bargain is not None:
            offer, deal = spec.offer_after(bg, actions)
            if deal:
                return f"Alright, it's a deal at {_fmt_price(offer)}."
            return f"I can do {_fmt_price(offer)} for the {bg.get('item_name', 'item')}."
        text = spec.user_texts[spec.band(spec.score_after(bg, actions))]
        if spec.phase_cues:
            text += " " + spec.phase_cues[len(actions) % len(spec.phase_cues)]
        if bg.get("hint_text"):
            text += " " + bg["hint_text"]
        return spec.fill(text, bg)

    def _offsets(self, state: DialogueState, sample: int) -> np.ndarray | None:
        if self.spec.noise <= 0:
            return None
        key = [self.seed, zlib.crc32(str(state.case_id).encode()), sample, *state.actions]
        rng = np.random.default_rng(key)
        return rng.uniform(-self.spec.noise, self.spec.noise, len(self.spec.thresholds))

    def critic_judge(self, state: DialogueState, sample: int = 0) -> str:
        spec, bg = self.spec, state.background
        if spec.bargain is not None:
            offer, deal = spec.offer_after(bg, state.actions)
            if deal:
                return f"They have reached a deal at {_fmt_price(offer)}."
            return "They have not reached a deal."
        band = spec.band(spec.score_after(bg, state.actions), self._offsets(state, sample))
        return spec.fill(spec.verdict_texts[band], bg)


def make_cases(spec: ScriptedSimSpec, n: int, seed: int = 0) -> list[dict]:
    """Draw ``n`` case backgrounds (profile, hint text, prices) for a scripted spec."""
    rng = np.random.default_rng(seed)
    profiles = spec.profiles
    cases = []
    for i in range(n):
        bg = dict(spec.background)
        bg["case_id"] = f"{spec.name}-{seed}-{i}"
        profile = profiles[int(rng.integers(len(profiles)))]
        bg["profile"] = profile
        bg["initial_score"] = float(spec.initial_scores[int(rng.integers(len(spec.initial_scores)))])
        if spec.profile_words:
            others = [p for p in profiles if p != profile]
            u = rng.random()
            if u < spec.ambiguous_rate and others:
                decoy = others[int(rng.integers(len(others)))]
                shown = [profile, decoy]
                rng.shuffle(shown)
                words = " and ".join(spec.profile_words[p] for p in shown)
            elif rng.random() < spec.hint_accuracy or not others:
                words = spec.profile_words[profile]
            else:
                words = spec.profile_words[others[int(rng.integers(len(others)))]]
            bg["hint_text"] = f"It is about my {words}."
            bg["situation"] = f"I have been struggling lately because of my {words}."
        if spec.bargain is not None:
            b = spec.bargain
            bg.setdefault("item_name", b.item_name)
            bg.setdefault("item_description", b.item_description)
            scale = float(rng.uniform(0.5, 2.0))
            listed = round(b.listed_price * scale)
            bg["listed_price"] = float(listed)
            bg["buyer_target"] = float(round(b.buyer_target * scale))
            bg["seller_floor"] = float(round(listed * rng.uniform(*b.floor_range), 2))
        cases.append(bg)
    return cases


# -- exhaustive oracles ---------------------------------------------------


@dataclass
class OracleResult:
    best_return: float
    best_sequence: tuple[int, ...]
    first_action_returns: np.ndarray

    @property
    def best_first_action(self) -> int:
        return int(np.argmax(self.first_action_returns))

    @property
    def margin(self) -> float:
        vals = np.sort(self.first_action_returns)
        return float(vals[-1] - vals[-2]) if len(vals) > 1 else float("inf")


def enumerate_returns(spec: ScriptedSimSpec, task: TaskSpec, background: Mapping,
                      horizon: int | None = None) -> OracleResult:
    """Enumerate every action sequence up to the horizon and keep the best discounted return.

    Sequences stop early at success, so every prefix of length <= horizon is
    scored exactly once.
    """
    A = task.n_actions
    T = horizon if horizon is not None else task.max_turns
    if A**T > 2_000_000:
        raise ValueError(f"A^T = {A**T} sequences is too many to enumerate")
    best_by_first = np.full(A, -np.inf)
    seq_by_first: dict[int, tuple[int, ...]] = {}
    for seq in itertools.product(range(A), repeat=T):
        ret, length = 0.0, 0
        for k in range(T):
            r, success = spec.outcome(task, background, seq[:k + 1])
            ret += task.gamma**k * r
            length = k + 1
            if success:
                break
        first = seq[0]
        if ret > best_by_first[first]:
            best_by_first[first] = ret
            seq_by_first[first] = seq[:length]
    best = int(np.argmax(best_by_first))
    return OracleResult(float(best_by_first[best]), seq_by_first[best], best_by_first)


def random_policy_success(spec: ScriptedSimSpec, task: TaskSpec, background: Mapping) -> float:
    """Exact success probability of the uniform-random policy, by enumerating action trees."""
    A, T = task.n_actions, task.max_turns

    def rec(actions: tuple[int, ...]) -> float:
        total = 0.0
        for a in range(A):
            nxt = actions + (a,)
            _, success = spec.outcome(task, background, nxt)
            if success:
                total += 1.0
            elif len(nxt) < T:
                total += rec(nxt)
        return total / A

    return rec(())


def random_policy_success_memo(spec: ScriptedSimSpec, task: TaskSpec, background: Mapping) -> float:
    """Same quantity as :func:`random_policy_success`, memoized on (turn, hidden state).

    Only valid for score-band specs, where the hidden score and the turn
    determine everything that follows.
    """
    if spec.bargain is not None:
        return random_policy_success(spec, task, background)
    A, T = task.n_actions, task.max_turns
    table = spec.effects[background.get("profile", "default")]
    start = float(background.get("initial_score", spec.initial_scores[0]))
    memo: dict[tuple[int, float], float] = {}

    def success_at(score: float) -> bool:
        verdict = spec.fill(spec.verdict_texts[spec.band(score)], background)
        return task.reward_map.score(verdict) >= task.reward_map.success_score

    def rec(turn: int, score: float) -> float:
        key = (turn, round(score, 9))
        if key not in memo:
            total = 0.0
            for a in range(A):
                s = score + table[turn % len(table)][a]
                if success_at(s):
                    total += 1.0
                elif turn + 1 < T:
                    total += rec(turn + 1, s)
            memo[key] = total / A
        return memo[key]

    return rec(0, start)


def sub_task(task: TaskSpec, n_actions: int, max_turns: int) -> TaskSpec:
    """A smaller task keeping the first ``n_actions`` strategies of ``task``."""
    strategies = tuple(task.catalog[i] for i in range(n_actions))
    return replace(task, name=f"{task.name}-{n_actions}x{max_turns}",
                   catalog=StrategyCatalog(task.catalog.task, strategies), max_turns=max_turns)


def random_spec(rng: np.random.Generator, n_actions: int, noise: float = 0.0) -> ScriptedSimSpec:
    """A random score-band spec over ``n_actions`` strategies with the ESConv verdict set."""
    phases = int(rng.integers(1, 3))
    effects = {"default": tuple(
        tuple(float(x) for x in np.round(rng.uniform(-1.0, 1.5, n_actions), 2)) for _ in range(phases)
    )}
    base = load_scripted_spec("esconv")
    return ScriptedSimSpec(
        name="random",
        n_actions=n_actions,
        effects=effects,
        thresholds=(-1.0, 0.5, 2.0),
        verdict_texts=base.verdict_texts,
        user_texts=base.user_texts,
        noise=noise,
        background={"situation": "I have had a hard week.", "emotion_type": "sadness",
                    "problem_type": "job crisis"},
    )


def logged_episodes(env: DialogueEnv, spec: ScriptedSimSpec, cases: Sequence[Mapping],
                    expert_rate: float, seed: int = 0) -> list[Episode]:
    """Simulated annotated corpus: a noisy expert talks to the scripted user."""
    rng = np.random.default_rng(seed)
    episodes = []
    for bg in cases:
        state = env.initial_state(bg)
        transitions = []
        while not env.is_terminal(state):
            if rng.random() < expert_rate:
                action = spec.expert_action(state.background, state.actions)
            else:
                action = int(rng.integers(env.task.n_actions))
            tr = env.step(state, action, phase="training", source="logged")
            transitions.append(tr)
            state = tr.next_state
        last = transitions[-1]
        success = transition_succeeded(env.task, last)
        episodes.append(Episode.from_transitions(env.task.name, transitions, success,
                                                 deal_price=last.deal_price,
                                                 case_id=bg.get("case_id"), stage="logged"))
    return episodes
