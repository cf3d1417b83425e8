"""Three-role environment: system responder, user responder and critic."""

from __future__ import annotations

import statistics
import threading
from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any, Protocol, runtime_checkable

from dualplan.dialogue import (
    DialogueState,
    Speaker,
    Strategy,
    TaskSpec,
    Transition,
    Utterance,
    is_success,
    map_verdicts_to_reward,
)
from dualplan.errors import DualPlanError, StepFailed, TerminalStateError

ROLES = ("system", "user", "critic")
PHASES = ("acting", "simulation", "training")


@runtime_checkable
class RoleBackend(Protocol):
    def system_respond(self, state: DialogueState, strategy: Strategy) -> str: ...

    def user_respond(self, state: DialogueState) -> str: ...

    def critic_judge(self, state: DialogueState, sample: int = 0) -> str: ...


class CallCounter:
    """Counts backend invocations per (phase, role).

    One critic *unit* is one l-sample evaluation; raw samples are tracked
    separately so both conventions can be reported.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._units: Counter = Counter()
        self._samples: Counter = Counter()

    def record(self, role: str, phase: str, samples: int = 0) -> None:
        if role not in ROLES or phase not in PHASES:
            raise ValueError(f"unknown role/phase {role}/{phase}")
        with self._lock:
            self._units[(phase, role)] += 1
            if samples:
                self._samples[phase] += samples

    def units(self, phase: str | None = None, role: str | None = None) -> int:
        with self._lock:
            return sum(n for (p, r), n in self._units.items()
                       if (phase is None or p == phase) and (role is None or r == role))

    def critic_samples(self, phase: str | None = None) -> int:
        with self._lock:
            return sum(n for p, n in self._samples.items() if phase is None or p == phase)

    def snapshot(self) -> dict:
        with self._lock:
            out = {p: {r: self._units[(p, r)] for r in ROLES} for p in PHASES}
            for p in PHASES:
                out[p]["critic_samples"] = self._samples[p]
        out["total_units"] = sum(out[p][r] for p in PHASES for r in ROLES)
        return out

    def reset(self) -> None:
        with self._lock:
            self._units.clear()
            self._samples.clear()


@dataclass(frozen=True)
class Evaluation:
    reward: float
    verdicts: tuple[str, ...]
    success: bool
    deal_price: float | None = None


def initial_state(task: TaskSpec, background: Mapping[str, Any]) -> DialogueState:
    """Opening history for a case, following each task's role-play opener."""
    bg = dict(background)
    key = task.name.lower()
    if "opener" in bg:
        history = tuple(
            Utterance(Speaker(u["speaker"]), u["text"], i) for i, u in enumerate(bg["opener"])
        )
    elif key == "cima":
        history = (
            Utterance(Speaker.SYSTEM, f"Please translate “{bg['exercise']}” into Italian.", 0),
            Utterance(Speaker.USER, bg["situation"], 1),
        )
    elif key == "craigslistbargain":
        item = bg["item_name"]
        price = _fmt_price(bg["listed_price"])
        history = (
            Utterance(Speaker.SYSTEM, f"Hi, how much is the {item}?", 0),
            Utterance(Speaker.USER, f"Hi, this is a good {item} and its price is {price}.", 1),
        )
    else:
        history = (Utterance(Speaker.USER, bg["situation"], 0),)
    return DialogueState(bg, history, 0)


def _fmt_price(value) -> str:
    value = float(value)
    return f"${value:,.0f}" if value == int(value) else f"${value:,.2f}"


class DialogueEnv:
    """Binds a task, a backend and a call counter, and implements one MDP step."""

    def __init__(self, task: TaskSpec, backend: RoleBackend, counter: CallCounter | None = None):
        self.task = task
        self.backend = backend
        self.counter = counter if counter is not None else CallCounter()

    def initial_state(self, background: Mapping[str, Any]) -> DialogueState:
        return initial_state(self.task, background)

    def _call(self, role: str, fn, *args):
        try:
            return fn(*args)
        except DualPlanError:
            raise
        except Exception as exc:  # transport errors from remote backends
            raise StepFailed(f"{role} backend failed: {exc}") from exc

    def is_terminal(self, state: DialogueState) -> bool:
        return state.done or state.turn >= self.task.max_turns

    def advance(self, state: DialogueState, action: int, phase: str = "acting") -> DialogueState:
        """Generate the system utterance for ``action`` and the user's reply (2 calls)."""
        if self.is_terminal(state):
            raise TerminalStateError(f"dialogue already ended at turn {state.turn}")
        strategy = self.task.catalog[action]
        system_text = self._call("system", self.backend.system_respond, state, strategy)
        self.counter.record("system", phase)
        partial = DialogueState(
            state.background,
            state.history + (Utterance(Speaker.SYSTEM, system_text,
                                       state.history[-1].turn_index + 1 if state.history else 0,
                                       action),),
            state.turn,
        )
        user_text = self._call("user", self.backend.user_respond, partial)
        self.counter.record("user", phase)
        return state.extend(system_text, action, user_text)

    def evaluate(self, state: DialogueState, phase: str = "acting") -> Evaluation:
        """Sample the critic ``critic_samples`` times and aggregate (1 critic unit)."""
        l = self.task.critic_samples
        verdicts = tuple(
            self._call("critic", self.backend.critic_judge, state, j) for j in range(l)
        )
        self.counter.record("critic", phase, samples=l)
        if self.task.reward_map.price_scored:
            from dualplan.env.bargain import bargain_evaluation

            return bargain_evaluation(verdicts, state.background, self.task.reward_map)
        reward = map_verdicts_to_reward(verdicts, self.task.reward_map)
        return Evaluation(reward, verdicts, is_success(reward, self.task.reward_map))

    def step(self, state: DialogueState, action: int, phase: str = "acting",
             source: str = "policy") -> Transition:
        nxt = self.advance(state, action, phase)
        ev = self.evaluate(nxt, phase)
        done = ev.success or nxt.turn >= self.task.max_turns
        if done:
            nxt = nxt.finished()
        return Transition(state, action, ev.reward, nxt, done, ev.verdicts, source, ev.deal_price)


def transition_succeeded(task: TaskSpec, tr: Transition) -> bool:
    """Whether a step reached the goal (a deal for price-scored tasks)."""
    if task.reward_map.price_scored:
        return tr.deal_price is not None
    return is_success(tr.reward, task.reward_map)


def median_price(prices) -> float | None:
    return float(statistics.median(prices)) if prices else None
