"""Planners that choose one strategy per turn, and the loop that plays a whole episode."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from dualplan.dialogue import DialogueState, Episode, Transition
from dualplan.env.base import DialogueEnv, transition_succeeded
from dualplan.gate import ControlGate, Decision
from dualplan.mcts import MctsConfig, SearchTree

MODES = ("system1", "system2", "dual")


@dataclass
class TurnInfo:
    turn: int
    decision: Decision
    delta: float | None = None


class Planner:
    """Chooses and executes one turn. ``env`` supplies the simulations for search;
    ``acting_env`` (defaults to ``env``) produces the real next step."""

    def __init__(self, mode: str, model=None, mcts: MctsConfig | None = None,
                 gate: ControlGate | None = None, reuse_simulation: bool = True,
                 trace_dir: str | Path | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "dual" and gate is None:
            raise ValueError("dual mode needs a control gate")
        if mode != "system2" and model is None:
            raise ValueError(f"{mode} mode needs a policy model")
        self.mode = mode
        self.model = model
        self.mcts = mcts or MctsConfig()
        self.gate = gate
        self.reuse_simulation = reuse_simulation
        self.trace_dir = Path(trace_dir) if trace_dir is not None else None
        self._n_trees = 0

    def _policy_turn(self, state, probs, env, acting_env) -> Transition:
        return acting_env.step(state, int(np.argmax(probs)), phase="acting", source="policy")

    def _mcts_turn(self, state, env, acting_env, source: str) -> Transition:
        tree = SearchTree(state, env, self.model, self.mcts, record_trace=self.trace_dir is not None)
        result = tree.run()
        if self.trace_dir is not None:
            self._n_trees += 1
            tree.dump_trace(self.trace_dir / f"tree_{self._n_trees:05d}.json")
        if self.reuse_simulation and acting_env is env:
            return tree.realized_transition(result.action, source)
        return acting_env.step(state, result.action, phase="acting", source=source)

    def step(self, state: DialogueState, env: DialogueEnv, acting_env: DialogueEnv | None = None,
             mcts_source: str = "mcts") -> tuple[Transition, TurnInfo]:
        acting_env = acting_env or env
        if self.mode == "system1":
            probs = self.model.distribution(state)
            return self._policy_turn(state, probs, env, acting_env), TurnInfo(state.turn, Decision.POLICY)
        if self.mode == "system2":
            return self._mcts_turn(state, env, acting_env, mcts_source), TurnInfo(state.turn, Decision.MCTS)
        probs = self.model.distribution(state)
        decision = self.gate.decide(probs, turn=state.turn)
        delta = self.gate.collected[-1]
        if decision is Decision.POLICY:
            tr = self._policy_turn(state, probs, env, acting_env)
        else:
            tr = self._mcts_turn(state, env, acting_env, mcts_source)
        return tr, TurnInfo(state.turn, decision, delta)


@dataclass
class EpisodeRun:
    episode: Episode
    turns: list[TurnInfo] = field(default_factory=list)


def run_episode(planner: Planner, env: DialogueEnv, background: Mapping[str, Any], stage: str = "eval",
                acting_env: DialogueEnv | None = None, mcts_source: str = "mcts") -> EpisodeRun:
    """Play one case to success or the turn cap."""
    state = env.initial_state(background)
    transitions, infos = [], []
    while not env.is_terminal(state):
        tr, info = planner.step(state, env, acting_env, mcts_source)
        transitions.append(tr)
        infos.append(info)
        state = tr.next_state
    last = transitions[-1] if transitions else None
    success = last is not None and transition_succeeded(env.task, last)
    ep = Episode.from_transitions(env.task.name, transitions, success,
                                  deal_price=last.deal_price if last is not None else None,
                                  case_id=background.get("case_id"), stage=stage)
    return EpisodeRun(ep, infos)
