"""Open-loop tree search over strategy sequences (the slow planner).

Nodes are identified by the action prefix that reaches them. Each prefix is
simulated once, through the environment's system and user roles, and the
resulting dialogue state is cached on the node. Leaves are scored by the
critic straight after creation; there is no random playout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dualplan.dialogue import DialogueState, Strategy, Transition
from dualplan.env.base import DialogueEnv, Evaluation
from dualplan.errors import DualPlanError, SimulationAborted, TerminalStateError


def puct_score(q: float, prior: float, n_sa: int, n_total: int, c_p: float) -> float:
    return q + c_p * prior * math.sqrt(n_total) / (1 + n_sa)


@dataclass(frozen=True)
class MctsConfig:
    n_simulations: int = 10
    c_p: float = 1.0
    q0: float = 0.0
    max_depth: int | None = None  # None: up to the turn cap
    uniform_prior: bool = False

    def __post_init__(self):
        if self.n_simulations < 1:
            raise ValueError("n_simulations must be at least 1")
        if self.c_p < 0:
            raise ValueError("c_p must be non-negative")


@dataclass
class SearchNode:
    prefix: tuple[int, ...]
    state: DialogueState
    value: float | None = None
    evaluation: Evaluation | None = None
    terminal: bool = False
    prior: np.ndarray | None = None
    N: np.ndarray | None = None
    Q: np.ndarray | None = None
    children: dict[int, SearchNode] = field(default_factory=dict)

    @property
    def expanded(self) -> bool:
        return self.prior is not None


@dataclass
class PlanResult:
    action: int
    strategy: Strategy
    visits: np.ndarray
    q: np.ndarray
    prior: np.ndarray


class SearchTree:
    """Search statistics for one root state. Owned by a single planning call."""

    def __init__(self, root_state: DialogueState, env: DialogueEnv, policy=None,
                 config: MctsConfig | None = None, record_trace: bool = False):
        self.env = env
        self.policy = policy
        self.config = config or MctsConfig()
        if env.is_terminal(root_state):
            raise TerminalStateError("cannot plan from a finished dialogue")
        self.root = SearchNode((), root_state)
        cap = env.task.max_turns - root_state.turn
        self.max_depth = cap if self.config.max_depth is None else min(cap, self.config.max_depth)
        self.n_done = 0
        self.trace: list[dict] | None = [] if record_trace else None
        self.expand(self.root)

    # -- the four phases --------------------------------------------------

    def expand(self, node: SearchNode) -> None:
        A = self.env.task.n_actions
        if self.policy is None or self.config.uniform_prior:
            node.prior = np.full(A, 1.0 / A)
        else:
            node.prior = np.asarray(self.policy.distribution(node.state), dtype=float)
        node.N = np.zeros(A, dtype=int)
        node.Q = np.full(A, float(self.config.q0))

    def select(self, node: SearchNode) -> int:
        total = math.sqrt(node.N.sum())
        scores = node.Q + self.config.c_p * node.prior * total / (1 + node.N)
        return int(np.argmax(scores))  # first maximum: lowest id wins ties

    def evaluate_leaf(self, node: SearchNode) -> float:
        ev = self.env.evaluate(node.state, phase="simulation")
        node.value = ev.reward
        node.evaluation = ev
        node.terminal = (ev.success or node.state.turn >= self.env.task.max_turns
                         or len(node.prefix) >= self.max_depth)
        return ev.reward

    @staticmethod
    def backpropagate(path: list[tuple[SearchNode, int]], v: float) -> None:
        for node, a in path:
            node.N[a] += 1
            node.Q[a] += (v - node.Q[a]) / node.N[a]

    # -- driver -----------------------------------------------------------

    def simulate(self) -> float:
        node, path = self.root, []
        while True:
            a = self.select(node)
            path.append((node, a))
            child = node.children.get(a)
            if child is None:
                try:
                    state = self.env.advance(node.state, a, phase="simulation")
                    child = SearchNode(node.prefix + (a,), state)
                    v = self.evaluate_leaf(child)
                except DualPlanError as exc:
                    if isinstance(exc, TerminalStateError):
                        raise
                    raise SimulationAborted(f"simulation {self.n_done + 1} failed: {exc}") from exc
                if not child.terminal:
                    self.expand(child)
                node.children[a] = child
                break
            if child.terminal:
                v = child.value
                break
            node = child
        self.backpropagate(path, v)
        self.n_done += 1
        if self.trace is not None:
            self.trace.append({"simulation": self.n_done, "path": [a for _, a in path], "value": v})
        return v

    def run(self, n_simulations: int | None = None) -> PlanResult:
        for _ in range(n_simulations or self.config.n_simulations):
            self.simulate()
        return self.result()

    def result(self) -> PlanResult:
        a = int(np.argmax(self.root.N))
        return PlanResult(a, self.env.task.catalog[a], self.root.N.copy(), self.root.Q.copy(),
                          self.root.prior.copy())

    def realized_transition(self, action: int, source: str = "mcts") -> Transition:
        """Turn the cached simulation of a root action into the real next step (no new calls)."""
        child = self.root.children.get(action)
        if child is None:
            raise KeyError(f"root action {action} was never simulated")
        ev = child.evaluation
        done = ev.success or child.state.turn >= self.env.task.max_turns
        nxt = child.state.finished() if done else child.state
        return Transition(self.root.state, action, ev.reward, nxt, done, ev.verdicts, source, ev.deal_price)

    def dump_trace(self, path: str | Path) -> Path:
        def tables(node: SearchNode) -> dict:
            out = {"prefix": list(node.prefix), "value": node.value, "terminal": node.terminal}
            if node.expanded:
                out.update(prior=node.prior.tolist(), N=node.N.tolist(), Q=node.Q.tolist())
            out["children"] = [tables(c) for _, c in sorted(node.children.items())]
            return out

        payload = {"simulations": self.trace or [], "tree": tables(self.root)}
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=1), encoding="utf-8")
        return path


def plan(root_state: DialogueState, policy, env: DialogueEnv, config: MctsConfig | None = None) -> PlanResult:
    """Run the configured number of simulations and return the most-visited root action."""
    return SearchTree(root_state, env, policy, config).run()
