"""Per-turn switch between the fast policy and tree search.

The gate measures how decisive the policy is (by default the gap between
its two most likely actions) and compares that against a running percentile
of all gaps seen so far. Confident turns go to the policy, the rest to
search, so the share of searched turns tracks the target ratio.
"""

from __future__ import annotations

import csv
import enum
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dualplan.errors import EmptySamples
from dualplan.policy import entropy, top2_gap


class Decision(str, enum.Enum):
    POLICY = "policy"
    MCTS = "mcts"


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest sample (the minimum at q = 0)."""
    if len(samples) == 0:
        raise EmptySamples("percentile of an empty sample")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    ordered = sorted(samples)
    rank = max(1, math.ceil(q * len(ordered) - 1e-12))
    return float(ordered[rank - 1])


def negative_entropy(probs) -> float:
    """Confidence as minus the entropy, so larger still means more certain."""
    return -entropy(probs)


MEASURES: dict[str, Callable] = {"top2": top2_gap, "entropy": negative_entropy}


@dataclass
class GateRecord:
    index: int
    delta: float
    threshold: float | None
    decision: Decision
    turn: int | None = None


@dataclass
class ControlGate:
    target_ratio: float
    min_samples: int = 10
    seed: int = 0
    measure: str = "top2"
    collected: list[float] = field(default_factory=list)
    trace: list[GateRecord] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.target_ratio <= 1.0:
            raise ValueError("target_ratio must lie in [0, 1]")
        if self.measure not in MEASURES:
            raise ValueError(f"unknown uncertainty measure {self.measure!r}")
        self._rng = np.random.default_rng(self.seed)

    def threshold(self) -> float | None:
        if len(self.collected) < self.min_samples:
            return None
        return percentile(self.collected, self.target_ratio)

    def decide_delta(self, delta: float, turn: int | None = None) -> Decision:
        thr = self.threshold()
        if self.target_ratio in (0.0, 1.0):
            # the endpoints mean pure policy and pure search, including record-breaking gaps
            decision = Decision.MCTS if self.target_ratio == 1.0 else Decision.POLICY
        elif thr is None:
            use_mcts = self._rng.random() < self.target_ratio
            decision = Decision.MCTS if use_mcts else Decision.POLICY
        else:
            decision = Decision.POLICY if delta > thr else Decision.MCTS
        self.collected.append(float(delta))
        self.trace.append(GateRecord(len(self.trace), float(delta), thr, decision, turn))
        return decision

    def decide(self, probs, turn: int | None = None) -> Decision:
        return self.decide_delta(MEASURES[self.measure](probs), turn)

    @property
    def mcts_fraction(self) -> float:
        if not self.trace:
            return 0.0
        return sum(r.decision is Decision.MCTS for r in self.trace) / len(self.trace)

    def write_trace(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "turn", "delta", "threshold", "decision"])
            for r in self.trace:
                turn = "" if r.turn is None else r.turn
                thr = "" if r.threshold is None else repr(r.threshold)
                w.writerow([r.index, turn, repr(r.delta), thr, r.decision.value])
        return path
