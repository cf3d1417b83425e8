"""Actor-critic losses shared by offline pretraining and self-play training.

Every loss has the form

    sum_i c_i * log pi(a_i|s_i)  +  weight * sum_i (Q(s_i, a_i) - y_i)^2

where the coefficients c_i and targets y_i are evaluated first and then
held fixed (stop-gradient). The variants differ only in how c and y are built.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from dualplan.dialogue import Episode, Transition, discounted_returns
from dualplan.errors import TrainingDiverged
from dualplan.policy import PolicyParams, backward, forward, q_forward


@dataclass
class LossResult:
    total: float
    policy_term: float
    q_term: float
    grads: PolicyParams
    n: int


@dataclass
class TransitionBatch:
    """Encoded transitions. ``returns`` holds Q-hat and is NaN where unknown."""

    X: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    X_next: np.ndarray
    dones: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode], encoder, gamma: float) -> TransitionBatch:
        transitions, returns = [], []
        for ep in episodes:
            transitions.extend(ep.transitions)
            returns.extend(discounted_returns(ep.rewards, gamma))
        return cls.from_transitions(transitions, encoder, returns)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], encoder,
                         returns: Sequence[float] | None = None) -> TransitionBatch:
        n = len(transitions)
        return cls(
            X=encoder.encode_many([t.state for t in transitions]),
            actions=np.array([t.action for t in transitions], dtype=int),
            rewards=np.array([t.reward for t in transitions], dtype=float),
            X_next=encoder.encode_many([t.next_state for t in transitions]),
            dones=np.array([t.done for t in transitions], dtype=bool),
            returns=np.full(n, np.nan) if returns is None else np.asarray(returns, dtype=float),
        )

    def subset(self, idx) -> TransitionBatch:
        return TransitionBatch(self.X[idx], self.actions[idx], self.rewards[idx],
                               self.X_next[idx], self.dones[idx], self.returns[idx])


def log_probs(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    return logits - (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))


def weighted_loss(params: PolicyParams, X: np.ndarray, actions: np.ndarray,
                  coef: np.ndarray, targets: np.ndarray, weight: float) -> LossResult:
    n = len(actions)
    cache = forward(params, X)
    rows = np.arange(n)
    logp = log_probs(cache.logits)[rows, actions]
    q_sa = cache.q[rows, actions]
    policy_term = float(np.sum(coef * logp))
    q_term = float(np.sum((q_sa - targets) ** 2))
    total = policy_term + weight * q_term

    onehot = np.zeros_like(cache.probs)
    onehot[rows, actions] = 1.0
    dlogits = coef[:, None] * (onehot - cache.probs)
    dq = np.zeros_like(cache.q)
    dq[rows, actions] = weight * 2.0 * (q_sa - targets)
    grads = backward(params, X, dlogits, dq, cache)
    if not (np.isfinite(total) and grads.all_finite()):
        raise TrainingDiverged(f"non-finite loss or gradient (loss={total})")
    return LossResult(total, policy_term, q_term, grads, n)


def bootstrap_targets(params: PolicyParams, batch: TransitionBatch, gamma: float) -> np.ndarray:
    """Q* = r + gamma * max_a' Q(s', a'), or r alone at terminal transitions."""
    if len(batch) == 0:
        return np.zeros(0)
    next_max = q_forward(params, batch.X_next).max(axis=1)
    return batch.rewards + np.where(batch.dones, 0.0, gamma * next_max)


def full_return_loss(params: PolicyParams, batch: TransitionBatch, weight: float) -> LossResult:
    """-sum Q-hat log pi + weight * sum (Q - Q-hat)^2."""
    if np.isnan(batch.returns).any():
        raise ValueError("full-return loss needs Q-hat for every transition")
    return weighted_loss(params, batch.X, batch.actions, -batch.returns, batch.returns, weight)


def bootstrapped_loss(params: PolicyParams, batch: TransitionBatch, weight: float, gamma: float,
                      flip_sign: bool = False) -> LossResult:
    """sum (Q(s,a) - Q*) log pi + weight * sum (Q* - Q(s,a))^2, both brackets detached."""
    q_star = bootstrap_targets(params, batch, gamma)
    q_sa = q_forward(params, batch.X)[np.arange(len(batch)), batch.actions] if len(batch) else np.zeros(0)
    coef = q_sa - q_star
    if flip_sign:
        coef = -coef
    return weighted_loss(params, batch.X, batch.actions, coef, q_star, weight)


def selfplay_loss(params: PolicyParams, batch: TransitionBatch, weight: float, gamma: float) -> LossResult:
    """sum (Q(s,a) - Q-hat) log pi + weight * sum (Q* - Q(s,a))^2, brackets detached."""
    if np.isnan(batch.returns).any():
        raise ValueError("self-play loss needs Q-hat for every transition")
    q_star = bootstrap_targets(params, batch, gamma)
    q_sa = q_forward(params, batch.X)[np.arange(len(batch)), batch.actions] if len(batch) else np.zeros(0)
    return weighted_loss(params, batch.X, batch.actions, q_sa - batch.returns, q_star, weight)
