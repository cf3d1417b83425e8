"""Offline stage: score logged dialogues with the critic, then fit the policy and Q heads."""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from dualplan.dialogue import Episode, Transition
from dualplan.env.base import DialogueEnv
from dualplan.errors import ConfigError, DualPlanError, TrainingDiverged
from dualplan.losses import LossResult, TransitionBatch, bootstrapped_loss, full_return_loss
from dualplan.policy import PolicyModel, PolicyParams, policy_forward

log = logging.getLogger(__name__)

VARIANTS = ("full_return", "bootstrapped")

_TASK_DEFAULTS = {
    "esconv": dict(lambda1=10.0, epochs=5, batch_size=8, learning_rate=6e-6, variant="full_return"),
    "cima": dict(lambda1=10.0, epochs=10, batch_size=8, learning_rate=1e-5, variant="bootstrapped"),
    "cb": dict(lambda1=1.0, epochs=10, batch_size=8, learning_rate=6e-6, variant="full_return"),
}


@dataclass(frozen=True)
class PretrainConfig:
    lambda1: float = 10.0
    gamma: float = 0.999
    epochs: int = 5
    batch_size: int = 8
    learning_rate: float = 6e-6
    variant: str = "full_return"
    flip_sign: bool = False
    # "sum" steps on the loss as written; "mean" divides the gradient by the batch size
    reduction: str = "sum"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError("reduction must be 'sum' or 'mean'")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigError("epochs, batch_size and learning_rate must be non-negative")

    @classmethod
    def for_task(cls, task: str, **overrides) -> PretrainConfig:
        key = task.lower()
        key = "cb" if key.startswith("craigslist") else key
        base = dict(_TASK_DEFAULTS.get(key, {}))
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScoredDataset:
    episodes: list[Episode] = field(default_factory=list)
    n_errors: int = 0
    errors: list[str] = field(default_factory=list)

    @property
    def transitions(self) -> list[Transition]:
        return [t for ep in self.episodes for t in ep.transitions]

    def __len__(self) -> int:
        return len(self.episodes)


def score_dataset(raw: Iterable[Episode], env: DialogueEnv) -> ScoredDataset:
    """Attach critic rewards to every turn of logged episodes.

    An episode whose critic call fails is skipped and counted, since the
    full-return loss needs every turn of it.
    """
    out = ScoredDataset()
    for ep in raw:
        try:
            scored = []
            for t in ep.transitions:
                ev = env.evaluate(t.next_state, phase="training")
                if not -1.0 <= ev.reward <= 1.0:
                    raise DualPlanError(f"reward {ev.reward} outside [-1, 1]")
                scored.append(replace(t, reward=ev.reward, verdicts=ev.verdicts,
                                      deal_price=ev.deal_price))
        except DualPlanError as exc:
            out.n_errors += 1
            out.errors.append(f"{ep.case_id}: {exc}")
            log.warning("skipping episode %s: %s", ep.case_id, exc)
            continue
        out.episodes.append(replace(ep, transitions=tuple(scored)))
    return out


def pretrain_loss(params: PolicyParams, batch: TransitionBatch, cfg: PretrainConfig) -> LossResult:
    if cfg.variant == "full_return":
        return full_return_loss(params, batch, cfg.lambda1)
    return bootstrapped_loss(params, batch, cfg.lambda1, cfg.gamma, flip_sign=cfg.flip_sign)


def greedy_match_reward(model: PolicyModel, batch: TransitionBatch) -> float:
    """Teacher-forced validation score: reward of each logged turn where the greedy action agrees, else 0."""
    if len(batch) == 0:
        return 0.0
    probs = policy_forward(model.params, batch.X)
    agree = probs.argmax(axis=1) == batch.actions
    return float(np.mean(np.where(agree, batch.rewards, 0.0)))


@dataclass
class TrainResult:
    params: PolicyParams
    history: list[dict]
    best_epoch: int | None


def sgd_step(params: PolicyParams, result: LossResult, lr: float, reduction: str) -> None:
    scale = lr / result.n if reduction == "mean" and result.n else lr
    params.scaled_add(result.grads, -scale)


def write_history(path: str | Path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    return path


HISTORY_COLUMNS = ("epoch", "policy_loss", "q_loss", "val_metric")


def run_pretraining(model: PolicyModel, dataset: ScoredDataset | Sequence[Episode], cfg: PretrainConfig,
                    validation: Sequence[Episode] | None = None,
                    history_path: str | Path | None = None) -> TrainResult:
    """Minibatch SGD over the scored corpus; keeps the epoch that scores best on validation."""
    episodes = list(dataset.episodes if isinstance(dataset, ScoredDataset) else dataset)
    if not episodes:
        raise ValueError("pretraining needs a non-empty dataset")
    enc = model.encoder
    data = TransitionBatch.from_episodes(episodes, enc, cfg.gamma)
    val = TransitionBatch.from_episodes(validation, enc, cfg.gamma) if validation else None
    params = model.params.copy()
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best, best_score, best_epoch = params.copy(), -np.inf, None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(data))
            pol, qv = 0.0, 0.0
            for start in range(0, len(order), cfg.batch_size):
                res = pretrain_loss(params, data.subset(order[start:start + cfg.batch_size]), cfg)
                pol += res.policy_term
                qv += res.q_term
                sgd_step(params, res, cfg.learning_rate, cfg.reduction)
            if not params.all_finite():
                raise TrainingDiverged(f"parameters became non-finite in epoch {epoch}", history)
            params.version += 1
            score = greedy_match_reward(PolicyModel(enc, params), val) if val is not None else np.nan
            history.append({"epoch": epoch, "policy_loss": pol, "q_loss": qv, "val_metric": score})
            log.info("pretrain epoch %d policy=%.4f q=%.4f val=%.4f", epoch, pol, qv, score)
            if val is None or score > best_score:
                best, best_score, best_epoch = params.copy(), score, epoch
    except TrainingDiverged as exc:
        if history_path is not None:
            write_history(history_path, history, HISTORY_COLUMNS)
        raise TrainingDiverged(str(exc), history) from exc
    if history_path is not None:
        write_history(history_path, history, HISTORY_COLUMNS)
    if cfg.epochs == 0:
        best = params
    best.meta = dict(best.meta, stage="pretrain", best_epoch=best_epoch)
    return TrainResult(best, history, best_epoch)
