"""Online stage: tree search plays against the simulated user and the heads learn from its choices."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from dualplan.dialogue import Episode, write_episodes
from dualplan.env.base import DialogueEnv
from dualplan.errors import ConfigError, DualPlanError, TrainingDiverged
from dualplan.losses import LossResult, TransitionBatch, selfplay_loss
from dualplan.mcts import MctsConfig
from dualplan.policy import PolicyModel
from dualplan.pretrain import TrainResult, sgd_step, write_history
from dualplan.rollout import Planner, run_episode

log = logging.getLogger(__name__)

_TASK_DEFAULTS = {
    "esconv": dict(lambda2=1.0, epochs=5, learning_rate=1e-6),
    "cima": dict(lambda2=10.0, epochs=3, learning_rate=1e-5),
    "cb": dict(lambda2=1.0, epochs=3, learning_rate=1e-6),
}

METRIC_COLUMNS = ("epoch", "episodes", "failed", "mean_reward", "success_rate", "mean_turns",
                  "policy_loss", "q_loss", "total_loss")


@dataclass(frozen=True)
class SelfPlayConfig:
    lambda2: float = 1.0
    epochs: int = 5
    episodes_per_epoch: int = 100
    learning_rate: float = 1e-6
    gamma: float = 0.999
    mcts: MctsConfig = field(default_factory=MctsConfig)
    updates_per_epoch: int = 1
    reduction: str = "sum"
    seed: int = 0

    def __post_init__(self):
        if self.reduction not in ("sum", "mean"):
            raise ConfigError("reduction must be 'sum' or 'mean'")
        if self.epochs < 0 or self.episodes_per_epoch < 1 or self.updates_per_epoch < 1:
            raise ConfigError("epochs must be >= 0, episodes and updates per epoch >= 1")

    @classmethod
    def for_task(cls, task: str, **overrides) -> SelfPlayConfig:
        key = task.lower()
        key = "cb" if key.startswith("craigslist") else key
        base = dict(_TASK_DEFAULTS.get(key, {}))
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


def rollout_selfplay_episode(case: Mapping[str, Any], model: PolicyModel | None, env: DialogueEnv,
                             cfg: SelfPlayConfig) -> Episode:
    """Every action comes from tree search seeded with the current policy as prior."""
    planner = Planner("system2", model, cfg.mcts)
    return run_episode(planner, env, case, stage="selfplay").episode


def selfplay_batch(episodes: Sequence[Episode], model: PolicyModel, gamma: float) -> TransitionBatch:
    for ep in episodes:
        for t in ep.transitions:
            if t.source != "mcts":
                raise ValueError(f"self-play buffer holds a transition chosen by {t.source!r}")
    return TransitionBatch.from_episodes(episodes, model.encoder, gamma)


def run_selfplay_training(model: PolicyModel, env: DialogueEnv, cases: Sequence[Mapping[str, Any]],
                          cfg: SelfPlayConfig, out_dir: str | Path | None = None) -> TrainResult:
    """Alternate search-driven rollouts and actor-critic updates.

    Returns the parameters from the epoch with the highest rollout success
    rate (latest on ties); ``model.params`` is left at the final state.
    """
    if not cases:
        raise ValueError("self-play needs at least one case")
    out = Path(out_dir) if out_dir is not None else None
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best, best_sr, best_epoch = model.params.copy(), -1.0, None
    for epoch in range(1, cfg.epochs + 1):
        picks = rng.integers(len(cases), size=cfg.episodes_per_epoch)
        episodes, failed = [], 0
        for i in picks:
            try:
                episodes.append(rollout_selfplay_episode(cases[int(i)], model, env, cfg))
            except DualPlanError as exc:
                failed += 1
                log.warning("self-play episode discarded: %s", exc)
        if out is not None and episodes:
            write_episodes(out / "selfplay_episodes.jsonl", episodes, append=True)
        row = {"epoch": epoch, "episodes": len(episodes), "failed": failed}
        if episodes:
            batch = selfplay_batch(episodes, model, cfg.gamma)
            res: LossResult | None = None
            for _ in range(cfg.updates_per_epoch):
                res = selfplay_loss(model.params, batch, cfg.lambda2, cfg.gamma)
                sgd_step(model.params, res, cfg.learning_rate, cfg.reduction)
            if not model.params.all_finite():
                if out is not None:
                    write_history(out / "selfplay_metrics.csv", history, METRIC_COLUMNS)
                raise TrainingDiverged(f"parameters became non-finite in epoch {epoch}", history)
            model.params.version += 1
            sr = float(np.mean([ep.success for ep in episodes]))
            row.update(
                mean_reward=float(np.mean(batch.rewards)),
                success_rate=sr,
                mean_turns=float(np.mean([ep.turns for ep in episodes])),
                policy_loss=res.policy_term,
                q_loss=res.q_term,
                total_loss=res.total,
            )
            if sr >= best_sr:
                best, best_sr, best_epoch = model.params.copy(), sr, epoch
        history.append(row)
        log.info("self-play epoch %d: %s", epoch, row)
        if out is not None:
            write_history(out / "selfplay_metrics.csv", history, METRIC_COLUMNS)
    if out is not None:
        model.save(out / "selfplay_final.json")
        PolicyModel(model.encoder, best).save(out / "selfplay_best.json")
    best.meta = dict(best.meta, stage="selfplay", best_epoch=best_epoch)
    return TrainResult(best, history, best_epoch)
