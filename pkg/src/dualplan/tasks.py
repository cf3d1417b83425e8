"""Built-in task definitions and loading of custom tasks from JSON."""

from __future__ import annotations

import json
from collections.abc import Mapping
from importlib import resources
from pathlib import Path

from dualplan.dialogue import RewardMap, Strategy, StrategyCatalog, TaskSpec, VerdictEntry
from dualplan.errors import ConfigError

BUILTIN_TASKS = {"esconv": "esconv.json", "cima": "cima.json", "cb": "cb.json"}
_ALIASES = {"craigslistbargain": "cb", "craigslist": "cb"}


def _read_builtin(key: str) -> dict:
    text = resources.files("dualplan.data.tasks").joinpath(BUILTIN_TASKS[key]).read_text("utf-8")
    return json.loads(text)


def task_from_dict(d: Mapping, **overrides) -> TaskSpec:
    try:
        strategies = tuple(
            Strategy(i, s["name"], s["instruction"]) for i, s in enumerate(d["strategies"])
        )
        rm = d["reward_map"]
        reward_map = RewardMap(
            verdicts=tuple(
                VerdictEntry(v["verdict"], float(v["score"]), tuple(v.get("patterns", ())))
                for v in rm["verdicts"]
            ),
            success_score=float(rm.get("success_score", 1.0)),
            price_scored=bool(rm.get("price_scored", False)),
        )
        params = {
            "max_turns": int(d.get("max_turns", 8)),
            "gamma": float(d.get("gamma", 0.999)),
            "critic_samples": int(d.get("critic_samples", 10)),
        }
        params.update({k: v for k, v in overrides.items() if v is not None})
        return TaskSpec(
            name=d["task"],
            catalog=StrategyCatalog(d["task"], strategies),
            reward_map=reward_map,
            **params,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid task definition: {exc}") from exc


def task_to_dict(task: TaskSpec) -> dict:
    return {
        "task": task.name,
        "max_turns": task.max_turns,
        "gamma": task.gamma,
        "critic_samples": task.critic_samples,
        "strategies": [{"name": s.name, "instruction": s.instruction} for s in task.catalog],
        "reward_map": {
            "success_score": task.reward_map.success_score,
            "price_scored": task.reward_map.price_scored,
            "verdicts": [
                {"verdict": v.verdict, "score": v.score, "patterns": list(v.patterns)}
                for v in task.reward_map.verdicts
            ],
        },
    }


def builtin_key(name: str) -> str | None:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    return key if key in BUILTIN_TASKS else None


def load_task(name_or_path: str | Path, **overrides) -> TaskSpec:
    """Load a built-in task by name (esconv, cima, cb) or a custom task JSON file."""
    key = builtin_key(str(name_or_path))
    if key is not None:
        return task_from_dict(_read_builtin(key), **overrides)
    path = Path(name_or_path)
    if not path.exists():
        raise ConfigError(f"unknown task {name_or_path!r}")
    return task_from_dict(json.loads(path.read_text("utf-8")), **overrides)
