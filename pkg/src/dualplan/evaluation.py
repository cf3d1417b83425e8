"""Evaluation runs: metrics, cost accounting, persisted outputs and bit-exact replay."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import dualplan
from dualplan.dialogue import Episode, TaskSpec, Transition, write_episodes
from dualplan.encoder import FeatureEncoder
from dualplan.env.bargain import compute_sl
from dualplan.env.base import CallCounter, DialogueEnv, transition_succeeded
from dualplan.env.human import HumanUserBackend, SessionEnded
from dualplan.env.scripted import ScriptedBackend, ScriptedSimSpec, load_scripted_spec, make_cases
from dualplan.errors import ConfigError, DualPlanError
from dualplan.gate import ControlGate, Decision
from dualplan.mcts import MctsConfig
from dualplan.policy import PolicyModel
from dualplan.rollout import MODES, Planner, run_episode
from dualplan.tasks import builtin_key, load_task

__all__ = [
    "CaseRecord",
    "MetricsReport",
    "RunConfig",
    "build_environment",
    "compute_sl",
    "cost_report",
    "interactive_chat",
    "replay_from_manifest",
    "run_eval",
]

log = logging.getLogger(__name__)

BACKENDS = ("scripted", "llm", "cassette")


@dataclass(frozen=True)
class RunConfig:
    task: str = "esconv"
    mode: str = "system1"
    target_ratio: float = 0.5
    mcts: MctsConfig = field(default_factory=MctsConfig)
    checkpoint: str | None = None
    backend: str = "scripted"
    scripted_spec: str | None = None  # defaults to the task's built-in spec
    cassette: str | None = None
    cases_path: str | None = None
    n_eval_cases: int = 200
    seed: int = 0
    gate_min_samples: int = 10
    gate_measure: str = "top2"
    reuse_simulation: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if not 0.0 <= self.target_ratio <= 1.0:
            raise ConfigError("target_ratio must lie in [0, 1]")
        if self.n_eval_cases < 0 or self.workers < 1:
            raise ConfigError("n_eval_cases must be >= 0 and workers >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if isinstance(d.get("mcts"), Mapping):
                d["mcts"] = MctsConfig(**d["mcts"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid run config: {exc}") from exc

    def config_hash(self) -> str:
        return sha256_text(json.dumps(self.to_dict(), sort_keys=True))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_hash(path: str | Path | None) -> str | None:
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- building blocks from a config ---------------------------------------


def scripted_spec_for(cfg: RunConfig) -> ScriptedSimSpec:
    name = cfg.scripted_spec or builtin_key(cfg.task)
    if name is None:
        raise ConfigError(f"task {cfg.task!r} has no built-in scripted spec; set scripted_spec")
    return load_scripted_spec(name)


def build_environment(cfg: RunConfig, counter: CallCounter | None = None) -> tuple[TaskSpec, DialogueEnv]:
    """Task plus environment for the configured backend. LLM settings are checked here, before any episode."""
    task = load_task(cfg.task)
    if cfg.backend == "scripted":
        backend = ScriptedBackend(scripted_spec_for(cfg), seed=cfg.seed)
    else:
        from dualplan.env.llm import Cassette, LLMBackend, LLMConfig

        if cfg.backend == "llm":
            backend = LLMBackend(task, LLMConfig.from_env())
        else:
            if not cfg.cassette:
                raise ConfigError("cassette backend needs a cassette path")
            backend = LLMBackend(task, LLMConfig.from_env(require_key=False),
                                 cassette=Cassette(cfg.cassette, "replay"))
    return task, DialogueEnv(task, backend, counter)


def load_cases(cfg: RunConfig) -> list[dict]:
    if cfg.cases_path:
        path = Path(cfg.cases_path)
        if not path.exists():
            raise ConfigError(f"cases file {path} not found")
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".jsonl":
            cases = [json.loads(line) for line in text.splitlines() if line.strip()]
        else:
            cases = json.loads(text)
        return cases[: cfg.n_eval_cases] if cfg.n_eval_cases else cases
    if cfg.backend != "scripted" and cfg.scripted_spec is None:
        raise ConfigError("LLM evaluation needs a cases file")
    return make_cases(scripted_spec_for(cfg), cfg.n_eval_cases, seed=cfg.seed)


def load_model(cfg: RunConfig, task: TaskSpec) -> PolicyModel | None:
    encoder = FeatureEncoder(task)
    if cfg.checkpoint:
        return PolicyModel.load(encoder, cfg.checkpoint)
    if cfg.mode == "system2":
        return None  # uniform priors
    raise ConfigError(f"{cfg.mode} mode needs a policy checkpoint")


# -- metrics ----------------------------------------------------------------


@dataclass
class CaseRecord:
    case_id: str | None
    success: bool
    turns: int
    deal_price: float | None
    sl: float | None
    total_reward: float
    actions: list[int]
    decisions: list[str]
    mcts_turns: int
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsReport:
    AT: float
    SR: float
    SL: float | None
    n_cases: int
    n_failed: int
    realized_mcts_ratio: float
    records: list[CaseRecord]
    cost: dict
    mode: str = "system1"
    target_ratio: float | None = None

    @classmethod
    def from_records(cls, records: Sequence[CaseRecord], cost: dict | None = None, mode: str = "system1",
                     target_ratio: float | None = None) -> MetricsReport:
        ok = [r for r in records if r.error is None]
        n = len(ok)
        turns = sum(r.turns for r in ok)
        sls = [r.sl for r in ok if r.sl is not None]
        return cls(
            AT=turns / n if n else 0.0,
            SR=sum(r.success for r in ok) / n if n else 0.0,
            SL=sum(sls) / len(sls) if sls else None,
            n_cases=n,
            n_failed=len(records) - n,
            realized_mcts_ratio=sum(r.mcts_turns for r in ok) / turns if turns else 0.0,
            records=list(records),
            cost=cost or {},
            mode=mode,
            target_ratio=target_ratio,
        )

    def summary(self) -> dict:
        d = {k: getattr(self, k) for k in ("AT", "SR", "SL", "n_cases", "n_failed", "realized_mcts_ratio",
                                            "mode", "target_ratio")}
        d["cost"] = self.cost
        return d

    def records_hash(self) -> str:
        return sha256_text(json.dumps([r.to_dict() for r in self.records], sort_keys=True))


def _case_record(ep: Episode, infos, task: TaskSpec, background: Mapping) -> CaseRecord:
    sl = None
    if task.reward_map.price_scored and "listed_price" in background and "buyer_target" in background:
        sl = compute_sl(ep.deal_price if ep.success else None,
                        float(background["listed_price"]), float(background["buyer_target"]))
    return CaseRecord(
        case_id=ep.case_id,
        success=ep.success,
        turns=ep.turns,
        deal_price=ep.deal_price,
        sl=sl,
        total_reward=float(sum(ep.rewards)),
        actions=[t.action for t in ep.transitions],
        decisions=[i.decision.value for i in infos],
        mcts_turns=sum(i.decision is Decision.MCTS for i in infos),
    )


def make_planner(cfg: RunConfig, model: PolicyModel | None, trace_dir: Path | None = None) -> Planner:
    gate = None
    if cfg.mode == "dual":
        gate = ControlGate(cfg.target_ratio, min_samples=cfg.gate_min_samples, seed=cfg.seed,
                           measure=cfg.gate_measure)
    return Planner(cfg.mode, model, cfg.mcts, gate, cfg.reuse_simulation, trace_dir)


def run_eval(cfg: RunConfig, model: PolicyModel | None, env: DialogueEnv, cases: Sequence[Mapping],
             out_dir: str | Path | None = None, trace_search: bool = False) -> MetricsReport:
    """Play every case under the configured planner and aggregate AT, SR and SL.

    Dual mode shares one gate across cases, so it always runs cases in
    order; the other modes may use a thread pool.
    """
    out = Path(out_dir) if out_dir is not None else None
    planner = make_planner(cfg, model, out / "search_traces" if out is not None and trace_search else None)
    episodes: list[Episode | None] = [None] * len(cases)

    def one(i: int) -> CaseRecord:
        case = cases[i]
        try:
            run = run_episode(planner, env, case)
        except DualPlanError as exc:
            log.warning("case %s failed: %s", case.get("case_id"), exc)
            return CaseRecord(case.get("case_id"), False, 0, None, None, 0.0, [], [], 0, error=str(exc))
        episodes[i] = run.episode
        return _case_record(run.episode, run.turns, env.task, case)

    if cfg.workers > 1 and cfg.mode != "dual":
        with ThreadPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(one, range(len(cases))))
    else:
        records = [one(i) for i in range(len(cases))]

    report = MetricsReport.from_records(records, env.counter.snapshot(), cfg.mode,
                                        cfg.target_ratio if cfg.mode == "dual" else None)
    if out is not None:
        write_outputs(out, cfg, report, [e for e in episodes if e is not None], planner.gate)
    return report


# -- cost -----------------------------------------------------------------


def cost_report(counter: CallCounter | Mapping, report: MetricsReport | None = None) -> dict:
    """Call units per case and per turn, split by phase, plus raw API volume."""
    snap = counter.snapshot() if isinstance(counter, CallCounter) else dict(counter)
    n_cases = report.n_cases if report is not None else 0
    turns = report.AT * report.n_cases if report is not None else 0.0
    units = snap.get("total_units", 0)
    raw = sum(snap[p]["system"] + snap[p]["user"] + snap[p]["critic_samples"]
              for p in ("acting", "simulation", "training") if p in snap)
    per_phase = {p: sum(snap[p][r] for r in ("system", "user", "critic"))
                 for p in ("acting", "simulation", "training") if p in snap}
    return {
        "cases": n_cases,
        "total_units": units,
        "units_per_case": units / n_cases if n_cases else 0.0,
        "units_per_turn": units / turns if turns else 0.0,
        "raw_calls": raw,
        "raw_calls_per_case": raw / n_cases if n_cases else 0.0,
        "units_by_phase": per_phase,
        "realized_mcts_ratio": report.realized_mcts_ratio if report is not None else 0.0,
    }


COST_COLUMNS = ("mode", "target_ratio", "realized_mcts_ratio", "SR", "AT", "cases", "units_per_case",
                "units_per_turn", "raw_calls_per_case")


def cost_rows(reports: Sequence[MetricsReport]) -> list[dict]:
    rows = []
    for r in reports:
        c = cost_report(r.cost, r)
        rows.append({"mode": r.mode, "target_ratio": r.target_ratio, "SR": r.SR, "AT": r.AT, **c})
    return rows


def write_cost_csv(path: str | Path, reports: Sequence[MetricsReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(COST_COLUMNS), extrasaction="ignore")
        w.writeheader()
        w.writerows(cost_rows(reports))
    return path


# -- persistence and replay ---------------------------------------------


def write_outputs(out: Path, cfg: RunConfig, report: MetricsReport, episodes: Sequence[Episode],
                  gate: ControlGate | None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(report.summary(), indent=1), encoding="utf-8")
    with (out / "records.jsonl").open("w", encoding="utf-8") as fh:
        for r in report.records:
            fh.write(json.dumps(r.to_dict()) + "\n")
    write_episodes(out / "episodes.jsonl", episodes)
    write_cost_csv(out / "cost.csv", [report])
    if gate is not None:
        gate.write_trace(out / "gate_trace.csv")
    write_manifest(out / "manifest.json", cfg, report)


def write_manifest(path: Path, cfg: RunConfig, report: MetricsReport) -> Path:
    manifest = {
        "package_version": dualplan.__version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "checkpoint_hash": file_hash(cfg.checkpoint),
        "records_hash": report.records_hash(),
    }
    if cfg.backend == "scripted":
        manifest["scripted_spec_hash"] = sha256_text(json.dumps(scripted_spec_for(cfg).to_dict(), sort_keys=True))
    path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return path


def read_records(path: str | Path) -> list[CaseRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [CaseRecord(**json.loads(line)) for line in lines if line.strip()]


@dataclass
class ReplayResult:
    report: MetricsReport
    matches: bool
    expected_hash: str
    actual_hash: str


def replay_from_manifest(path: str | Path, out_dir: str | Path | None = None) -> ReplayResult:
    """Rebuild the run described by a manifest and check it reproduces the same per-case records."""
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = RunConfig.from_dict(manifest["config"])
    if manifest.get("checkpoint_hash") != file_hash(cfg.checkpoint):
        raise ConfigError("checkpoint on disk differs from the one recorded in the manifest")
    task, env = build_environment(cfg)
    report = run_eval(cfg, load_model(cfg, task), env, load_cases(cfg), out_dir)
    actual = report.records_hash()
    return ReplayResult(report, actual == manifest["records_hash"], manifest["records_hash"], actual)


# -- interactive probe ---------------------------------------------------


def interactive_chat(cfg: RunConfig, model: PolicyModel | None, env: DialogueEnv, background: Mapping,
                     read: Callable[[str], str] = input, write: Callable[[str], None] = print,
                     out_dir: str | Path | None = None) -> Episode:
    """Plan live while a person types the user turns.

    ``env`` keeps its simulated backend for tree-search rollouts and the
    critic; only the real user turns come from the terminal.
    """
    planner = make_planner(cfg, model)
    human = HumanUserBackend(env.backend, read, write)
    acting = DialogueEnv(env.task, human, env.counter)
    state = env.initial_state(background)
    for utt in state.history:
        write(f"{utt.speaker.value}: {utt.text}")
    transitions = []
    while not env.is_terminal(state):
        human.last_system = None
        try:
            tr, _ = planner.step(state, env, acting, mcts_source="mcts")
        except SessionEnded:
            if human.last_system is not None:
                # the person left mid-exchange: keep the system turn they walked away from
                text, strategy = human.last_system
                nxt = state.extend(text, strategy.id, "[session ended]").finished()
                transitions.append(Transition(state, strategy.id, 0.0, nxt, True, (), "human"))
            break
        tr = replace(tr, source="human")
        transitions.append(tr)
        state = tr.next_state
    success = bool(transitions) and transition_succeeded(env.task, transitions[-1])
    ep = Episode.from_transitions(env.task.name, transitions, success,
                                  deal_price=transitions[-1].deal_price if transitions else None,
                                  case_id=background.get("case_id"), stage="human")
    if out_dir is not None:
        out = Path(out_dir)
        write_episodes(out / "chat_episodes.jsonl", [ep], append=True)
        if planner.gate is not None:
            planner.gate.write_trace(out / "chat_gate_trace.csv")
    return ep


def sweep_ratios(cfg: RunConfig, model: PolicyModel, ratios: Sequence[float], cases: Sequence[Mapping],
                 out_dir: str | Path | None = None) -> list[MetricsReport]:
    """One dual-mode run per target ratio, each with a fresh environment and gate."""
    reports = []
    for q in ratios:
        run_cfg = RunConfig.from_dict({**cfg.to_dict(), "mode": "dual", "target_ratio": float(q)})
        _, env = build_environment(run_cfg)
        sub = Path(out_dir) / f"ratio_{q:.2f}" if out_dir is not None else None
        reports.append(run_eval(run_cfg, model, env, cases, sub))
    if out_dir is not None:
        write_cost_csv(Path(out_dir) / "ratio_sweep.csv", reports)
    return reports

