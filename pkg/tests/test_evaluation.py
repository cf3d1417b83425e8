import json

import pytest

from dualplan.dialogue import read_episodes
from dualplan.encoder import FeatureEncoder
from dualplan.env.base import DialogueEnv
from dualplan.env.scripted import ScriptedBackend, load_scripted_spec, make_cases
from dualplan.errors import ConfigError, StepFailed
from dualplan.evaluation import (
    MetricsReport,
    RunConfig,
    build_environment,
    cost_report,
    interactive_chat,
    load_cases,
    read_records,
    replay_from_manifest,
    run_eval,
    sweep_ratios,
)
from dualplan.mcts import MctsConfig
from dualplan.policy import PolicyModel

SOLVED = "Yes, the Patient’s issue has been solved."
SAME = "No, the Patient feels the same."


def solved_at(k):
    return lambda state: SOLVED if state.turn >= k else SAME


@pytest.fixture
def model(esconv):
    return PolicyModel.fresh(FeatureEncoder(esconv), hidden=8, seed=0)


def cases(n):
    return [{"case_id": f"c{i}", "situation": "hello"} for i in range(n)]


def test_constructed_two_turn_env(esconv, model, fixed_backend):
    env = DialogueEnv(esconv, fixed_backend(verdict=solved_at(2)))
    report = run_eval(RunConfig(mode="system1"), model, env, cases(7))
    assert report.AT == 2.0 and report.SR == 1.0 and report.SL is None
    assert report.n_cases == 7 and report.n_failed == 0


def test_system1_cost_per_case(esconv, model, fixed_backend):
    env = DialogueEnv(esconv, fixed_backend(verdict=solved_at(3)))
    report = run_eval(RunConfig(mode="system1"), model, env, cases(4))
    assert report.AT == 3.0
    assert cost_report(env.counter, report)["units_per_case"] == 9.0


def test_zero_cases(esconv, model, fixed_backend):
    env = DialogueEnv(esconv, fixed_backend())
    report = run_eval(RunConfig(mode="system1"), model, env, [])
    assert (report.AT, report.SR, report.n_cases) == (0.0, 0.0, 0)
    summary = cost_report(env.counter, report)
    assert summary["units_per_case"] == 0.0 and summary["units_per_turn"] == 0.0


def test_failed_cases_excluded(esconv, model, fixed_backend):
    class Picky(fixed_backend):
        def user_respond(self, state):
            if state.case_id == "c1":
                raise StepFailed("user simulator crashed")
            return "hmm"

    env = DialogueEnv(esconv, Picky(verdict=solved_at(2)))
    report = run_eval(RunConfig(mode="system1"), model, env, cases(3))
    assert report.n_cases == 2 and report.n_failed == 1
    assert report.AT == 2.0
    assert [r.error is not None for r in report.records] == [False, True, False]


def test_failures_count_toward_sr(esconv, model, fixed_backend):
    env = DialogueEnv(esconv, fixed_backend())
    report = run_eval(RunConfig(mode="system1"), model, env, cases(3))
    assert report.SR == 0.0 and report.AT == esconv.max_turns


def test_persisted_records_reproduce_aggregates(tmp_path, model):
    cfg = RunConfig(mode="dual", target_ratio=0.5, n_eval_cases=15, mcts=MctsConfig(3),
                    scripted_spec="two_phase")
    _, env = build_environment(cfg)
    report = run_eval(cfg, model, env, load_cases(cfg), tmp_path)
    again = MetricsReport.from_records(read_records(tmp_path / "records.jsonl"))
    assert (again.AT, again.SR, again.SL, again.realized_mcts_ratio) == \
        (report.AT, report.SR, report.SL, report.realized_mcts_ratio)
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["SR"] == report.SR
    assert (tmp_path / "gate_trace.csv").exists() and (tmp_path / "cost.csv").exists()
    assert len(read_episodes(tmp_path / "episodes.jsonl")) == 15


def test_cb_sale_to_list(model):
    cfg = RunConfig(task="cb", mode="system2", n_eval_cases=10, mcts=MctsConfig(5))
    task, env = build_environment(cfg)
    report = run_eval(cfg, None, env, load_cases(cfg))
    assert report.SL is not None
    for r in report.records:
        assert (r.sl == 0.0) if not r.success else (0.0 <= r.sl <= 1.5)


def test_workers_match_serial(model):
    base = RunConfig(mode="system2", n_eval_cases=12, mcts=MctsConfig(3), scripted_spec="two_phase")
    out = []
    for workers in (1, 4):
        cfg = RunConfig.from_dict({**base.to_dict(), "workers": workers})
        _, env = build_environment(cfg)
        out.append(run_eval(cfg, None, env, load_cases(cfg)).records_hash())
    assert out[0] == out[1]


def test_replay_from_manifest(tmp_path, model):
    ckpt = model.save(tmp_path / "m.json")
    cfg = RunConfig(mode="dual", target_ratio=0.5, n_eval_cases=10, mcts=MctsConfig(3),
                    checkpoint=str(ckpt), scripted_spec="two_phase", seed=4)
    _, env = build_environment(cfg)
    run_eval(cfg, model, env, load_cases(cfg), tmp_path / "run")
    assert replay_from_manifest(tmp_path / "run" / "manifest.json").matches
    model.params.w1[0, 0] += 1.0
    model.save(ckpt)
    with pytest.raises(ConfigError):
        replay_from_manifest(tmp_path / "run" / "manifest.json")


def test_sweep_writes_table(tmp_path, model):
    cfg = RunConfig(n_eval_cases=6, mcts=MctsConfig(3), scripted_spec="two_phase")
    reports = sweep_ratios(cfg, model, [0.0, 1.0], load_cases(cfg), tmp_path)
    assert reports[1].realized_mcts_ratio == 1.0
    assert len((tmp_path / "ratio_sweep.csv").read_text().splitlines()) == 3


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(mode="fast")
    with pytest.raises(ConfigError):
        RunConfig(target_ratio=2.0)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"colour": "red"})
    cfg = RunConfig(mcts=MctsConfig(7))
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.config_hash() != RunConfig().config_hash()


def scripted_lines(*lines):
    it = iter(lines)

    def read(prompt):
        try:
            return next(it)
        except StopIteration:
            raise EOFError from None

    return read


def test_chat_quit_at_first_turn(tmp_path, esconv, two_phase, two_phase_case, model):
    env = DialogueEnv(esconv, ScriptedBackend(two_phase))
    shown = []
    ep = interactive_chat(RunConfig(mode="system1"), model, env, two_phase_case,
                          read=scripted_lines("quit"), write=shown.append, out_dir=tmp_path)
    assert ep.turns == 1 and not ep.success
    assert ep.stage == "human" and ep.transitions[0].source == "human"
    assert read_episodes(tmp_path / "chat_episodes.jsonl") == [ep]
    assert any("system:" in line for line in shown)


def test_chat_dual_keeps_gate_trace(tmp_path, esconv, two_phase, two_phase_case, model):
    env = DialogueEnv(esconv, ScriptedBackend(two_phase))
    ep = interactive_chat(RunConfig(mode="dual", mcts=MctsConfig(3)), model, env, two_phase_case,
                          read=scripted_lines("I see", "thanks"), write=lambda s: None, out_dir=tmp_path)
    assert ep.turns == 3
    rows = (tmp_path / "chat_gate_trace.csv").read_text().splitlines()
    assert len(rows) == 1 + 3


def test_chat_eof_is_graceful(esconv, two_phase, two_phase_case, model):
    env = DialogueEnv(esconv, ScriptedBackend(two_phase))
    ep = interactive_chat(RunConfig(mode="system1"), model, env, two_phase_case,
                          read=scripted_lines(), write=lambda s: None)
    assert ep.turns == 1 and not ep.success


def test_scripted_cases_from_file(tmp_path):
    spec = load_scripted_spec("two_phase")
    path = tmp_path / "cases.jsonl"
    path.write_text("\n".join(json.dumps(c) for c in make_cases(spec, 5)))
    cfg = RunConfig(cases_path=str(path), n_eval_cases=3, scripted_spec="two_phase")
    assert [c["case_id"] for c in load_cases(cfg)] == [c["case_id"] for c in make_cases(spec, 3)]
