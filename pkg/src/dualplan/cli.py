"""Command line entry point.

Exit codes: 0 on success, 1 for configuration or usage errors, 2 when a run
fails part way (outputs written so far are kept).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from dualplan.dialogue import read_episodes, write_episodes
from dualplan.encoder import FeatureEncoder
from dualplan.env.scripted import logged_episodes, make_cases
from dualplan.errors import ConfigError, DualPlanError
from dualplan.evaluation import (
    RunConfig,
    build_environment,
    interactive_chat,
    load_cases,
    load_model,
    run_eval,
    scripted_spec_for,
    sweep_ratios,
    write_cost_csv,
)
from dualplan.policy import PolicyModel
from dualplan.pretrain import PretrainConfig, run_pretraining, score_dataset
from dualplan.selfplay import SelfPlayConfig, run_selfplay_training

log = logging.getLogger("dualplan")


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


class Context:
    """Options shared by every subcommand, merged over the config file's "run" section."""

    def __init__(self, file_cfg: dict, overrides: dict, out_dir: Path):
        self.file_cfg = file_cfg
        self.overrides = {k: v for k, v in overrides.items() if v is not None}
        self.out_dir = out_dir

    def run_config(self, **extra) -> RunConfig:
        run = dict(self.file_cfg.get("run", {}))
        run.update(self.overrides)
        run.update({k: v for k, v in extra.items() if v is not None})
        if "n_simulations" in run:
            mcts = dict(run.get("mcts") or {})
            mcts["n_simulations"] = run.pop("n_simulations")
            run["mcts"] = mcts
        return RunConfig.from_dict(run)

    def section(self, name: str) -> dict:
        return dict(self.file_cfg.get(name, {}))


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config file.")
@click.option("--seed", type=int, help="Seed for cases, simulator noise and training.")
@click.option("--backend", type=click.Choice(["scripted", "llm", "cassette"]))
@click.option("--mode", type=click.Choice(["system1", "system2", "dual"]))
@click.option("--mcts-ratio", type=click.FloatRange(0, 1), help="Target share of MCTS turns in dual mode.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="runs", show_default=True)
@click.option("--task", help="Built-in task name or path to a task JSON.")
@click.option("--scripted-spec", help="Built-in scripted simulator name or path.")
@click.option("--cassette", type=click.Path(dir_okay=False), help="Recorded LLM responses to replay.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, config_path, seed, backend, mode, mcts_ratio, out_dir, task, scripted_spec, cassette, verbose):
    """Dual-mode dialogue planning: train, evaluate and probe policies."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = dict(seed=seed, backend=backend, mode=mode, target_ratio=mcts_ratio, task=task,
                     scripted_spec=scripted_spec, cassette=cassette)
    ctx.obj = Context(_read_config(config_path), overrides, Path(out_dir))


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1), encoding="utf-8")


@cli.command("score-dataset")
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", type=click.Path(dir_okay=False), help="Defaults to OUT_DIR/scored.jsonl.")
@click.pass_obj
def score_dataset_cmd(obj: Context, input_path, output):
    """Attach critic rewards to every turn of a JSON-Lines episode file."""
    cfg = obj.run_config()
    _, env = build_environment(cfg)
    scored = score_dataset(read_episodes(input_path), env)
    out = Path(output) if output else obj.out_dir / "scored.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_episodes(out, scored.episodes)
    click.echo(f"scored {len(scored)} episodes, skipped {scored.n_errors} -> {out}")


@cli.command()
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False),
              help="Scored episodes (JSON-Lines). Without it a scripted logged corpus is generated.")
@click.option("--validation", type=click.Path(exists=True, dir_okay=False))
@click.option("--logged-cases", type=int, default=300, show_default=True)
@click.option("--expert-rate", type=float, default=0.5, show_default=True)
@click.option("--epochs", type=int)
@click.option("--lr", "learning_rate", type=float)
@click.option("--lambda1", type=float)
@click.option("--variant", type=click.Choice(["full_return", "bootstrapped"]))
@click.option("--reduction", type=click.Choice(["sum", "mean"]))
@click.option("--hidden", type=int, default=64, show_default=True)
@click.pass_obj
def pretrain(obj: Context, dataset, validation, logged_cases, expert_rate, epochs, learning_rate, lambda1,
             variant, reduction, hidden):
    """Fit the policy and Q heads on logged dialogues."""
    run = obj.run_config()
    task, env = build_environment(run)
    pcfg = PretrainConfig.for_task(task.name, **{**obj.section("pretrain"), "epochs": epochs,
                                   "learning_rate": learning_rate, "lambda1": lambda1,
                                   "variant": variant, "reduction": reduction, "seed": run.seed})
    if dataset:
        episodes = read_episodes(dataset)
        val = read_episodes(validation) if validation else None
    else:
        spec = scripted_spec_for(run)
        episodes = logged_episodes(env, spec, make_cases(spec, logged_cases, seed=run.seed + 1000),
                                   expert_rate, seed=run.seed)
        val = logged_episodes(env, spec, make_cases(spec, max(1, logged_cases // 5), seed=run.seed + 2000),
                              expert_rate, seed=run.seed + 1)
    if not episodes:
        raise ConfigError("the training dataset holds no episodes")
    model = PolicyModel.fresh(FeatureEncoder(task), hidden=hidden, seed=run.seed)
    out = obj.out_dir
    result = run_pretraining(model, episodes, pcfg, val, out / "pretrain_history.csv")
    PolicyModel(model.encoder, result.params).save(out / "pretrain_best.json")
    _write_json(out / "pretrain_config.json", pcfg.to_dict())
    click.echo(f"best epoch {result.best_epoch} -> {out / 'pretrain_best.json'}")


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), help="Start from these weights.")
@click.option("--n-cases", type=int, default=200, show_default=True)
@click.option("--epochs", type=int)
@click.option("--episodes-per-epoch", type=int)
@click.option("--updates-per-epoch", type=int)
@click.option("--lr", "learning_rate", type=float)
@click.option("--lambda2", type=float)
@click.option("--reduction", type=click.Choice(["sum", "mean"]))
@click.option("--n-simulations", type=int)
@click.option("--hidden", type=int, default=64, show_default=True)
@click.pass_obj
def selfplay(obj: Context, checkpoint, n_cases, epochs, episodes_per_epoch, updates_per_epoch, learning_rate,
             lambda2, reduction, n_simulations, hidden):
    """Improve the heads from tree-search self-play against the simulated user."""
    run = obj.run_config(checkpoint=checkpoint, n_eval_cases=n_cases, n_simulations=n_simulations)
    task, env = build_environment(run)
    encoder = FeatureEncoder(task)
    model = PolicyModel.load(encoder, checkpoint) if checkpoint else PolicyModel.fresh(encoder, hidden, seed=run.seed)
    scfg = SelfPlayConfig.for_task(task.name, **{**obj.section("selfplay"), "epochs": epochs,
                                   "episodes_per_epoch": episodes_per_epoch,
                                   "updates_per_epoch": updates_per_epoch, "learning_rate": learning_rate,
                                   "lambda2": lambda2, "reduction": reduction, "seed": run.seed,
                                   "mcts": run.mcts})
    result = run_selfplay_training(model, env, load_cases(run), scfg, obj.out_dir)
    click.echo(f"best epoch {result.best_epoch} -> {obj.out_dir / 'selfplay_best.json'}")


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--cases", "cases_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--n-cases", type=int)
@click.option("--n-simulations", type=int)
@click.option("--workers", type=int)
@click.option("--sweep", help="Comma-separated target ratios; runs dual mode once per ratio.")
@click.option("--trace-search", is_flag=True, help="Dump every search tree as JSON.")
@click.pass_obj
def eval_cmd(obj: Context, checkpoint, cases_path, n_cases, n_simulations, workers, sweep, trace_search):
    """Evaluate a planner and write metrics, per-case records, cost CSV and a manifest."""
    run = obj.run_config(checkpoint=checkpoint, cases_path=cases_path, n_eval_cases=n_cases,
                         n_simulations=n_simulations, workers=workers)
    task, env = build_environment(run)
    cases = load_cases(run)
    if sweep:
        try:
            ratios = [float(x) for x in sweep.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --sweep value {sweep!r}") from exc
        model = load_model(RunConfig.from_dict({**run.to_dict(), "mode": "dual"}), task)
        reports = sweep_ratios(run, model, ratios, cases, obj.out_dir)
        for q, r in zip(ratios, reports):
            click.echo(f"ratio {q:.2f}: SR {r.SR:.4f} AT {r.AT:.3f} mcts {r.realized_mcts_ratio:.3f}")
        return
    report = run_eval(run, load_model(run, task), env, cases, obj.out_dir, trace_search=trace_search)
    write_cost_csv(obj.out_dir / "cost.csv", [report])
    sl = f" SL {report.SL:.4f}" if report.SL is not None else ""
    click.echo(f"{run.mode}: SR {report.SR:.4f} AT {report.AT:.3f}{sl} over {report.n_cases} cases "
               f"({report.n_failed} failed) -> {obj.out_dir}")


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--case-index", type=int, default=0, show_default=True)
@click.option("--cases", "cases_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def chat(obj: Context, checkpoint, case_index, cases_path):
    """Talk to the planner yourself; type quit to stop."""
    run = obj.run_config(checkpoint=checkpoint, cases_path=cases_path,
                         n_eval_cases=None if cases_path else case_index + 1)
    task, env = build_environment(run)
    cases = load_cases(run)
    if not 0 <= case_index < len(cases):
        raise ConfigError(f"case index {case_index} out of range (have {len(cases)})")
    ep = interactive_chat(run, load_model(run, task), env, cases[case_index], out_dir=obj.out_dir)
    click.echo(f"session saved: {ep.turns} turns, success={ep.success}")


def main(argv: list[str] | None = None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="dualplan", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except DualPlanError as exc:
        click.echo(f"run failed: {exc}", err=True)
        return 2
    except Exception as exc:  # anything unexpected is still a failed run, not a crash
        log.debug("unhandled error", exc_info=True)
        click.echo(f"run failed: {exc!r}", err=True)
        return 2
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
