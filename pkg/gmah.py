import argparse
import logging
import os
import sys

from agent.A2C import ActorCritic
from envs import make_env
from envs.conformance import conformance_suite
from experiments.Evaluation import EvalReport, FlatPolicy, StayPutPolicy, evaluate
from experiments.StageRunner import A2C_CHECKPOINT, StageRunner
from network.gradient_check import family_gradient_checks
from utils.color import Color, highlight
from utils.Config import ENVS, STAGES, EnvConfig, apply_overrides, echo_config, parse_config
from utils.errors import ConformanceError, GmahError, NumericError
from utils.plotting import render_curves, render_heatmap

log = logging.getLogger("gmah")

EVAL_REPORT = "eval_report.json"
SUBGOAL_TRACE = "subgoal_trace.csv"
GRADIENT_TOLERANCE = 1e-4
TRASHGRID_OBS_DIM = 58


def load_config(args):
    cfg = parse_config(args.config) if args.config else parse_config()
    return apply_overrides(cfg, seed=getattr(args, "seed", None), env=getattr(args, "env", None),
                           stage=getattr(args, "stage", None), adapt=getattr(args, "adapt", None),
                           episodes=getattr(args, "episodes", None), out=args.out)


def train(args):
    cfg = load_config(args)
    seeds = list(cfg.run.seeds)
    base = cfg.run.out_dir
    summaries = []
    for seed in seeds:
        if len(seeds) > 1:
            cfg = apply_overrides(cfg, seed=seed)
            cfg.run.seeds = seeds
            cfg.run.out_dir = os.path.join(base, "seed_{}".format(seed))
        summaries.append(StageRunner(cfg, seed).run())
    return summaries


def evaluate_run(args):
    """Greedy evaluation of the artifacts in the output directory for the configured stage."""
    cfg = load_config(args)
    runner = StageRunner(cfg)
    out = runner.out_dir
    run = cfg.run
    n = runner.info.n_agents
    seed = runner.seed
    if run.stage == "a2c":
        model = ActorCritic.load(runner.path(A2C_CHECKPOINT))
        report = evaluate(cfg.env, cfg.hrl, [FlatPolicy(model)] * n, run.eval_episodes, seed, n_jobs=run.n_jobs,
                          trace_path=os.path.join(out, SUBGOAL_TRACE), flat=True)
    else:
        lows = runner.load_lows()
        highs = None
        if run.stage == "mix":
            highs = runner.load_highs("_mix")
        elif run.stage == "high":
            highs = runner.load_highs()
        ae = runner.load_autoencoder() if run.adapt and highs is not None else None
        report = evaluate(cfg.env, cfg.hrl, lows, run.eval_episodes, seed, highs=highs, ae=ae,
                          trigger_cfg=cfg.trigger, n_jobs=run.n_jobs, trace_path=os.path.join(out, SUBGOAL_TRACE))
        stay = evaluate(cfg.env, cfg.hrl, [StayPutPolicy()] * n, run.eval_episodes, seed, n_jobs=run.n_jobs)
        log.info("coverage {} cells, stay-put reference {} cells".format(report.coverage(), stay.coverage()))
    report.save(os.path.join(out, EVAL_REPORT))
    log.info(highlight("mean reward {:.3f}, min reward {:.3f}, subgoal success {}".format(
        report.mean_reward, report.min_reward, ", ".join("{:.2f}".format(s) for s in report.success_rate))))
    return report


def plot(args):
    cfg = load_config(args)
    echo_config(cfg, args.out)
    weight = cfg.run.smoothing if args.weight is None else args.weight
    return render_curves(args.csv, args.columns, weight=weight, min_reward=args.min_reward,
                         out=os.path.join(args.out, "curves.svg"))


def heatmap(args):
    echo_config(load_config(args), args.out)
    return render_heatmap(EvalReport.load(args.report), out=os.path.join(args.out, "heatmap.svg"))


def conformance(args):
    cfg = load_config(args)
    echo_config(cfg, cfg.run.out_dir)
    env = make_env(cfg.env)
    defaults = EnvConfig(name="trashgrid", max_steps=cfg.env.max_steps)
    expected = TRASHGRID_OBS_DIM if cfg.env == defaults else None
    report = conformance_suite(env, seed=cfg.run.seeds[0], expected_obs_dim=expected)
    print(report.to_frame().to_string(index=False))
    if not report.passed:
        raise ConformanceError("{} failed {} conformance check(s)".format(
            env.name, sum(not c.passed for c in report.checks)))
    return report


def gradcheck(args):
    cfg = load_config(args)
    echo_config(cfg, cfg.run.out_dir)
    results = family_gradient_checks(seed=cfg.run.seeds[0], trials=args.trials)
    for family, error in sorted(results.items()):
        color = Color.GREEN if error < GRADIENT_TOLERANCE else Color.RED
        log.info(highlight("{:<12} max relative error {:.2e}".format(family, error), color))
    worst = max(results.values())
    if worst >= GRADIENT_TOLERANCE:
        raise NumericError("gradient check failed: max relative error {:.2e}".format(worst))
    return results


def build_parser():
    parser = argparse.ArgumentParser(prog="gmah", description="Hierarchical multi-agent goal learning")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", help="JSON config file", type=str)
        p.add_argument("--seed", help="overrides run.seeds", type=int)
        p.add_argument("--out", help="output directory (GMAH_OUT wins)", type=str)
        p.add_argument("--stage", choices=STAGES)
        p.add_argument("--env", choices=ENVS)
        p.add_argument("--adapt", choices=("on", "off"))

    p = commands.add_parser("train", help="run one training stage")
    run_flags(p)
    p.set_defaults(func=train)

    p = commands.add_parser("eval", help="greedy evaluation of a trained stage")
    run_flags(p)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=evaluate_run)

    p = commands.add_parser("plot", help="training curves from metrics CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--columns", nargs="+", default=["reward_mean"])
    p.add_argument("--weight", type=float, help="smoothing weight, run.smoothing by default")
    p.add_argument("--min-reward", dest="min_reward", action="store_true")
    p.add_argument("--config", type=str)
    p.add_argument("--out", default=".")
    p.set_defaults(func=plot)

    p = commands.add_parser("heatmap", help="per-agent visit heatmaps from an eval report")
    p.add_argument("report")
    p.add_argument("--config", type=str)
    p.add_argument("--out", default=".")
    p.set_defaults(func=heatmap)

    p = commands.add_parser("conformance", help="environment contract checks")
    p.add_argument("--env", choices=ENVS)
    p.add_argument("--config", type=str)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for resolved_config.json (GMAH_OUT wins)", type=str)
    p.set_defaults(func=conformance)

    p = commands.add_parser("gradcheck", help="finite-difference check of every network family")
    p.add_argument("--config", type=str)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--out", help="directory for resolved_config.json (GMAH_OUT wins)", type=str)
    p.set_defaults(func=gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(format='%(levelname)s [%(name)s]:%(message)s',
                        level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        args.func(args)
    except GmahError as e:
        log.error("{}: {}".format(e.__class__.__name__, e))
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
