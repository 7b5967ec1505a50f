"""
Command line interface.

    gen-data          roll out a behavior policy into a JSON Lines dataset
    train             train a planner, write a run directory
    eval              closed-loop evaluation of a run directory
    sample            one planned trajectory as CSV
    analyze-spectrum  energy density of a dataset as CSV
    ablate            ablation (and optional mother-wavelet) suite

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

import pipeline
import spectral
import worldkit
from errors import WavediffError
from fields import help_text
from globals import DEFAULT_CONFIG, RUN_ERRORS_LOG, RUN_EVAL_LOG, RUN_PROGRESS_LOG
from run_log import EvalLogger, TrainLogger
from view import report, tables

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    "argparse parser whose usage errors leave through UsageError"

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def _write(path, text):
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
    with open(path, "w", encoding="utf-8") as f_out:
        f_out.write(text)


def _load_config(path, seed):
    cfg = pipeline.TrainConfig.from_file(path or DEFAULT_CONFIG)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg.validate()


# commands {{{


def cmd_gen_data(args):
    env = worldkit.make_env(args.env)
    spec = worldkit.parse_policy(args.policy, sigma=args.sigma)
    dataset = worldkit.generate_dataset(env, spec, args.episodes, args.horizon, args.seed)
    checksum = worldkit.save_dataset(dataset, args.out)
    logger.info("wrote %s (sha256 %s)", args.out, checksum)


def cmd_train(args):
    cfg = _load_config(args.config, args.seed)
    dataset = worldkit.load_dataset(args.data)
    if not os.path.exists(args.out):
        os.makedirs(args.out)
    with TrainLogger(
        os.path.join(args.out, RUN_PROGRESS_LOG), os.path.join(args.out, RUN_ERRORS_LOG), timestamps=False
    ) as run_logger:
        try:
            bundle, log = pipeline.train(dataset, cfg, run_logger=run_logger)
        except WavediffError as exc:
            run_logger.log("train", error=str(exc))
            raise
    pipeline.write_run_dir(args.out, bundle, log=log)
    logger.info("trained %s into %s", cfg.mode, args.out)


def cmd_eval(args):
    bundle = pipeline.load_bundle(args.run)
    seeds = [args.seed + k for k in range(args.seeds)]
    result = pipeline.evaluate(
        bundle, bundle.env, seeds=seeds, episodes=args.episodes,
        max_steps=args.max_steps, reference=bundle.reference,
    )
    with EvalLogger(
        os.path.join(args.run, RUN_EVAL_LOG), os.path.join(args.run, RUN_ERRORS_LOG)
    ) as eval_logger:
        for rollout in result.rollouts:
            eval_logger.log({"seed": rollout.seed, "returns": rollout.returns})
    _write(args.out, report.render_eval(result, bundle.env, bundle.checksums()))


def cmd_sample(args):
    bundle = pipeline.load_bundle(args.run)
    dataset = worldkit.load_dataset(args.data)
    if not dataset.episodes:
        raise WavediffError("dataset has no episodes")
    queue = pipeline.HistoryQueue(bundle.cfg.capacity)
    for state in dataset.episodes[0].states[: bundle.cfg.capacity]:
        queue.insert(state)
    rng = np.random.default_rng(args.seed)
    _, plan = pipeline.plan_step(bundle, queue, bundle.cfg, rng, return_plan=True)
    _write(args.out, tables.render_plan(plan))


def cmd_analyze_spectrum(args):
    dataset = worldkit.load_dataset(args.data)
    if not dataset.episodes:
        raise WavediffError("dataset has no episodes")
    length = min(len(ep.states) for ep in dataset.episodes)
    density = spectral.dataset_energy_density([ep.states[:length] for ep in dataset.episodes])
    _write(args.out, tables.render_energy_density(density, args.fraction))


def cmd_ablate(args):
    cfg = _load_config(args.config, args.seed)
    dataset = worldkit.load_dataset(args.data)
    seeds = [args.seed + k for k in range(args.seeds)]
    rows = pipeline.ablation_suite(
        dataset, dataset.env, cfg, seeds=seeds, episodes=args.episodes, max_steps=args.max_steps
    )
    if args.wavelets:
        rows += pipeline.wavelet_suite(
            dataset, dataset.env, cfg, wavelets=args.wavelets.split(","), seeds=seeds,
            episodes=args.episodes, max_steps=args.max_steps,
        )
    if not os.path.exists(args.out):
        os.makedirs(args.out)
    _write(os.path.join(args.out, "ablation.csv"), tables.render_suite(rows))
    _write(os.path.join(args.out, "ablation.json"), report.render_suite(rows))


# }}}


def build_parser():
    parser = _Parser(prog="wavediff", description="Wavelet diffusion planner toolkit")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    def command(name, func, help_line, **kwargs):
        sub = commands.add_parser(name, help=help_line, **kwargs)
        sub.set_defaults(func=func)
        sub.add_argument("--out", required=True)
        return sub

    sub = command("gen-data", cmd_gen_data, "generate an offline dataset")
    sub.add_argument("--env", required=True, choices=[k.value for k in worldkit.EnvKind])
    sub.add_argument("--policy", required=True)
    sub.add_argument("--sigma", type=float, default=0.5)
    sub.add_argument("--episodes", type=int, default=100)
    sub.add_argument("--horizon", type=int, default=200)
    sub.add_argument("--seed", type=int, default=0)

    sub = command(
        "train", cmd_train, "train a planner",
        epilog="configuration keys:\n" + help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub.add_argument("--config")
    sub.add_argument("--data", required=True)
    sub.add_argument("--seed", type=int)

    sub = command("eval", cmd_eval, "evaluate a trained run")
    sub.add_argument("--run", required=True)
    sub.add_argument("--episodes", type=int, default=20)
    sub.add_argument("--max-steps", dest="max_steps", type=int, default=100)
    sub.add_argument("--seeds", type=int, default=5)
    sub.add_argument("--seed", type=int, default=0)

    sub = command("sample", cmd_sample, "write one planned trajectory")
    sub.add_argument("--run", required=True)
    sub.add_argument("--data", required=True)
    sub.add_argument("--seed", type=int, default=0)

    sub = command("analyze-spectrum", cmd_analyze_spectrum, "energy density of a dataset")
    sub.add_argument("--data", required=True)
    sub.add_argument("--fraction", type=float, default=0.2)
    sub.add_argument("--seed", type=int, default=0)

    sub = command("ablate", cmd_ablate, "ablation suite")
    sub.add_argument("--config")
    sub.add_argument("--data", required=True)
    sub.add_argument("--seeds", type=int, default=5)
    sub.add_argument("--episodes", type=int, default=20)
    sub.add_argument("--max-steps", dest="max_steps", type=int, default=100)
    sub.add_argument("--wavelets", default="")
    sub.add_argument("--seed", type=int)
    return parser


def run(argv):
    """
    Run the command in `argv` and return its exit code
    """

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        logger.error("usage: %s", exc)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help
        return EXIT_OK if not exc.code else EXIT_USAGE

    if args.command == "ablate" and args.seed is None:
        args.seed = 0
    try:
        args.func(args)
    except (WavediffError, ValueError, OSError) as exc:
        logger.error("%s: %s", args.command, exc)
        return EXIT_DATA
    return EXIT_OK
