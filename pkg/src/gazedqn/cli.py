"""Command-line entry point.

Subcommands: gen-data, train-rl, train-sdl, eval, compare.  A flat TOML
config file can preset any flag; explicit flags win.  Exit codes: 0 success,
1 runtime/validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import numpy as np

from . import baseline, data, evaluate, nn, plots
from . import train as dqn_train
from .errors import GazeDQNError


def _load_config_defaults(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return {}
    with open(known.config, "rb") as fh:
        raw = tomllib.load(fh)
    return {k.replace("-", "_"): v for k, v in raw.items()}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="TOML file presetting any flag")
    p.add_argument("--data-dir", default="data", help="dataset directory")
    p.add_argument("--out-dir", default="out", help="output directory")
    p.add_argument("--split-seed", type=int, default=0,
                   help="seed for the train/test shuffle")
    p.add_argument("--train-n", type=int, default=70)
    p.add_argument("--test-n", type=int, default=30)


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    for f in fields(data.SynthConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default),
                       default=f.default)


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--epsilon-start", type=float, default=0.5)
    p.add_argument("--epsilon-decay", type=float, default=1e-4)
    p.add_argument("--epsilon-min", type=float, default=1e-4)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--n-memory", type=int, default=12_000)
    p.add_argument("--n-batch", type=int, default=64)
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--agent-square", type=int, default=11)
    p.add_argument("--overlay-alpha", type=float, default=0.5)


def build_parser(config_defaults: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazedqn",
                                     description="DQN lesion localization on gaze plots")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--n", type=int, default=100, help="number of cases")
    p.add_argument("--seed", type=int, required=True)
    _add_synth_flags(p)

    p = sub.add_parser("train-rl", help="train the DQN")
    _add_common(p)
    p.add_argument("--seed", type=int, required=True)
    _add_hyper_flags(p)

    p = sub.add_parser("train-sdl", help="train the supervised keypoint baseline")
    _add_common(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--n-batch", type=int, default=64)

    p = sub.add_parser("eval", help="evaluate a DQN checkpoint on the test split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("compare", help="compare RL and SDL checkpoints on the test split")
    _add_common(p)
    p.add_argument("--rl-checkpoint", required=True)
    p.add_argument("--sdl-checkpoint", required=True)

    if config_defaults:
        for sp in sub.choices.values():
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in config_defaults.items() if k in known})
    return parser


def _load_split(args):
    cases = data.load_dataset(args.data_dir)
    split = data.split_dataset(cases, train_n=args.train_n, test_n=args.test_n,
                               seed=args.split_seed)
    return split


def _cmd_gen_data(args, parser) -> int:
    if args.n <= 0:
        parser.error("--n must be positive")
    cfg = data.SynthConfig(**{f.name: getattr(args, f.name)
                              for f in fields(data.SynthConfig)})
    cases = data.generate_dataset(args.n, cfg, args.seed, args.data_dir)
    print(f"wrote {len(cases)} cases to {args.data_dir} "
          f"({cfg.height}x{cfg.width}, N_gaze={cfg.n_gaze}, seed={args.seed})")
    return 0


def _cmd_train_rl(args, parser) -> int:
    split = _load_split(args)
    h = dqn_train.Hyperparameters(
        gamma=args.gamma, epsilon_start=args.epsilon_start,
        epsilon_decay_per_episode=args.epsilon_decay, epsilon_min=args.epsilon_min,
        learning_rate=args.lr, n_memory=args.n_memory, n_batch=args.n_batch,
        episodes=args.episodes, agent_square=args.agent_square,
        overlay_alpha=args.overlay_alpha, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    start = time.time()

    def progress(episode, log):
        print(f"episode {episode}/{h.episodes}: score={log.scores[-1]:+.3f} "
              f"train_acc={log.train_accuracies[-1]:.2f} "
              f"test_acc={log.test_accuracies[-1]:.2f} "
              f"[{time.time() - start:.0f}s]", flush=True)

    params, config, log = dqn_train.train(split.train, h, split.test,
                                          progress=progress)
    log_path = out / "training_log.csv"
    log.write_csv(log_path)
    nn.save_checkpoint(out / "dqn_checkpoint.npz", params, config, h.seed)
    plots.plot_training_log(log_path, out / "learning_curves.svg")
    print(f"done in {time.time() - start:.0f}s; log, checkpoint and SVG in {out}")
    return 0


def _cmd_train_sdl(args, parser) -> int:
    split = _load_split(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params, config, log = baseline.train_supervised(
        split.train, split.test, epochs=args.epochs, learning_rate=args.lr,
        n_batch=args.n_batch, seed=args.seed)
    log_path = out / "sdl_loss.csv"
    log.write_csv(log_path)
    nn.save_checkpoint(out / "sdl_checkpoint.npz", params, config, args.seed)
    div = baseline.divergence_epoch(log)
    plots.plot_sdl_loss(log_path, out / "sdl_loss.svg", divergence=div)
    with open(out / "sdl_divergence.txt", "w") as fh:
        fh.write(f"divergence_epoch={div}\n")
    print(f"SDL trained {args.epochs} epochs; train/test loss divergence at "
          f"epoch {div}; outputs in {out}")
    return 0


def _check_rl_checkpoint(config, case, parser):
    h, w = case.image.shape
    if (config.input_height, config.input_width) != (h, w):
        raise GazeDQNError(f"checkpoint expects {config.input_height}x"
                           f"{config.input_width} input, dataset is {h}x{w}")


def _cmd_eval(args, parser) -> int:
    split = _load_split(args)
    params, config, _seed = nn.load_checkpoint(args.checkpoint)
    _check_rl_checkpoint(config, split.test[0], parser)
    report = evaluate.test_accuracy(params, config, split.test)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "eval_report.csv")
    print(f"test accuracy {report.accuracy:.3f} "
          f"({report.true_positives}/{len(report.results)} lesions), "
          f"mean score {report.mean_score:+.3f}")
    return 0


def _cmd_compare(args, parser) -> int:
    split = _load_split(args)
    rl_params, rl_config, _ = nn.load_checkpoint(args.rl_checkpoint)
    sdl_params, sdl_config, _ = nn.load_checkpoint(args.sdl_checkpoint)
    if rl_config.output_units != 3 or sdl_config.output_units != 2:
        raise GazeDQNError("expected a 3-output RL checkpoint and a 2-output SDL checkpoint")
    _check_rl_checkpoint(rl_config, split.test[0], parser)
    _check_rl_checkpoint(sdl_config, split.test[0], parser)

    rl_report = evaluate.test_accuracy(rl_params, rl_config, split.test)
    n = len(split.test)
    sdl_tp = sum(baseline.predict_keypoint(sdl_params, sdl_config, c)[1]
                 for c in split.test)
    result = evaluate.compare_methods(rl_report.true_positives, sdl_tp, n)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "comparison.csv"
    result.write_csv(csv_path)
    plots.plot_comparison(csv_path, out / "comparison.svg")
    print(f"RL accuracy {result.rl_accuracy_mean:.3f} vs SDL "
          f"{result.sdl_accuracy_mean:.3f}; {result.test_name}: "
          f"p = {result.p_value:.3g}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-rl": _cmd_train_rl,
    "train-sdl": _cmd_train_sdl,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        defaults = _load_config_defaults(argv)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: cannot read config file: {exc}", file=sys.stderr)
        return 1
    parser = build_parser(defaults)
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, parser)
    except (GazeDQNError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
