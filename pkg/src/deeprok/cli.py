"""Command-line entry point: ``deeprok {train,evaluate,sweep,selftest}``.

Every subcommand except ``selftest`` reads an optional config file
(``--config``), applies ``--set key=value`` overrides and the dedicated
flags, and prints the fully resolved configuration before doing any work.

Exit codes: 0 on success, 1 on runtime failure (missing checkpoint, I/O
error, failed selftest), 2 on bad usage or an invalid configuration.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import selftest
from .agents import run_training, write_training_log
from .config import ConfigError, format_config, load_config
from .ekf import load_ekf, save_ekf
from .evaluation import REPORT_HEADER, run_test_episodes, sweep, write_report, write_report_json
from .nn_core import load_weights, save_weights

logger = logging.getLogger("deeprok")


class UsageError(Exception):
    pass


def ekf_sidecar(checkpoint):
    return f"{checkpoint}.ekf"


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def resolve_config(args):
    overrides = _parse_set(args.set)
    # dedicated flags win over --set and the file
    for flag, key in (("agent", "agent"), ("seed", "seed"), ("episodes", None),
                      ("checkpoint", "checkpoint"), ("train_log", "train_log"),
                      ("report", "report"), ("out", "eval_csv"), ("epsilon", "eval_epsilon")):
        val = getattr(args, flag, None)
        if val is None:
            continue
        if flag == "episodes":
            key = "episodes" if args.command == "train" else "eval_episodes"
        overrides[key] = str(val)
    return load_config(args.config, overrides)


def _print_config(cfg, out):
    out.write("# resolved configuration\n")
    out.write(format_config(cfg))
    out.write("\n")
    out.flush()


def cmd_train(cfg, args, out):
    result = run_training(cfg.agent, cfg.train_config(), record_wall_time=args.wall_time)
    path = cfg.paths.checkpoint
    save_weights(path, result.weights, cfg.train.topology)
    written = [path]
    if result.ekf_state is not None:
        save_ekf(ekf_sidecar(path), result.ekf_state)
        written.append(ekf_sidecar(path))
    write_training_log(result.log, cfg.paths.train_log)
    written.append(cfg.paths.train_log)
    last = result.log[-100:]
    mean_last = float(np.mean([r.cumulative_reward for r in last])) if last else 0.0
    out.write(f"trained {cfg.agent}: {len(result.log)} episodes, {result.learning_steps} "
              f"learning steps, mean reward over last {len(last)} episodes {mean_last:.1f}\n")
    out.write("wrote " + ", ".join(written) + "\n")
    return 0


def _load_checkpoint(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint {path} not found (run 'deeprok train' first)")
    weights, topology = load_weights(path)
    sidecar = ekf_sidecar(path)
    if os.path.exists(sidecar):
        ekf = load_ekf(sidecar)
        if not np.array_equal(ekf.mean, weights):
            raise ValueError(f"{sidecar} does not match {path}")
    return weights, topology


def _append_eval_row(path, res):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    try:
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(REPORT_HEADER)
            p = res.params
            w.writerow([f"{p.pole_length:.6g}", f"{p.cart_mass:.6g}", f"{res.mean_reward:.6g}",
                        f"{res.std_reward:.6g}", f"{res.success_rate:.6g}", res.episodes])
    except OSError as exc:
        raise OSError(f"cannot append evaluation to {path}: {exc}") from exc


def cmd_evaluate(cfg, args, out):
    weights, topology = _load_checkpoint(cfg.paths.checkpoint)
    nominal = cfg.train.nominal
    params = replace(nominal,
                     pole_length=args.pole_length if args.pole_length is not None
                     else nominal.pole_length,
                     cart_mass=args.cart_mass if args.cart_mass is not None
                     else nominal.cart_mass)
    res = run_test_episodes(weights, params, cfg.eval.episodes, cfg.eval.epsilon,
                            np.random.default_rng(cfg.seed), topology)
    out.write(f"pole_length={params.pole_length:g} cart_mass={params.cart_mass:g} "
              f"episodes={res.episodes} mean_reward={res.mean_reward:.6g} "
              f"std_reward={res.std_reward:.6g} success_rate={res.success_rate:.6g}\n")
    _append_eval_row(cfg.paths.eval_csv, res)
    out.write(f"appended to {cfg.paths.eval_csv}\n")
    return 0


def cmd_sweep(cfg, args, out):
    weights, topology = _load_checkpoint(cfg.paths.checkpoint)
    report = sweep(weights, cfg.eval.pole_lengths, cfg.eval.cart_masses, cfg.eval.episodes,
                   cfg.eval.epsilon, cfg.seed, base=cfg.train.nominal, agent=cfg.agent,
                   topology=topology, n_threads=args.threads)
    write_report(report, cfg.paths.report)
    if args.json:
        write_report_json(report, args.json)
    out.write(f"{len(report.grid)} grid points, mean success {report.mean_success():.4f}\n")
    out.write(f"wrote {cfg.paths.report}\n")
    return 0


def cmd_selftest(args, out):
    failed = 0
    for name, ok, detail in selftest.run_all():
        out.write(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}\n")
        failed += not ok
    out.write("selftest " + ("failed" if failed else "passed") + "\n")
    return 1 if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="deeprok",
                                     description="Robust deep Q-learning on Cart-Pole.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint", help="weights file path")

    p = sub.add_parser("train", help="train an agent and write a checkpoint and training log")
    common(p)
    p.add_argument("--agent", choices=("double_dqn", "rtd_dqn", "deep_rok"))
    p.add_argument("--episodes", type=int)
    p.add_argument("--train-log", dest="train_log")
    p.add_argument("--wall-time", action="store_true",
                   help="record wall-clock times in the log (makes it non-reproducible)")

    p = sub.add_parser("evaluate", help="test episodes at one fixed physics setting")
    common(p)
    p.add_argument("--pole-length", type=float)
    p.add_argument("--cart-mass", type=float)
    p.add_argument("--episodes", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out", help="CSV file the result row is appended to")

    p = sub.add_parser("sweep", help="evaluate over the pole-length x cart-mass grid")
    common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--report", help="CSV output path")
    p.add_argument("--json", help="also write the report as JSON")
    p.add_argument("--threads", type=int, help="worker threads (default: RKRL_THREADS or all)")

    sub.add_parser("selftest", help="run the embedded invariant checks")
    return parser


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        return cmd_selftest(args, out)
    try:
        cfg = resolve_config(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"deeprok: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"deeprok: error: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("deeprok: error: --threads must be >= 1", file=sys.stderr)
        return 2
    _print_config(cfg, out)
    handler = {"train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep}[args.command]
    try:
        return handler(cfg, args, out)
    except (OSError, ValueError) as exc:
        print(f"deeprok: error: {exc}", file=sys.stderr)
        return 1


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
