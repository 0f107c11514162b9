"""Command line: ``qra2c train|evaluate|plot|sweep``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (TrainingAborted, build_config, evaluate_snapshot, load_config,
                      parse_config_text, resolve_run_dir, run_experiment, sweep)
from .nn import ConfigurationError
from .plotting import SchemaError, emit_plot

# CLI flag -> config key
OVERRIDES = {"algo": "algo", "env": "env", "atoms": "num_atoms", "seed": "seed",
             "shared": "shared_trunk", "updates": "total_updates", "workers": "num_workers",
             "lr": "learning_rate", "n_steps": "n_steps", "out": "output_dir",
             "eval_interval": "eval_interval", "eval_episodes": "eval_episodes"}


def _add_overrides(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--algo", choices=("a2c", "qr_a2c", "qr_dqn"))
    p.add_argument("--env", choices=("cartpole", "mountaincar", "chainworld"))
    p.add_argument("--atoms", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--shared", choices=("true", "false"))
    p.add_argument("--updates", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-steps", type=int)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--out", help="run directory (relative paths resolve under $QRA2C_OUTPUT_ROOT)")
    p.add_argument("--parallel", action="store_true", help="run workers on threads")
    p.add_argument("--wallclock", action="store_true", help="record elapsed seconds in the CSV")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field")


def _config_from_args(args):
    values = parse_config_text(Path(args.config).read_text()) if args.config else {}
    for flag, key in OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = str(v)
    if args.parallel:
        values["parallel"] = "true"
    if args.wallclock:
        values["record_wallclock"] = "true"
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return build_config(values)


def _csv_list(text, conv):
    return tuple(conv(x) for x in text.split(",") if x.strip())


def _bool(x):
    return x.strip().lower() in ("1", "true", "yes", "shared")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qra2c", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    _add_overrides(p)

    p = sub.add_parser("evaluate", help="greedy evaluation of a saved parameter snapshot")
    _add_overrides(p)
    p.add_argument("--params", required=True, help="params.bin from a run directory")
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("plot", help="learning curves from metrics CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--labels", help="comma-separated legend labels")
    p.add_argument("--title", default="")

    p = sub.add_parser("sweep", help="grid over atom counts / trunk sharing / seeds")
    _add_overrides(p)
    p.add_argument("--atoms-grid", default="16,32,64,128")
    p.add_argument("--shared-grid", default="true,false")
    p.add_argument("--seeds", default="0")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        if args.command == "train":
            config = _config_from_args(args)
            res = run_experiment(config)
            print(f"run directory: {res['run_dir']}")
            print(f"first solve update: {res['first_solve_update']}")
            if res["final"]:
                f = res["final"]
                print(f"final eval: mean {f['mean_test_reward']:.2f} "
                      f"stddev {f['stddev_test_reward']:.2f}")
        elif args.command == "evaluate":
            config = _config_from_args(args)
            rep = evaluate_snapshot(config, args.params, args.episodes)
            print(f"mean {rep.mean_test_reward:.2f} stddev {rep.stddev_test_reward:.2f}")
        elif args.command == "plot":
            labels = args.labels.split(",") if args.labels else None
            emit_plot(args.csv, args.output, labels, args.title)
            print(args.output)
        elif args.command == "sweep":
            config = _config_from_args(args)
            results = sweep(config, _csv_list(args.atoms_grid, int),
                            _csv_list(args.shared_grid, _bool), _csv_list(args.seeds, int))
            csvs = [Path(r["run_dir"]) / "metrics.csv" for r in results]
            out = resolve_run_dir(config) / "sweep.svg"
            emit_plot(csvs, out, [f"{r['label']} seed={Path(r['run_dir']).name.rsplit('seed', 1)[1]}"
                                  for r in results])
            for r in results:
                print(f"{r['label']}: first solve {r['first_solve_update']}")
            print(out)
    except (ConfigurationError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
