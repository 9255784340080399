"""Command line entry point: ``superrad <experiment> [options]``.

Exit status 0 on success, 2 for configuration errors and 3 when more than
1% of the trajectories fail numerically.
"""

from __future__ import annotations

import argparse
import sys

from .harness import EXPERIMENTS, SCHEMA, ConfigError, NumericalFailure, load_config, parse_value, run_experiment

# command-line flag -> configuration key
FLAGS = {
    "engine": "engine", "n_atoms": "n_atoms", "theta": "theta", "trajectories": "trajectories",
    "seed": "master_seed", "theta_list": "theta_list", "n_list": "n_list", "kappa_list": "kappa_ratios",
    "samples": "n_samples", "dt": "dt", "out": "output_dir", "workers": "workers",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="superrad", description="Superradiant decay of disordered waveguide arrays.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--engine", help="dtwa-elim, dtwa-full, qsdmf or qj")
    p.add_argument("-N", "--n-atoms", dest="n_atoms")
    p.add_argument("--theta")
    p.add_argument("--trajectories")
    p.add_argument("--seed")
    p.add_argument("--theta-list", dest="theta_list", help="comma-separated Θ values")
    p.add_argument("--n-list", dest="n_list", help="comma-separated N values")
    p.add_argument("--kappa-list", dest="kappa_list", help="comma-separated κ/(γN) values")
    p.add_argument("--samples")
    p.add_argument("--dt")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--list-keys", action="store_true", help="print the configuration schema and exit")
    return p


def settings_from_args(args) -> dict:
    settings = load_config(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        settings[key.strip()] = parse_value(key.strip(), value)
    for attr, key in FLAGS.items():
        value = getattr(args, attr)
        if value is not None:
            settings[key] = parse_value(key, value)
    return settings


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if "--list-keys" in argv:
        for key, (_, default, doc) in SCHEMA.items():
            print(f"{key} = {default}    # {doc}")
        return 0
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        result = run_experiment(args.experiment, settings_from_args(args), force=args.force)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericalFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    print(result.summary_line())
    return 0


if __name__ == "__main__":
    sys.exit(main())
