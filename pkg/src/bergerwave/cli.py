"""Command line: ``bergerwave run <config>`` and ``bergerwave sweep <config>``."""
import argparse
import json
import os
import sys

from .config import load_config
from .exceptions import AssumptionViolation, BergerWaveError, ConfigurationError
from .experiments import execute


def _parser():
    ap = argparse.ArgumentParser(prog="bergerwave", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run the experiment named in the config"), ("sweep", "run a (gamma, kappa) sweep")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="TOML run configuration")
        p.add_argument("--out", default=None, help="output directory (default: runs/<config stem>)")
        p.add_argument("--threads", type=int, default=None, help="parallel jobs (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigurationError("--seed must be non-negative")
            cfg.seed = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigurationError("--threads must be >= 1")
            cfg.threads = args.threads
        if args.command == "sweep" and cfg.experiment != "sweep":
            raise ConfigurationError(f"'sweep' needs experiment = \"sweep\", config has {cfg.experiment!r}")
        if args.command == "run" and cfg.experiment == "sweep":
            print("note: running sweep config via 'run'", file=sys.stderr)
        out = args.out or os.path.join("runs", os.path.splitext(os.path.basename(args.config))[0])
        summary = execute(cfg, out)
    except AssumptionViolation as exc:
        print(f"bergerwave: aborted before compute: {exc}", file=sys.stderr)
        return 3
    except ConfigurationError as exc:
        print(f"bergerwave: configuration error: {exc}", file=sys.stderr)
        return 2
    except BergerWaveError as exc:
        print(f"bergerwave: run failed: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"out": out, **{k: v for k, v in summary.items() if not isinstance(v, (list, dict))}}, default=str))
    return 0
