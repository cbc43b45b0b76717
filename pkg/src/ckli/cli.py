"""Command-line entry point: ``ckli run`` and ``ckli sweep``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, dump_config, load_config
from .experiment import provenance, run_replicas, sweep_csv, sweep_nxi, write_outputs


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, type=Path, help="TOML experiment file")
    p.add_argument("--replicas", type=int, help="override [run] replicas")
    p.add_argument("--threads", type=int, default=1, help="replicas executed concurrently")
    p.add_argument("--cache", type=Path, help="directory for cached ensemble statistics")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--out", type=Path, default=Path("results"), help="output root (default: results)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckli", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="replicated experiment with aggregate report")
    _common(run)
    sweep = sub.add_parser("sweep", help="error as a function of the parameter expansion size")
    _common(sweep)
    sweep.add_argument("--nxi", type=int, nargs="+", required=True, help="expansion sizes to evaluate")
    show = sub.add_parser("show-config", help="print the fully resolved configuration")
    show.add_argument("--config", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "show-config":
        sys.stdout.write(dump_config(cfg))
        return 0
    cfg = cfg.with_overrides(replicas=args.replicas, seed=args.seed)
    if cfg.replicas < 1 or args.threads < 1:
        print("error: --replicas and --threads must be positive", file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            results = run_replicas(cfg, args.threads, args.cache)
            run_dir = write_outputs(cfg, results, args.out)
            print(run_dir)
        else:
            rows = sweep_nxi(cfg, args.nxi, args.threads, args.cache)
            run_dir = args.out / cfg.run_id
            run_dir.mkdir(parents=True, exist_ok=True)
            prov = provenance(cfg)
            header = [f"config_hash={prov['config_hash']}", f"seed={prov['seed']}", f"replicas={cfg.replicas}"]
            path = run_dir / "sweep_nxi.csv"
            path.write_text(sweep_csv(rows, header))
            print(path)
    except Exception as exc:  # surface replica context, keep a nonzero status
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
