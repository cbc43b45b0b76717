"""Error against the parameter expansion size, written as plot-ready CSV.

    python scripts/sweep_nxi.py --config configs/matern52_sweep.toml --nxi 10 25 50 100 200
"""
import argparse
from pathlib import Path

from ckli.config import load_config
from ckli.experiment import sweep_csv, sweep_nxi

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "matern52_sweep.toml")
    ap.add_argument("--nxi", type=int, nargs="+", default=[10, 25, 50, 100, 200])
    ap.add_argument("--replicas", type=int)
    ap.add_argument("--cache", type=Path, default=ROOT / ".cache" / "sweep")
    ap.add_argument("--out", type=Path, default=ROOT / "results" / "sweep_nxi.csv")
    args = ap.parse_args()
    cfg = load_config(args.config).with_overrides(replicas=args.replicas)
    rows = sweep_nxi(cfg, args.nxi, cache_dir=args.cache)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(sweep_csv(rows, [f"config={args.config}"]))
    print(args.out.read_text())


if __name__ == "__main__":
    main()
