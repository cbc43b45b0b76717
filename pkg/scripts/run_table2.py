"""Run every error-table row and print a compact summary.

    python scripts/run_table2.py [--cache .cache/acceptance] [--out results]
"""
import argparse
import time
from pathlib import Path

from ckli.config import load_config
from ckli.experiment import aggregate, run_replicas, write_outputs

ROOT = Path(__file__).resolve().parent.parent
ROWS = ["gaussian", "matern52", "matern32", "binary"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", nargs="+", default=ROWS, choices=ROWS)
    ap.add_argument("--cache", type=Path, default=ROOT / ".cache" / "acceptance")
    ap.add_argument("--out", type=Path, default=ROOT / "results")
    ap.add_argument("--replicas", type=int)
    args = ap.parse_args()
    for name in args.rows:
        cfg = load_config(ROOT / "configs" / f"{name}.toml").with_overrides(replicas=args.replicas)
        t0 = time.time()
        results = run_replicas(cfg, cache_dir=args.cache)
        run_dir = write_outputs(cfg, results, args.out)
        print(f"[{name}] {time.time() - t0:.0f} s -> {run_dir}")
        for row in aggregate(results):
            if row["metric"] not in ("y_rel_l2", "y_rel_l1"):
                continue
            sub = row["Subsampled_median"]
            sub = "" if sub is None else f"  sub {sub:.4f}"
            wins = "" if row["beats_baseline"] is None else f"  wins {row['beats_baseline']}/{row['n_replicas']}"
            print(f"  {row['method']:14s} {row['metric']:9s} median {row['Full_median']:.4f}{sub}{wins}")


if __name__ == "__main__":
    main()
