#!/usr/bin/env python3
"""Full learning-curve experiment: 20 chunks, three models, all ablations.

Takes a few hours on one core; everything is resumable per (chunk, model),
so rerunning after an interruption continues where it left off.
"""

import argparse
import os
import sys

from nester.cli import main as nester


def run(argv):
    code = nester(argv)
    if code != 0:
        sys.exit(code)


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs/full")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--train", type=int, default=8000)
    parser.add_argument("--test", type=int, default=2000)
    parser.add_argument("--chunks", type=int, default=20)
    parser.add_argument("--flip", type=float, default=0.08)
    parser.add_argument("--chunk-indices", default=None,
                        help="comma-separated subset, e.g. 1,5,10,20")
    return parser.parse_args()


def main():
    args = parse_args()
    os.makedirs(args.out_dir, exist_ok=True)
    data = os.path.join(args.out_dir, "data.tsv")
    if not os.path.exists(data):
        run(["--seed", str(args.seed), "gen-data",
             "--train", str(args.train), "--test", str(args.test),
             "--chunks", str(args.chunks), "--flip", str(args.flip),
             "--shift", "1", "--out", data])
    curve_args = [] if args.chunk_indices is None else ["--chunk-indices", args.chunk_indices]
    run(["--seed", str(args.seed), "--out-dir", args.out_dir,
         "curves", "--data", data, "--models", "cnn,cst,combined"] + curve_args)
    run(["--seed", str(args.seed), "--out-dir", args.out_dir,
         "ablate", "--data", data] + curve_args)
    print(f"done: {args.out_dir}/curves.csv and {args.out_dir}/ablations.csv")


if __name__ == "__main__":
    main()
