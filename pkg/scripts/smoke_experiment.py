#!/usr/bin/env python3
"""Reduced smoke variant of the learning-curve experiment: a 2000-sequence
training set split into 5 chunks, same models and ablations. About 20
minutes on one core."""

import argparse
import os
import sys

from nester.cli import main as nester


def run(argv):
    code = nester(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs/smoke")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--flip", type=float, default=0.08)
    args = parser.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    data = os.path.join(args.out_dir, "data.tsv")
    if not os.path.exists(data):
        run(["--seed", str(args.seed), "gen-data", "--train", "2000",
             "--test", "500", "--chunks", "5", "--flip", str(args.flip),
             "--shift", "1", "--out", data])
    run(["--seed", str(args.seed), "--out-dir", args.out_dir,
         "curves", "--data", data, "--models", "cnn,cst,combined"])
    run(["--seed", str(args.seed), "--out-dir", args.out_dir,
         "ablate", "--data", data])
    print(f"done: {args.out_dir}/curves.csv and {args.out_dir}/ablations.csv")


if __name__ == "__main__":
    main()
