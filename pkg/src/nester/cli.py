"""Experiment harness. Subcommands: gen-data, pretrain, train-cst, finetune,
evaluate, curves, ablate, solve. Exit codes: 0 ok, 2 config error, 3 data
error, 4 numeric error."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataset, experiments, features, glyphs, nn, training
from .config import TrainConfig, load_config
from .errors import ConfigError, DataFormatError, NesterError, NumericError
from .solver import ChainScore, solve_map

CHAIN_HEADER = "#nester-chain v1"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nester",
        description="Equation recognition with a glyph CNN refined by an "
        "exactly-constrained structured predictor.",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--config", default=None, help="key=value training config file")
    parser.add_argument("--out-dir", default=".", help="directory for artifacts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--train", type=int, default=8000)
    p.add_argument("--test", type=int, default=2000)
    p.add_argument("--chunks", type=int, default=20)
    p.add_argument("--flip", type=float, default=0.02)
    p.add_argument("--shift", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="pretrain the glyph CNN on one chunk")
    p.add_argument("--data", required=True)
    p.add_argument("--chunk", type=int, default=None, help="1-based chunk index (default: last)")
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("train-cst", help="train the structured weights on one chunk")
    p.add_argument("--data", required=True)
    p.add_argument("--chunk", type=int, default=None)
    p.add_argument("--cnn", default=None, help="CNN checkpoint (omit for no network input)")
    p.add_argument("--variant", default="full", choices=sorted(training.VARIANTS))

    p = sub.add_parser("finetune", help="fine-tune CNN and structured weights end to end")
    p.add_argument("--data", required=True)
    p.add_argument("--chunk", type=int, default=None)
    p.add_argument("--cnn", required=True)
    p.add_argument("--cst", required=True)
    p.add_argument("--variant", default="full", choices=sorted(training.VARIANTS))

    p = sub.add_parser("evaluate", help="evaluate a model on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True,
                   choices=["cnn", "cst", "combined"] + experiments.ABLATION_VARIANTS)
    p.add_argument("--cnn", default=None)
    p.add_argument("--cst", default=None)
    p.add_argument("--chunk-size", type=int, default=0, help="label for the CSV row")
    p.add_argument("--out", default=None, help="append the report row to this CSV")

    p = sub.add_parser("curves", help="learning curves over nested chunks")
    p.add_argument("--data", required=True)
    p.add_argument("--models", default="cnn,cst,combined")
    p.add_argument("--chunk-indices", default=None,
                   help="comma-separated 1-based indices (default: all)")

    p = sub.add_parser("ablate", help="feature-subset learning curves")
    p.add_argument("--data", required=True)
    p.add_argument("--chunk-indices", default=None)

    p = sub.add_parser("solve", help="argmax a raw chain score file (debug)")
    p.add_argument("--chain", required=True)
    return parser


def _load_train_config(args) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    return config


def _resolve_chunk(bundle, chunk) -> int:
    return len(bundle.chunk_sizes) if chunk is None else chunk


def _chunk_indices(bundle, raw):
    if raw is None:
        return None
    return [int(v) for v in raw.split(",")]


def _out(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def cmd_gen_data(args) -> None:
    seed = args.seed if args.seed is not None else 0
    noise = dataset.NoiseConfig(flip_prob=args.flip, max_shift=args.shift)
    bundle = dataset.generate_dataset(args.train, args.test, args.chunks, noise, seed)
    dataset.save_dataset(bundle, args.out)
    print(f"wrote {args.out}: {len(bundle.train)} train + {len(bundle.test)} test")


def cmd_pretrain(args) -> None:
    config = _load_train_config(args)
    if args.epochs is not None:
        config = config.with_overrides(epochs_pretrain=args.epochs)
    bundle = dataset.load_dataset(args.data)
    k = _resolve_chunk(bundle, args.chunk)
    rng = np.random.default_rng([config.seed, 101])
    params = nn.init_cnn(rng)
    params, losses = nn.pretrain_cnn(
        params, bundle.chunk(k), config.epochs_pretrain, config.batch_size, rng,
        lr=config.eta_pretrain,
    )
    ckpt = _out(args, f"cnn_chunk{k}.ckpt")
    nn.save_cnn(params, ckpt)
    with open(_out(args, f"pretrain_chunk{k}.csv"), "w") as fh:
        fh.write("epoch,avg_xent\n")
        for epoch, loss in enumerate(losses, start=1):
            fh.write(f"{epoch},{loss:.17g}\n")
    print(f"wrote {ckpt}")


def cmd_train_cst(args) -> None:
    config = _load_train_config(args)
    bundle = dataset.load_dataset(args.data)
    k = _resolve_chunk(bundle, args.chunk)
    feats = training.VARIANTS[args.variant]
    samples = bundle.chunk(k)
    if args.cnn is not None and feats.uses_network:
        params = nn.load_cnn(args.cnn)
        outs = training.network_outputs(params, samples, config.mode)
    else:
        outs = [None] * len(samples)
        feats = training.PREDICTION_ONLY if args.variant == "full" else feats
    examples = [(s.images, o, s.labels) for s, o in zip(samples, outs)]
    rng = np.random.default_rng([config.seed, 102])
    weights, records = training.train_cst(
        training.initial_weights(feats), examples, config, feats, rng
    )
    ckpt = _out(args, f"cst_chunk{k}.ckpt")
    features.save_weights(weights, ckpt)
    training.save_stage_log({"cst": records}, _out(args, f"cst_chunk{k}_log.csv"))
    print(f"wrote {ckpt}")


def cmd_finetune(args) -> None:
    config = _load_train_config(args)
    bundle = dataset.load_dataset(args.data)
    k = _resolve_chunk(bundle, args.chunk)
    feats = training.VARIANTS[args.variant]
    params = nn.load_cnn(args.cnn)
    weights = features.load_weights(args.cst)
    examples = [(s.images, s.labels) for s in bundle.chunk(k)]
    rng = np.random.default_rng([config.seed, 103])
    params, weights, records = training.finetune_end_to_end(
        params, weights, examples, config, feats, rng
    )
    cnn_ckpt = _out(args, f"cnn_finetuned_chunk{k}.ckpt")
    cst_ckpt = _out(args, f"cst_finetuned_chunk{k}.ckpt")
    nn.save_cnn(params, cnn_ckpt)
    features.save_weights(weights, cst_ckpt)
    training.save_stage_log({"finetune": records}, _out(args, f"ft_chunk{k}_log.csv"))
    print(f"wrote {cnn_ckpt} and {cst_ckpt}")


def cmd_evaluate(args) -> None:
    config = _load_train_config(args)
    bundle = dataset.load_dataset(args.data)
    kind = {"cnn": "cnn", "cst": "cst"}.get(args.model, "combined")
    if kind != "cst" and args.cnn is None:
        raise ConfigError(f"model {args.model!r} needs --cnn")
    if kind != "cnn" and args.cst is None:
        raise ConfigError(f"model {args.model!r} needs --cst")
    model = experiments.Model(
        name=args.model,
        kind=kind,
        cnn=nn.load_cnn(args.cnn) if args.cnn else None,
        weights=features.load_weights(args.cst) if args.cst else None,
        mode=config.mode,
    )
    report = experiments.evaluate(model, bundle.test, args.chunk_size)
    print(experiments.CSV_HEADER)
    print(report.csv_row())
    if args.out:
        fresh = not os.path.exists(args.out)
        with open(args.out, "a") as fh:
            if fresh:
                fh.write(experiments.CSV_HEADER + "\n")
            fh.write(report.csv_row() + "\n")


def cmd_curves(args) -> None:
    config = _load_train_config(args)
    bundle = dataset.load_dataset(args.data)
    csv_path = _out(args, "curves.csv")
    experiments.run_curves(
        bundle, config, args.models.split(","), csv_path,
        _chunk_indices(bundle, args.chunk_indices),
        log=lambda msg: print(msg, flush=True),
    )
    print(f"wrote {csv_path}")


def cmd_ablate(args) -> None:
    config = _load_train_config(args)
    bundle = dataset.load_dataset(args.data)
    csv_path = _out(args, "ablations.csv")
    experiments.run_ablations(
        bundle, config, csv_path, _chunk_indices(bundle, args.chunk_indices),
        log=lambda msg: print(msg, flush=True),
    )
    print(f"wrote {csv_path}")


def cmd_solve(args) -> None:
    chain = load_chain(args.chain)
    y, score = solve_map(chain)
    print(glyphs.labels_to_string(y))
    print(f"score {score:.12g}")


def load_chain(path) -> ChainScore:
    """Chain score file: header, then `unary` (m rows of 12 comma-separated
    values), `pairwise` (12 rows), and an optional `constant` line."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh.read().splitlines()]
    if not lines or lines[0] != CHAIN_HEADER:
        raise DataFormatError(f"{path}: expected header {CHAIN_HEADER!r}")
    blocks: dict[str, list[list[float]]] = {}
    current: str | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if line in ("unary", "pairwise", "constant"):
            current = line
            blocks[current] = []
            continue
        if current is None:
            raise DataFormatError(f"{path}: line {lineno}: value outside any block")
        try:
            blocks[current].append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
    try:
        unary = np.array(blocks["unary"])
        pairwise = np.array(blocks["pairwise"])
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing block {exc}") from exc
    constant = blocks.get("constant", [[0.0]])[0][0]
    try:
        return ChainScore(unary=unary, pairwise=pairwise, constant=constant)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train-cst": cmd_train_cst,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "curves": cmd_curves,
    "ablate": cmd_ablate,
    "solve": cmd_solve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NesterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
