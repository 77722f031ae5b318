"""Evaluation protocol: per-model test metrics with the syntactic/semantic
error decomposition, learning curves over nested training chunks, and the
feature ablation sweep. All results land in one stable CSV schema."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import nn, training
from .config import TrainConfig
from .errors import ConfigError
from .features import StructuredWeights, hamming
from .solver import SEMANTIC, SYNTACTIC, VALID, compile_chain, solve_map, validate

CSV_HEADER = "chunk_size,model,total_err,syntactic_err,semantic_err,other_err,mean_hamming"


@dataclass
class EvalReport:
    chunk_size: int
    model: str
    total_err: float
    syntactic_err: float
    semantic_err: float
    other_err: float
    mean_hamming: float

    def csv_row(self) -> str:
        return (
            f"{self.chunk_size},{self.model},{self.total_err:.6f},"
            f"{self.syntactic_err:.6f},{self.semantic_err:.6f},"
            f"{self.other_err:.6f},{self.mean_hamming:.6f}"
        )


@dataclass
class Model:
    """A fitted predictor: the network, the structured weights, and how they
    combine at inference time."""

    name: str
    kind: str  # cnn | cst | combined
    cnn: nn.CnnParams | None = None
    weights: StructuredWeights | None = None
    mode: str = "soft"

    def predict(self, images) -> tuple[int, ...]:
        if self.kind == "cnn":
            yhat, _ = nn.predict_sequence(self.cnn, images)
            return tuple(int(k) for k in yhat)
        if self.kind == "cst":
            chain = compile_chain(self.weights, images, None)
            y, _ = solve_map(chain)
            return y
        if self.kind == "combined":
            yhat, probs = nn.predict_sequence(self.cnn, images)
            net_out = probs if self.mode == "soft" else yhat
            chain = compile_chain(self.weights, images, net_out, mode=self.mode)
            y, _ = solve_map(chain)
            return y
        raise ConfigError(f"unknown model kind {self.kind!r}")


def evaluate(model: Model, test_samples, chunk_size: int = 0) -> EvalReport:
    """Sequence error rate with its decomposition by constraint status, plus
    mean per-sequence Hamming loss. Erroneous predictions are classified by
    the validity of the prediction itself: template violations are
    syntactic, well-formed but unbalanced equations are semantic, and
    valid-but-wrong sequences count as other."""
    n = len(test_samples)
    counts = {SYNTACTIC: 0, SEMANTIC: 0, "other": 0}
    total_hamming = 0
    for s in test_samples:
        pred = model.predict(s.images)
        total_hamming += hamming(s.labels, pred)
        if tuple(pred) == tuple(s.labels):
            continue
        status = validate(pred).status
        counts["other" if status == VALID else status] += 1
    wrong = sum(counts.values())
    return EvalReport(
        chunk_size=chunk_size,
        model=model.name,
        total_err=wrong / n,
        syntactic_err=counts[SYNTACTIC] / n,
        semantic_err=counts[SEMANTIC] / n,
        other_err=counts["other"] / n,
        mean_hamming=total_hamming / n,
    )


# ---------------------------------------------------------------------------
# Model fitting on one chunk
# ---------------------------------------------------------------------------


def fit_model(
    name: str,
    bundle,
    chunk_index: int,
    config: TrainConfig,
    pretrained: nn.CnnParams | None = None,
) -> Model:
    """Train one named model/variant on a nested chunk. `cnn` uses the
    pretrained network alone; `cst` is the structured predictor without
    network input; everything else refines the network output with the named
    feature subset."""
    if name == "cnn":
        cnn = pretrained if pretrained is not None else _pretrain(bundle, chunk_index, config)
        return Model(name=name, kind="cnn", cnn=cnn)
    if name == "cst":
        # no network input anywhere: train on (images, gold) alone
        samples = bundle.chunk(chunk_index)
        examples = [(s.images, None, s.labels) for s in samples]
        rng = np.random.default_rng([config.seed, 102])
        weights, _ = training.train_cst(
            training.initial_weights(training.PREDICTION_ONLY),
            examples, config, training.PREDICTION_ONLY, rng,
        )
        return Model(name=name, kind="cst", weights=weights)
    try:
        features = training.VARIANTS["full" if name == "combined" else name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}") from None
    result = training.run_pipeline(bundle, chunk_index, config, features, pretrained=pretrained)
    return Model(name=name, kind="combined", cnn=result.cnn, weights=result.weights,
                 mode=config.mode)


def _pretrain(bundle, chunk_index: int, config: TrainConfig) -> nn.CnnParams:
    rng = np.random.default_rng([config.seed, 101])
    params = nn.init_cnn(rng)
    params, _ = nn.pretrain_cnn(
        params, bundle.chunk(chunk_index), config.epochs_pretrain,
        config.batch_size, rng, lr=config.eta_pretrain,
    )
    return params


# ---------------------------------------------------------------------------
# Curves and ablations
# ---------------------------------------------------------------------------


def _existing_rows(csv_path) -> dict[tuple[int, str], str]:
    rows: dict[tuple[int, str], str] = {}
    if os.path.exists(csv_path):
        with open(csv_path) as fh:
            for line in fh.read().splitlines()[1:]:
                if line:
                    chunk, model = line.split(",")[:2]
                    rows[(int(chunk), model)] = line
    return rows


def run_curves(
    bundle,
    config: TrainConfig,
    models: list[str],
    csv_path,
    chunk_indices: list[int] | None = None,
    log=None,
) -> list[EvalReport]:
    """One evaluation row per (chunk, model), resumable: cells already in the
    CSV are not retrained."""
    if chunk_indices is None:
        chunk_indices = list(range(1, len(bundle.chunk_sizes) + 1))
    done = _existing_rows(csv_path)
    reports: list[EvalReport] = []
    rows: dict[tuple[int, str], str] = dict(done)
    for k in chunk_indices:
        chunk_size = bundle.chunk_sizes[k - 1]
        todo = [m for m in models if (chunk_size, m) not in done]
        if not todo:
            continue
        shared_cnn = _pretrain(bundle, k, config) if _needs_cnn(todo) else None
        for name in todo:
            if log:
                log(f"chunk {chunk_size}: training {name}")
            model = fit_model(name, bundle, k, config, pretrained=shared_cnn)
            report = evaluate(model, bundle.test, chunk_size)
            reports.append(report)
            rows[(chunk_size, name)] = report.csv_row()
        _write_rows(csv_path, rows)
    return reports


def _needs_cnn(models: list[str]) -> bool:
    return any(m != "cst" for m in models)


def _write_rows(csv_path, rows: dict[tuple[int, str], str]) -> None:
    with open(csv_path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for key in sorted(rows):
            fh.write(rows[key] + "\n")


ABLATION_VARIANTS = [
    "distance",
    "refinement",
    "refinement+distance",
    "refinement+prediction",
    "full",
]


def run_ablations(
    bundle,
    config: TrainConfig,
    csv_path,
    chunk_indices: list[int] | None = None,
    log=None,
) -> list[EvalReport]:
    """Learning curve per feature subset on the same chunks. The distance
    variant performs no structured learning at all."""
    return run_curves(bundle, config, ABLATION_VARIANTS, csv_path, chunk_indices, log)
