"""Joint feature maps and the scoring function of the refined predictor.

Three weight blocks score a candidate sequence y against the images x and
the network's raw output: emission/transition features (pixel-symbol and
adjacent-pair counts), refinement features (pixels at positions where y
overrides the network), and a Hamming distance term tying y to the network
prediction. Soft variants replace the discrete override indicator with
1 - P so the whole score is differentiable in the network probabilities;
at one-hot P they coincide exactly with the hard versions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .glyphs import N_SYMBOLS

N_PIXELS = 81
FORMAT_HEADER = "#nester-cst v1"


@dataclass
class StructuredWeights:
    emission: np.ndarray  # (81, 12)
    transition: np.ndarray  # (12, 12)
    refinement: np.ndarray  # (81, 12)
    delta: float

    def __post_init__(self):
        self.emission = np.asarray(self.emission, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.refinement = np.asarray(self.refinement, dtype=np.float64)
        self.delta = float(self.delta)
        if self.emission.shape != (N_PIXELS, N_SYMBOLS):
            raise ValueError(f"emission must be (81, 12), got {self.emission.shape}")
        if self.transition.shape != (N_SYMBOLS, N_SYMBOLS):
            raise ValueError(f"transition must be (12, 12), got {self.transition.shape}")
        if self.refinement.shape != (N_PIXELS, N_SYMBOLS):
            raise ValueError(f"refinement must be (81, 12), got {self.refinement.shape}")

    @classmethod
    def zeros(cls) -> "StructuredWeights":
        return cls(
            emission=np.zeros((N_PIXELS, N_SYMBOLS)),
            transition=np.zeros((N_SYMBOLS, N_SYMBOLS)),
            refinement=np.zeros((N_PIXELS, N_SYMBOLS)),
            delta=0.0,
        )

    def copy(self) -> "StructuredWeights":
        return StructuredWeights(
            self.emission.copy(), self.transition.copy(), self.refinement.copy(), self.delta
        )

    def dot(self, feats: "JointFeatures") -> float:
        return (
            float(np.vdot(self.emission, feats.emission))
            + float(np.vdot(self.transition, feats.transition))
            + float(np.vdot(self.refinement, feats.refinement))
            + self.delta * feats.delta
        )

    def norm_sq(self) -> float:
        return (
            float(np.vdot(self.emission, self.emission))
            + float(np.vdot(self.transition, self.transition))
            + float(np.vdot(self.refinement, self.refinement))
            + self.delta * self.delta
        )

    def add_scaled(self, other: "JointFeatures | StructuredWeights", scale: float) -> None:
        self.emission += scale * other.emission
        self.transition += scale * other.transition
        self.refinement += scale * other.refinement
        self.delta += scale * other.delta


@dataclass
class JointFeatures:
    emission: np.ndarray
    transition: np.ndarray
    refinement: np.ndarray
    delta: float

    def minus(self, other: "JointFeatures") -> "JointFeatures":
        return JointFeatures(
            self.emission - other.emission,
            self.transition - other.transition,
            self.refinement - other.refinement,
            self.delta - other.delta,
        )


def _flat(x) -> np.ndarray:
    x = np.asarray(x)
    return x.reshape(x.shape[0], -1).astype(np.float64)


def _check_lengths(*seqs):
    lens = {len(s) for s in seqs}
    if len(lens) != 1:
        raise ValueError(f"sequence lengths differ: {sorted(lens)}")


def _onehot(y, m: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.intp)
    out = np.zeros((m, N_SYMBOLS))
    out[np.arange(m), y] = 1.0
    return out


def emission_features(x, y) -> np.ndarray:
    """Counts of set pixels per (pixel, emitted symbol) pair."""
    xf = _flat(x)
    _check_lengths(xf, y)
    return xf.T @ _onehot(y, len(xf))


def transition_features(y) -> np.ndarray:
    """Counts of adjacent symbol pairs; entries sum to m - 1."""
    y = np.asarray(y, dtype=np.intp)
    out = np.zeros((N_SYMBOLS, N_SYMBOLS))
    np.add.at(out, (y[:-1], y[1:]), 1.0)
    return out


def refinement_features(x, yhat, y) -> np.ndarray:
    """Counts of set pixels where the output symbol overrides the network."""
    xf = _flat(x)
    _check_lengths(xf, yhat, y)
    yhat = np.asarray(yhat, dtype=np.intp)
    y = np.asarray(y, dtype=np.intp)
    override = (yhat != y).astype(np.float64)
    return xf.T @ (_onehot(y, len(xf)) * override[:, None])


def soft_refinement_features(x, probs, y) -> np.ndarray:
    """Refinement counts with the override indicator relaxed to 1 - P."""
    xf = _flat(x)
    probs = _check_probs(probs, len(xf))
    _check_lengths(xf, y)
    y = np.asarray(y, dtype=np.intp)
    weight = 1.0 - probs[np.arange(len(xf)), y]
    return xf.T @ (_onehot(y, len(xf)) * weight[:, None])


def hamming(y, yhat) -> int:
    _check_lengths(y, yhat)
    return int(np.sum(np.asarray(y) != np.asarray(yhat)))


def soft_hamming(y, probs) -> float:
    probs = _check_probs(probs, len(y))
    y = np.asarray(y, dtype=np.intp)
    return float(np.sum(1.0 - probs[np.arange(len(y)), y]))


def _check_probs(probs, m: int) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (m, N_SYMBOLS):
        raise ValueError(f"expected ({m}, {N_SYMBOLS}) probabilities, got {probs.shape}")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1 within 1e-6")
    return probs


def joint_features(x, net_out, y, mode: str = "hard") -> JointFeatures:
    """All four feature blocks at once, hard or soft, for hinge subgradients."""
    if mode == "hard":
        ref = refinement_features(x, net_out, y)
        d = float(hamming(y, net_out))
    elif mode == "soft":
        ref = soft_refinement_features(x, net_out, y)
        d = soft_hamming(y, net_out)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return JointFeatures(
        emission=emission_features(x, y),
        transition=transition_features(y),
        refinement=ref,
        delta=d,
    )


def nester_score(weights: StructuredWeights, x, net_out, y, mode: str = "hard") -> float:
    """Full score of candidate y: prediction + refinement + distance terms."""
    return weights.dot(joint_features(x, net_out, y, mode))


def prediction_score(weights: StructuredWeights, x, y) -> float:
    """Emission + transition terms only (no network input)."""
    return float(np.vdot(weights.emission, emission_features(x, y))) + float(
        np.vdot(weights.transition, transition_features(y))
    )


# ---------------------------------------------------------------------------
# Checkpoint io
# ---------------------------------------------------------------------------


def save_weights(weights: StructuredWeights, path) -> None:
    sections = [
        ("emission", weights.emission),
        ("transition", weights.transition),
        ("refinement", weights.refinement),
        ("delta", np.array([weights.delta])),
    ]
    with open(path, "w") as fh:
        fh.write(FORMAT_HEADER + "\n")
        for name, arr in sections:
            fh.write(name + " " + " ".join(str(d) for d in arr.shape) + "\n")
            fh.write(" ".join(f"{v:.17g}" for v in arr.reshape(-1)) + "\n")


def load_weights(path) -> StructuredWeights:
    arrays = read_sections(path, FORMAT_HEADER)
    try:
        return StructuredWeights(
            emission=arrays["emission"],
            transition=arrays["transition"],
            refinement=arrays["refinement"],
            delta=float(arrays["delta"][0]),
        )
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad structured-weights checkpoint: {exc}") from exc


def read_sections(path, expected_header: str) -> dict[str, np.ndarray]:
    """Parse a versioned checkpoint: each section is a `name d1 d2 ...` line
    followed by whitespace-separated decimal values (possibly wrapped)."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != expected_header:
            raise DataFormatError(
                f"{path}: expected header {expected_header!r}, got {header!r}"
            )
        lines = fh.read().splitlines()
    arrays: dict[str, np.ndarray] = {}
    idx = 0
    while idx < len(lines):
        parts = lines[idx].split()
        idx += 1
        if not parts:
            continue
        name = parts[0]
        try:
            shape = [int(d) for d in parts[1:]]
        except ValueError as exc:
            raise DataFormatError(f"{path}: bad shape for section {name!r}: {exc}") from exc
        n = int(np.prod(shape)) if shape else 1
        values: list[float] = []
        while len(values) < n and idx < len(lines):
            try:
                values.extend(float(t) for t in lines[idx].split())
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}: bad value in section {name!r}: {exc}"
                ) from exc
            idx += 1
        if len(values) != n:
            raise DataFormatError(
                f"{path}: section {name!r} expects {n} values, found {len(values)}"
            )
        arrays[name] = np.array(values).reshape(shape)
    return arrays
