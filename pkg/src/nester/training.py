"""Max-margin learning of the structured weights and the three-stage
pipeline: glyph pretraining, structured SVM over the refinement layer, and
end-to-end fine-tuning that backpropagates the structured hinge into the
network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import TrainConfig
from .features import (
    JointFeatures,
    StructuredWeights,
    emission_features,
    hamming,
    joint_features,
    nester_score,
    prediction_score,
    transition_features,
)
from .glyphs import N_SYMBOLS
from .solver import solve_loss_augmented


@dataclass(frozen=True)
class FeatureSet:
    """Which weight blocks a model variant uses and learns."""

    prediction: bool = True  # emission + transition
    refinement: bool = True
    distance: bool = True
    fixed_delta: float | None = None  # freeze w_delta at this value, no learning

    @property
    def uses_network(self) -> bool:
        return self.refinement or self.distance

    @property
    def trainable(self) -> bool:
        return self.prediction or self.refinement or (
            self.distance and self.fixed_delta is None
        )


FULL = FeatureSet()
PREDICTION_ONLY = FeatureSet(refinement=False, distance=False)
REFINEMENT_ONLY = FeatureSet(prediction=False, distance=False)
REFINEMENT_DISTANCE = FeatureSet(prediction=False)
REFINEMENT_PREDICTION = FeatureSet(distance=False)
DISTANCE_ONLY = FeatureSet(prediction=False, refinement=False, fixed_delta=-1.0)

VARIANTS = {
    "full": FULL,
    "prediction": PREDICTION_ONLY,
    "refinement": REFINEMENT_ONLY,
    "refinement+distance": REFINEMENT_DISTANCE,
    "refinement+prediction": REFINEMENT_PREDICTION,
    "distance": DISTANCE_ONLY,
}


def initial_weights(features: FeatureSet = FULL) -> StructuredWeights:
    """Zero weights, except the distance term starts at -1: the model then
    begins as the trust-the-network decoder and learning adjusts from
    there, instead of spending its single epoch rediscovering that prior."""
    w = StructuredWeights.zeros()
    if features.fixed_delta is not None:
        w.delta = features.fixed_delta
    elif features.distance:
        w.delta = -1.0
    return w


def _mask_gradient(grad: JointFeatures, features: FeatureSet) -> None:
    if not features.prediction:
        grad.emission[:] = 0.0
        grad.transition[:] = 0.0
    if not features.refinement:
        grad.refinement[:] = 0.0
    if not features.distance or features.fixed_delta is not None:
        grad.delta = 0.0


@dataclass
class HingeRecord:
    example: int
    hinge: float
    hamming_to_gold: int


@dataclass
class TrainState:
    """Carries the subgradient step counter across stages so the 1/sqrt(t)
    decay keeps shrinking during fine-tuning, plus the running average of
    the structured iterates."""

    step: int = 0
    averaged: StructuredWeights | None = None
    n_averaged: int = 0
    last_iterate: StructuredWeights | None = None

    def accumulate(self, weights: StructuredWeights) -> None:
        if self.averaged is None:
            self.averaged = StructuredWeights.zeros()
        self.n_averaged += 1
        self.averaged.add_scaled(weights, 1.0)

    def average(self) -> StructuredWeights:
        out = self.averaged.copy()
        scale = 1.0 / self.n_averaged
        out.emission *= scale
        out.transition *= scale
        out.refinement *= scale
        out.delta *= scale
        return out


def structured_hinge(
    weights: StructuredWeights,
    x,
    net_out,
    gold,
    mode: str = "hard",
    lambda_reg: float = 0.0,
    features: FeatureSet = FULL,
):
    """One example's structured hinge, its most violating rival, and a
    subgradient over all weight blocks.

    value = max(0, Hamming(gold, y*) + score(y*) - score(gold)) + reg, with
    y* the loss-augmented argmax. The feature-difference part of the
    subgradient is only active when the margin is violated.
    """
    eff_net = net_out if features.uses_network else None
    y_star, _ = solve_loss_augmented(weights, x, eff_net, gold, mode=mode)
    dist = hamming(gold, y_star)
    if eff_net is None:
        margin = dist + prediction_score(weights, x, y_star) - prediction_score(
            weights, x, gold
        )
        feats_star = _prediction_features(x, y_star, weights)
        feats_gold = _prediction_features(x, gold, weights)
    else:
        margin = dist + nester_score(weights, x, net_out, y_star, mode) - nester_score(
            weights, x, net_out, gold, mode
        )
        feats_star = joint_features(x, net_out, y_star, mode)
        feats_gold = joint_features(x, net_out, gold, mode)
    value = max(0.0, margin) + 0.5 * lambda_reg * weights.norm_sq()
    grad = feats_star.minus(feats_gold) if margin > 0 else JointFeatures(
        np.zeros_like(weights.emission),
        np.zeros_like(weights.transition),
        np.zeros_like(weights.refinement),
        0.0,
    )
    grad.emission += lambda_reg * weights.emission
    grad.transition += lambda_reg * weights.transition
    grad.refinement += lambda_reg * weights.refinement
    grad.delta += lambda_reg * weights.delta
    _mask_gradient(grad, features)
    return value, y_star, grad, margin


def _prediction_features(x, y, weights: StructuredWeights) -> JointFeatures:
    return JointFeatures(
        emission=emission_features(x, y),
        transition=transition_features(y),
        refinement=np.zeros_like(weights.refinement),
        delta=0.0,
    )


def train_cst(
    weights: StructuredWeights,
    examples,
    config: TrainConfig,
    features: FeatureSet = FULL,
    rng: np.random.Generator | None = None,
    state: TrainState | None = None,
):
    """Stochastic subgradient descent on the structured hinge.

    examples: list of (images, net_out, gold) with the network outputs
    precomputed; the network is frozen at this stage. Returns the trained
    weights and the per-step hinge records.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if state is None:
        state = TrainState()
    weights = weights.copy()
    records: list[HingeRecord] = []
    if not features.trainable:
        return weights, records
    for _ in range(config.epochs_cst):
        for idx in rng.permutation(len(examples)):
            x, net_out, gold = examples[idx]
            value, y_star, grad, _ = structured_hinge(
                weights, x, net_out, gold, config.mode, config.lambda_reg, features
            )
            state.step += 1
            eta = config.eta_cst / np.sqrt(state.step)
            weights.add_scaled(grad, -eta)
            state.accumulate(weights)
            records.append(HingeRecord(int(idx), value, hamming(gold, y_star)))
    state.last_iterate = weights.copy()
    if config.average_iterates and state.n_averaged > 0:
        return state.average(), records
    return weights, records


# ---------------------------------------------------------------------------
# End-to-end fine-tuning
# ---------------------------------------------------------------------------


def hinge_probs_gradient(
    weights: StructuredWeights, x, probs, gold, y_star
) -> np.ndarray:
    """d(soft hinge)/d(probs) with the rival y* held fixed.

    Only the refinement and distance terms touch the probabilities: position
    e's coefficient on P[e, y_e] is -(refinement response + w_delta), applied
    at y* and subtracted at gold.
    """
    x_flat = np.asarray(x).reshape(len(gold), -1).astype(np.float64)
    response = x_flat @ weights.refinement  # (m, 12) refinement scores per symbol
    dprobs = np.zeros((len(gold), N_SYMBOLS))
    rows = np.arange(len(gold))
    y_star = np.asarray(y_star, dtype=np.intp)
    gold = np.asarray(gold, dtype=np.intp)
    np.add.at(dprobs, (rows, y_star), -(response[rows, y_star] + weights.delta))
    np.add.at(dprobs, (rows, gold), response[rows, gold] + weights.delta)
    return dprobs


def finetune_end_to_end(
    params: nn.CnnParams,
    weights: StructuredWeights,
    examples,
    config: TrainConfig,
    features: FeatureSet = FULL,
    rng: np.random.Generator | None = None,
    state: TrainState | None = None,
):
    """Joint fine-tuning: per example, recompute the network output, solve
    the loss-augmented problem, and chain the hinge gradient through the
    softmax and every network layer. The rival is treated as constant
    (subgradient of the max); the network runs in eval mode so the
    refinement coupling is deterministic.

    examples: list of (images, gold).
    """
    if rng is None:
        rng = np.random.default_rng(config.seed + 1)
    if state is None:
        state = TrainState()
    params = params.copy()
    weights = weights.copy()
    adam = nn.AdamState(lr=config.eta_ft)
    records: list[HingeRecord] = []
    for _ in range(config.epochs_ft):
        for idx in rng.permutation(len(examples)):
            x, gold = examples[idx]
            probs, cache = nn.cnn_forward(params, x, mode="eval")
            net_out = probs if config.mode == "soft" else probs.argmax(axis=1)
            value, y_star, grad, margin = structured_hinge(
                weights, x, net_out, gold, config.mode, config.lambda_reg, features
            )
            records.append(HingeRecord(int(idx), value, hamming(gold, y_star)))
            if features.uses_network and margin > 0:
                # straight-through in hard mode: same coefficients as soft
                dprobs = hinge_probs_gradient(weights, x, probs, gold, y_star)
                dlogits = nn.softmax_vjp(probs, dprobs)
                grads = nn.cnn_backward(params, cache, dlogits)
                params, adam = nn.adam_step(params, grads, adam)
            if config.update_structured_in_ft and features.trainable:
                state.step += 1
                eta = config.eta_cst / np.sqrt(state.step)
                weights.add_scaled(grad, -eta)
                state.accumulate(weights)
    if (
        config.average_iterates
        and config.update_structured_in_ft
        and features.trainable
        and state.n_averaged > 0
    ):
        weights = state.average()
    return params, weights, records


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class PipelineResult:
    cnn: nn.CnnParams
    weights: StructuredWeights
    pretrain_losses: list[float] = field(default_factory=list)
    cst_records: list[HingeRecord] = field(default_factory=list)
    ft_records: list[HingeRecord] = field(default_factory=list)


def network_outputs(params: nn.CnnParams, samples, mode: str):
    """Frozen per-example network outputs for the structured stage."""
    outs = []
    for s in samples:
        yhat, probs = nn.predict_sequence(params, s.images)
        outs.append(probs if mode == "soft" else yhat)
    return outs


def run_pipeline(
    bundle,
    chunk_index: int,
    config: TrainConfig,
    features: FeatureSet = FULL,
    pretrained: nn.CnnParams | None = None,
    checkpoint_fn=None,
) -> PipelineResult:
    """Pretrain, structured training, fine-tuning, in that order, each stage
    gated by the config. checkpoint_fn(stage, result) runs after each stage
    so a failed later stage leaves earlier artifacts intact."""
    samples = bundle.chunk(chunk_index)
    result = PipelineResult(cnn=None, weights=initial_weights(features))

    if pretrained is None:
        rng = np.random.default_rng([config.seed, 101])
        params = nn.init_cnn(rng)
        params, losses = nn.pretrain_cnn(
            params, samples, config.epochs_pretrain, config.batch_size, rng,
            lr=config.eta_pretrain,
        )
        result.cnn = params
        result.pretrain_losses = losses
    else:
        result.cnn = pretrained.copy()
    if checkpoint_fn:
        checkpoint_fn("pretrain", result)

    state = TrainState()
    if config.run_cst and features.trainable:
        if features.uses_network:
            outs = network_outputs(result.cnn, samples, config.mode)
        else:
            outs = [None] * len(samples)
        examples = [(s.images, o, s.labels) for s, o in zip(samples, outs)]
        rng = np.random.default_rng([config.seed, 102])
        result.weights, result.cst_records = train_cst(
            result.weights, examples, config, features, rng, state
        )
        if checkpoint_fn:
            checkpoint_fn("cst", result)

    if config.run_finetune and features.uses_network and features.trainable:
        examples = [(s.images, s.labels) for s in samples]
        rng = np.random.default_rng([config.seed, 103])
        start = result.weights
        if (
            config.average_iterates
            and config.update_structured_in_ft
            and state.last_iterate is not None
        ):
            # keep stepping the raw iterate; the average is what gets used
            start = state.last_iterate
        result.cnn, result.weights, result.ft_records = finetune_end_to_end(
            result.cnn, start, examples, config, features, rng, state
        )
        if checkpoint_fn:
            checkpoint_fn("finetune", result)
    return result


def save_stage_log(records_by_stage: dict[str, list[HingeRecord]], path) -> None:
    with open(path, "w") as fh:
        fh.write("stage,step,example,hinge,hamming_to_gold\n")
        for stage, records in records_by_stage.items():
            for step, rec in enumerate(records, start=1):
                fh.write(
                    f"{stage},{step},{rec.example},{rec.hinge:.17g},{rec.hamming_to_gold}\n"
                )
