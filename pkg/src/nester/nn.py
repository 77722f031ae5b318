"""Minimal numpy neural toolkit: the per-glyph CNN, its exact gradients,
and Adam.

Architecture: two 3x3 same-padded conv layers with ReLU, each followed by a
2x2 max-pool with ceiling semantics (spatial path 9 -> 5 -> 3), a dense
layer of 128 units with ReLU and inverted dropout, and a 12-way softmax
output. Everything runs in float64; every backward pass is checked against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, NumericError
from .glyphs import IMG_SIZE, N_SYMBOLS

FORMAT_HEADER = "#nester-cnn v1"

C1 = 16  # filters in the first conv layer
C2 = 32  # filters in the second conv layer
DENSE = 128
FLAT = C2 * 3 * 3

PARAM_NAMES = (
    "conv1_w", "conv1_b", "conv2_w", "conv2_b",
    "dense_w", "dense_b", "out_w", "out_b",
)


@dataclass
class CnnParams:
    conv1_w: np.ndarray  # (3, 3, 1, C1)
    conv1_b: np.ndarray  # (C1,)
    conv2_w: np.ndarray  # (3, 3, C1, C2)
    conv2_b: np.ndarray  # (C2,)
    dense_w: np.ndarray  # (FLAT, DENSE)
    dense_b: np.ndarray  # (DENSE,)
    out_w: np.ndarray  # (DENSE, 12)
    out_b: np.ndarray  # (12,)
    dropout_prob: float = 0.5

    def items(self):
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def copy(self) -> "CnnParams":
        return CnnParams(
            **{name: arr.copy() for name, arr in self.items()},
            dropout_prob=self.dropout_prob,
        )


def init_cnn(rng: np.random.Generator, dropout_prob: float = 0.5) -> CnnParams:
    """He-style fan-in scaling for the ReLU stack, zero biases."""

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    return CnnParams(
        conv1_w=he((3, 3, 1, C1), 9),
        conv1_b=np.zeros(C1),
        conv2_w=he((3, 3, C1, C2), C1 * 9),
        conv2_b=np.zeros(C2),
        dense_w=he((FLAT, DENSE), FLAT),
        dense_b=np.zeros(DENSE),
        out_w=he((DENSE, N_SYMBOLS), DENSE),
        out_b=np.zeros(N_SYMBOLS),
        dropout_prob=dropout_prob,
    )


def zeros_like_params(params: CnnParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def _check_finite(arr: np.ndarray, layer: str) -> None:
    # a non-finite entry makes the sum non-finite; avoids a bool temporary
    if not np.isfinite(arr.sum()):
        raise NumericError(f"non-finite activation in layer {layer!r}")


# ---------------------------------------------------------------------------
# Layer primitives (forward returns a cache sufficient for backward)
# ---------------------------------------------------------------------------


def _windows(x: np.ndarray):
    """(N, H, W, 3, 3, C) sliding view over the same-padded channels-last
    input; activations stay channels-last throughout so no layer needs a
    transposing copy."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    s = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, h, w, 3, 3, c), (s[0], s[1], s[2], s[1], s[2], s[3])
    )


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 convolution with same padding, stride 1.

    x: (N, H, W, C); w: (3, 3, C, F); output (N, H, W, F).
    """
    n, h, wd, c = x.shape
    f = w.shape[-1]
    flat = np.ascontiguousarray(_windows(x)).reshape(n * h * wd, 9 * c)
    out = flat @ w.reshape(9 * c, f)
    out += b
    return out.reshape(n, h, wd, f), (flat, x.shape, w.shape)


def conv2d_backward(dout: np.ndarray, w: np.ndarray, cache):
    flat, x_shape, w_shape = cache
    n, h, wd, c = x_shape
    f = w_shape[-1]
    dflat_out = dout.reshape(n * h * wd, f)
    dw = (flat.T @ dflat_out).reshape(w_shape)
    db = dflat_out.sum(axis=0)
    # full correlation of the upstream gradient with the flipped kernels
    dwin = np.ascontiguousarray(_windows(dout)).reshape(n * h * wd, 9 * f)
    w_flip = np.ascontiguousarray(w[::-1, ::-1]).reshape(9, c, f)
    w_flip = np.ascontiguousarray(w_flip.transpose(0, 2, 1)).reshape(9 * f, c)
    dx = (dwin @ w_flip).reshape(x_shape)
    return dx, dw, db


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def maxpool2_forward(x: np.ndarray):
    """2x2 max-pool, stride 2, ceiling semantics (odd edges keep a 1-wide
    window). x: (N, H, W, C). Gradient routes to the first argmax cell of
    each window."""
    n, h, w, c = x.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    if h % 2 or w % 2:
        xp = np.full((n, 2 * ho, 2 * wo, c), -np.inf)
        xp[:, :h, :w] = x
    else:
        xp = x
    cells = [xp[:, i::2, j::2] for i, j in _POOL_OFFSETS]
    out = np.maximum(np.maximum(cells[0], cells[1]), np.maximum(cells[2], cells[3]))
    # first argmax in window order, matching the backward routing
    idx = np.where(
        cells[0] == out, 0, np.where(cells[1] == out, 1, np.where(cells[2] == out, 2, 3))
    )
    return out, (idx, x.shape)


def maxpool2_backward(dout: np.ndarray, cache) -> np.ndarray:
    idx, x_shape = cache
    n, h, w, c = x_shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    dxp = np.zeros((n, 2 * ho, 2 * wo, c))
    for k, (i, j) in enumerate(_POOL_OFFSETS):
        np.copyto(dxp[:, i::2, j::2], dout, where=(idx == k))
    return dxp[:, :h, :w]


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, x


def dense_backward(dout: np.ndarray, w: np.ndarray, x: np.ndarray):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def dropout_forward(x: np.ndarray, prob: float, rng: np.random.Generator):
    # inverted scaling: eval needs no correction factor
    mask = (rng.random(x.shape) >= prob) / (1.0 - prob)
    return x * mask, mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_vjp(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. probabilities back to the logits."""
    inner = (dprobs * probs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner)


# ---------------------------------------------------------------------------
# The fixed network graph
# ---------------------------------------------------------------------------


def cnn_forward(
    params: CnnParams,
    images: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
):
    """Forward pass over a batch of 9x9 bitmaps. Returns (probs, cache).

    Train mode applies dropout and requires an rng; eval mode is a pure
    function of (params, images).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode requires an rng for dropout masks")
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    n = x.shape[0]
    if x.shape != (n, IMG_SIZE, IMG_SIZE):
        raise ValueError(f"expected (n, 9, 9) images, got {x.shape}")
    x = x[..., None]  # single input channel, channels last

    cache: dict = {"mode": mode}
    z1, cache["conv1"] = conv2d_forward(x, params.conv1_w, params.conv1_b)
    _check_finite(z1, "conv1")
    a1, cache["relu1"] = relu_forward(z1)
    p1, cache["pool1"] = maxpool2_forward(a1)
    z2, cache["conv2"] = conv2d_forward(p1, params.conv2_w, params.conv2_b)
    _check_finite(z2, "conv2")
    a2, cache["relu2"] = relu_forward(z2)
    p2, cache["pool2"] = maxpool2_forward(a2)
    flat = p2.reshape(n, FLAT)
    z3, cache["dense"] = dense_forward(flat, params.dense_w, params.dense_b)
    _check_finite(z3, "dense")
    a3, cache["relu3"] = relu_forward(z3)
    if mode == "train":
        h, cache["drop"] = dropout_forward(a3, params.dropout_prob, rng)
    else:
        h, cache["drop"] = a3, None
    logits, cache["out"] = dense_forward(h, params.out_w, params.out_b)
    _check_finite(logits, "output")
    cache["logits"] = logits
    probs = softmax(logits)
    cache["probs"] = probs
    return probs, cache


def cnn_backward(params: CnnParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss whose logits gradient is supplied."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache["logits"].shape:
        raise ValueError(
            f"dlogits shape {dlogits.shape} does not match logits {cache['logits'].shape}"
        )
    grads: dict[str, np.ndarray] = {}
    dh, grads["out_w"], grads["out_b"] = dense_backward(dlogits, params.out_w, cache["out"])
    if cache["drop"] is not None:
        dh = dh * cache["drop"]
    da3 = relu_backward(dh, cache["relu3"])
    dflat, grads["dense_w"], grads["dense_b"] = dense_backward(
        da3, params.dense_w, cache["dense"]
    )
    dp2 = dflat.reshape(-1, 3, 3, C2)
    da2 = maxpool2_backward(dp2, cache["pool2"])
    dz2 = relu_backward(da2, cache["relu2"])
    dp1, grads["conv2_w"], grads["conv2_b"] = conv2d_backward(
        dz2, params.conv2_w, cache["conv2"]
    )
    da1 = maxpool2_backward(dp1, cache["pool1"])
    dz1 = relu_backward(da1, cache["relu1"])
    _, grads["conv1_w"], grads["conv1_b"] = conv2d_backward(
        dz1, params.conv1_w, cache["conv1"]
    )
    return grads


def cross_entropy(probs: np.ndarray, logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy over the batch plus its logits gradient."""
    n = len(labels)
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), labels].mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: CnnParams, grads: dict[str, np.ndarray], state: AdamState):
    """Standard bias-corrected Adam update. Returns (new params, new state)."""
    new = params.copy()
    state.t += 1
    t = state.t
    for name, arr in new.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(arr)
            v = np.zeros_like(arr)
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        arr -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, state


# ---------------------------------------------------------------------------
# Glyph-level training and sequence prediction
# ---------------------------------------------------------------------------


def pretrain_cnn(
    params: CnnParams,
    samples,
    epochs: int,
    batch_size: int = 64,
    rng: np.random.Generator | None = None,
    lr: float = 1e-3,
):
    """Train on individual (image, label) pairs pooled from all sequences.

    Returns (trained params, per-epoch average cross entropy).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    images = np.concatenate([np.asarray(s.images) for s in samples]).astype(np.float64)
    labels = np.concatenate([np.asarray(s.labels) for s in samples])
    n = len(labels)
    state = AdamState(lr=lr)
    losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            probs, cache = cnn_forward(params, images[batch], mode="train", rng=rng)
            loss, dlogits = cross_entropy(probs, cache["logits"], labels[batch])
            grads = cnn_backward(params, cache, dlogits)
            params, state = adam_step(params, grads, state)
            total += loss * len(batch)
        losses.append(total / n)
    return params, losses


def predict_sequence(params: CnnParams, images: np.ndarray):
    """Per-glyph prediction for one sequence: (argmax symbols, (m, 12) probs).
    Probability ties break toward the smaller symbol id."""
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("empty image sequence")
    probs, _ = cnn_forward(params, images, mode="eval")
    return probs.argmax(axis=1), probs


# ---------------------------------------------------------------------------
# Checkpoint io
# ---------------------------------------------------------------------------


def save_cnn(params: CnnParams, path) -> None:
    with open(path, "w") as fh:
        fh.write(FORMAT_HEADER + "\n")
        for name, arr in params.items():
            fh.write(name + " " + " ".join(str(d) for d in arr.shape) + "\n")
            fh.write(" ".join(f"{v:.17g}" for v in arr.reshape(-1)) + "\n")
        fh.write("dropout_prob 1\n")
        fh.write(f"{params.dropout_prob:.17g}\n")


def load_cnn(path) -> CnnParams:
    from .features import read_sections

    arrays = read_sections(path, FORMAT_HEADER)
    try:
        fields = {name: arrays[name] for name in PARAM_NAMES}
        return CnnParams(**fields, dropout_prob=float(arrays["dropout_prob"][0]))
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing checkpoint section {exc}") from exc
