import math

import numpy as np
import pytest

from gradcheck import (
    H,
    activation_signature,
    check_indices,
    check_network_indices,
    generic_params,
    rel_error,
    sample_indices,
)
from nester.dataset import NoiseConfig, generate_dataset
from nester.errors import NumericError
from nester.nn import (
    AdamState,
    CnnParams,
    adam_step,
    cnn_backward,
    cnn_forward,
    conv2d_backward,
    conv2d_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    init_cnn,
    load_cnn,
    maxpool2_backward,
    maxpool2_forward,
    pretrain_cnn,
    predict_sequence,
    relu_backward,
    relu_forward,
    save_cnn,
    softmax,
    softmax_vjp,
    zeros_like_params,
)


def zero_params() -> CnnParams:
    p = init_cnn(np.random.default_rng(0))
    for _, arr in p.items():
        arr[:] = 0.0
    return p


# ---------------------------------------------------------------------------
# forward contracts
# ---------------------------------------------------------------------------


def test_zero_params_uniform_probs(rng):
    images = rng.integers(0, 2, (4, 9, 9))
    probs, _ = cnn_forward(zero_params(), images)
    assert np.allclose(probs, 1 / 12, atol=1e-12)


def test_probs_sum_to_one(rng):
    params = init_cnn(rng)
    images = rng.integers(0, 2, (8, 9, 9))
    probs, _ = cnn_forward(params, images)
    assert np.all(np.abs(probs.sum(axis=1) - 1) < 1e-9)
    assert np.all(probs >= 0)


def test_eval_forward_pure(rng):
    params = init_cnn(rng)
    images = rng.integers(0, 2, (3, 9, 9))
    p1, _ = cnn_forward(params, images)
    p2, _ = cnn_forward(params, images)
    assert np.array_equal(p1, p2)


def test_train_mode_requires_rng(rng):
    with pytest.raises(ValueError, match="rng"):
        cnn_forward(init_cnn(rng), rng.integers(0, 2, (2, 9, 9)), mode="train")


def test_nonfinite_raises(rng):
    params = init_cnn(rng)
    params.conv1_w[0, 0, 0, 0] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(NumericError, match="conv1"):
        cnn_forward(params, np.ones((1, 9, 9)))


# ---------------------------------------------------------------------------
# per-layer gradient checks against central finite differences
# ---------------------------------------------------------------------------


def scalar_probe(out_shape, rng):
    return rng.normal(size=out_shape)


def test_conv_gradients(rng):
    for _ in range(10):
        x = rng.normal(size=(2, 9, 9, 3))
        w = rng.normal(size=(3, 3, 3, 4))
        b = rng.normal(size=4)
        probe = scalar_probe((2, 9, 9, 4), rng)

        def loss():
            out, _ = conv2d_forward(x, w, b)
            return float((out * probe).sum())

        out, cache = conv2d_forward(x, w, b)
        dx, dw, db = conv2d_backward(probe, w, cache)
        assert check_indices(loss, x, dx, sample_indices(x.shape, 5, rng)) < 1e-4
        assert check_indices(loss, w, dw, sample_indices(w.shape, 5, rng)) < 1e-4
        assert check_indices(loss, b, db, [(i,) for i in range(4)]) < 1e-4


def test_relu_gradient(rng):
    for _ in range(10):
        # keep inputs away from the kink so h=1e-4 stays on one branch
        x = rng.uniform(0.05, 1.0, size=(3, 7)) * rng.choice([-1.0, 1.0], size=(3, 7))
        probe = scalar_probe(x.shape, rng)

        def loss():
            return float((relu_forward(x)[0] * probe).sum())

        _, mask = relu_forward(x)
        dx = relu_backward(probe, mask)
        assert check_indices(loss, x, dx, sample_indices(x.shape, 6, rng)) < 1e-4


def test_maxpool_gradient(rng):
    for _ in range(10):
        x = rng.normal(size=(2, 9, 9, 3))
        probe = scalar_probe((2, 5, 5, 3), rng)

        def loss():
            return float((maxpool2_forward(x)[0] * probe).sum())

        _, cache = maxpool2_forward(x)
        dx = maxpool2_backward(probe, cache)
        assert check_indices(loss, x, dx, sample_indices(x.shape, 6, rng)) < 1e-4


def test_maxpool_routes_to_argmax_only():
    x = np.arange(16.0).reshape(1, 4, 4, 1)
    out, cache = maxpool2_forward(x)
    dout = np.ones_like(out)
    dx = maxpool2_backward(dout, cache)
    assert dx.sum() == dout.sum()  # routed mass preserved
    assert np.count_nonzero(dx) == out.size  # one cell per window
    assert dx[0, 1, 1, 0] == 1 and dx[0, 0, 0, 0] == 0


def test_maxpool_ceiling_shapes(rng):
    out, _ = maxpool2_forward(rng.normal(size=(1, 9, 9, 2)))
    assert out.shape == (1, 5, 5, 2)
    out, _ = maxpool2_forward(rng.normal(size=(1, 5, 5, 2)))
    assert out.shape == (1, 3, 3, 2)


def test_dense_gradients(rng):
    for _ in range(10):
        x = rng.normal(size=(4, 6))
        w = rng.normal(size=(6, 5))
        b = rng.normal(size=5)
        probe = scalar_probe((4, 5), rng)

        def loss():
            return float((dense_forward(x, w, b)[0] * probe).sum())

        _, cache = dense_forward(x, w, b)
        dx, dw, db = dense_backward(probe, w, cache)
        assert check_indices(loss, x, dx, sample_indices(x.shape, 5, rng)) < 1e-4
        assert check_indices(loss, w, dw, sample_indices(w.shape, 5, rng)) < 1e-4
        assert check_indices(loss, b, db, [(i,) for i in range(5)]) < 1e-4


def test_softmax_vjp(rng):
    for _ in range(10):
        z = rng.normal(size=(3, 12))
        probe = scalar_probe((3, 12), rng)

        def loss():
            return float((softmax(z) * probe).sum())

        dz = softmax_vjp(softmax(z), probe)
        assert check_indices(loss, z, dz, sample_indices(z.shape, 6, rng)) < 1e-4


def test_full_network_xent_gradcheck(rng):
    # perturb one weight at a time and difference the cross entropy;
    # directions that cross a ReLU or flip a pool winner are skipped, since
    # the loss is not differentiable along them
    params = generic_params(rng)
    images = rng.integers(0, 2, (3, 9, 9)).astype(float)
    labels = np.array([1, 10, 4])

    def loss_sig():
        probs, cache = cnn_forward(params, images)
        logp = cache["logits"] - np.log(np.exp(cache["logits"]).sum(1, keepdims=True))
        return -float(logp[np.arange(3), labels].mean()), activation_signature(cache)

    probs, cache = cnn_forward(params, images)
    _, dlogits = cross_entropy(probs, cache["logits"], labels)
    grads = cnn_backward(params, cache, dlogits)
    worst = 0.0
    checked = skipped = 0
    for name, arr in params.items():
        indices = sample_indices(arr.shape, 4, rng)
        wn, sk = check_network_indices(loss_sig, arr, grads[name], indices)
        worst = max(worst, wn)
        checked += len(indices)
        skipped += sk
    assert worst < 1e-4
    assert skipped < checked / 4  # non-differentiable directions are rare


def test_backward_zero_upstream(rng):
    params = init_cnn(rng)
    _, cache = cnn_forward(params, rng.integers(0, 2, (2, 9, 9)))
    grads = cnn_backward(params, cache, np.zeros((2, 12)))
    assert all(np.all(g == 0) for g in grads.values())


def test_softmax_xent_gradient_identity(rng):
    # one-hot probabilities at the target make the logits gradient vanish
    probs = np.zeros((1, 12))
    probs[0, 3] = 1.0
    dlogits = probs.copy()
    dlogits[0, 3] -= 1.0
    assert np.all(dlogits == 0)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_no_op(rng):
    params = init_cnn(rng)
    before = params.copy()
    new, _ = adam_step(params, zeros_like_params(params), AdamState())
    for (_, a), (_, b) in zip(new.items(), before.items()):
        assert np.array_equal(a, b)


def test_adam_first_step_closed_form(rng):
    params = init_cnn(rng)
    grads = {name: rng.normal(size=arr.shape) for name, arr in params.items()}
    state = AdamState(lr=1e-3)
    new, _ = adam_step(params, grads, state)
    for name, arr in params.items():
        g = grads[name]
        expected = arr - state.lr * g / (np.abs(g) + state.eps)
        assert np.allclose(getattr(new, name), expected, atol=1e-12)
        # far from zero gradients this is a signed constant step
        big = np.abs(g) > 1e-4
        step = getattr(new, name)[big] - arr[big]
        assert np.allclose(step, -state.lr * np.sign(g[big]), atol=1e-7)


def test_adam_rejects_nonfinite(rng):
    params = init_cnn(rng)
    grads = zeros_like_params(params)
    grads["conv1_b"][0] = np.nan
    with pytest.raises(NumericError):
        adam_step(params, grads, AdamState())


def test_adam_quadratic_convergence_matches_scalar_recurrence():
    # independent plain-python recurrence on f(w) = ||w||^2 from (1, 1)
    def oracle(steps, lr=0.1, b1=0.9, b2=0.999, eps=1e-8):
        w, m, v = [1.0, 1.0], [0.0, 0.0], [0.0, 0.0]
        for t in range(1, steps + 1):
            for i in range(2):
                g = 2 * w[i]
                m[i] = b1 * m[i] + (1 - b1) * g
                v[i] = b2 * v[i] + (1 - b2) * g * g
                w[i] -= lr * (m[i] / (1 - b1**t)) / (
                    math.sqrt(v[i] / (1 - b2**t)) + eps
                )
        return w

    params = zero_params()
    params.conv1_b[:2] = 1.0  # embed the toy problem in one parameter block
    state = AdamState(lr=0.1)
    for _ in range(200):
        grads = zeros_like_params(params)
        grads["conv1_b"][:2] = 2 * params.conv1_b[:2]
        params, state = adam_step(params, grads, state)
    expected = oracle(200)
    assert np.allclose(params.conv1_b[:2], expected, atol=1e-12)
    assert np.linalg.norm(params.conv1_b[:2]) < 0.05


# ---------------------------------------------------------------------------
# pretraining and prediction
# ---------------------------------------------------------------------------


def test_pretrain_zero_epochs(tiny_bundle, rng):
    params = init_cnn(rng)
    before = params.copy()
    trained, losses = pretrain_cnn(params, tiny_bundle.train[:4], epochs=0, rng=rng)
    assert losses == []
    for (_, a), (_, b) in zip(trained.items(), before.items()):
        assert np.array_equal(a, b)


def test_pretrain_reproducible(tiny_bundle):
    outs = []
    for _ in range(2):
        params = init_cnn(np.random.default_rng(5))
        trained, losses = pretrain_cnn(
            params, tiny_bundle.train[:8], epochs=2, rng=np.random.default_rng(6)
        )
        outs.append((trained, losses))
    assert outs[0][1] == outs[1][1]
    for (_, a), (_, b) in zip(outs[0][0].items(), outs[1][0].items()):
        assert np.array_equal(a, b)


def test_pretrain_separates_noiseless_glyphs():
    bundle = generate_dataset(150, 0, 1, NoiseConfig(flip_prob=0.0, max_shift=0), seed=3)
    glyph_count = sum(len(s) for s in bundle.train)
    assert glyph_count >= 1200
    rng = np.random.default_rng(0)
    params, _ = pretrain_cnn(init_cnn(rng), bundle.train, epochs=30, rng=rng)
    correct = total = 0
    for s in bundle.train:
        yhat, _ = predict_sequence(params, s.images)
        correct += int((yhat == np.asarray(s.labels)).sum())
        total += len(s)
    assert correct / total >= 0.99


def test_predict_sequence_tie_rule(rng):
    images = rng.integers(0, 2, (3, 9, 9))
    yhat, probs = predict_sequence(zero_params(), images)
    assert np.array_equal(yhat, np.zeros(3))
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_predict_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        predict_sequence(zero_params(), np.zeros((0, 9, 9)))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_cnn_checkpoint_round_trip(tmp_path, rng):
    params = init_cnn(rng)
    path = tmp_path / "cnn.ckpt"
    save_cnn(params, path)
    back = load_cnn(path)
    for (_, a), (_, b) in zip(back.items(), params.items()):
        assert np.array_equal(a, b)
    assert back.dropout_prob == params.dropout_prob


def test_cnn_checkpoint_rejects_missing_section(tmp_path):
    path = tmp_path / "cnn.ckpt"
    path.write_text("#nester-cnn v1\nconv1_b 2\n0 0\n")
    from nester.errors import DataFormatError

    with pytest.raises(DataFormatError):
        load_cnn(path)
