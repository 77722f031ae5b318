import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nester.features import (
    JointFeatures,
    StructuredWeights,
    emission_features,
    hamming,
    joint_features,
    load_weights,
    nester_score,
    refinement_features,
    save_weights,
    soft_hamming,
    soft_refinement_features,
    transition_features,
)
from nester.glyphs import string_to_labels


def rand_weights(rng):
    return StructuredWeights(
        emission=rng.normal(size=(81, 12)),
        transition=rng.normal(size=(12, 12)),
        refinement=rng.normal(size=(81, 12)),
        delta=float(rng.normal()),
    )


symbol_seqs = st.lists(st.integers(0, 11), min_size=1, max_size=11)


def images_for(y, rng):
    return rng.integers(0, 2, (len(y), 9, 9))


# ---------------------------------------------------------------------------
# emission / transition
# ---------------------------------------------------------------------------


def test_emission_zero_images():
    x = np.zeros((3, 9, 9))
    assert np.array_equal(emission_features(x, [1, 2, 3]), np.zeros((81, 12)))


def test_emission_single_pixel():
    x = np.zeros((1, 9, 9))
    x[0, 0, 0] = 1
    out = emission_features(x, [5])
    expected = np.zeros((81, 12))
    expected[0, 5] = 1
    assert np.array_equal(out, expected)


def test_emission_additive_over_positions(rng):
    img = rng.integers(0, 2, (1, 9, 9))
    single = emission_features(img, [3])
    double = emission_features(np.concatenate([img, img]), [3, 3])
    assert np.array_equal(double, 2 * single)


def test_emission_length_mismatch(rng):
    with pytest.raises(ValueError, match="lengths"):
        emission_features(rng.integers(0, 2, (3, 9, 9)), [1, 2])


def test_transition_cases():
    assert np.array_equal(transition_features([7]), np.zeros((12, 12)))
    out = transition_features([1, 10, 1])
    assert out[1, 10] == 1 and out[10, 1] == 1 and out.sum() == 2
    out = transition_features([2, 2, 2])
    assert out[2, 2] == 2 and out.sum() == 2


@given(symbol_seqs)
def test_transition_sum(y):
    assert transition_features(y).sum() == len(y) - 1


# ---------------------------------------------------------------------------
# refinement / hamming
# ---------------------------------------------------------------------------


def test_refinement_no_disagreement(rng):
    y = [1, 2, 3]
    x = images_for(y, rng)
    assert np.array_equal(refinement_features(x, y, y), np.zeros((81, 12)))


def test_refinement_single_pixel():
    x = np.zeros((1, 9, 9))
    x[0, 2, 3] = 1
    out = refinement_features(x, [7], [4])
    expected = np.zeros((81, 12))
    expected[2 * 9 + 3, 4] = 1
    assert np.array_equal(out, expected)


def test_refinement_partitions_emission(rng):
    y = string_to_labels("12+34=46")
    yhat = string_to_labels("12+84=46")
    x = images_for(y, rng)
    agree = [i for i in range(len(y)) if y[i] == yhat[i]]
    agree_emission = emission_features(x[agree], [y[i] for i in agree])
    total = refinement_features(x, yhat, y) + agree_emission
    assert np.array_equal(total, emission_features(x, y))


def test_hamming_cases():
    assert hamming([1, 2, 3], [1, 2, 3]) == 0
    assert hamming([1, 2, 3], [1, 0, 3]) == 1
    assert hamming([10, 11], [11, 10]) == 2
    with pytest.raises(ValueError):
        hamming([1], [1, 2])


@given(symbol_seqs, st.data())
def test_hamming_symmetric(y, data):
    other = data.draw(st.lists(st.integers(0, 11), min_size=len(y), max_size=len(y)))
    assert hamming(y, other) == hamming(other, y)
    assert 0 <= hamming(y, other) <= len(y)
    assert (hamming(y, other) == 0) == (list(y) == list(other))


# ---------------------------------------------------------------------------
# soft relaxations
# ---------------------------------------------------------------------------


def one_hot_rows(y):
    out = np.zeros((len(y), 12))
    out[np.arange(len(y)), y] = 1.0
    return out


def test_soft_reduces_to_hard_at_one_hot(rng):
    y = string_to_labels("72+10=82")
    yhat = string_to_labels("72+18=82")
    x = images_for(y, rng)
    probs = one_hot_rows(yhat)
    assert np.array_equal(
        soft_refinement_features(x, probs, y), refinement_features(x, yhat, y)
    )
    assert soft_hamming(y, probs) == hamming(y, yhat)


def test_soft_hamming_uniform_rows():
    y = [0, 5, 11]
    probs = np.full((3, 12), 1 / 12)
    assert abs(soft_hamming(y, probs) - 3 * 11 / 12) < 1e-12


def test_soft_rejects_bad_rows():
    probs = np.full((2, 12), 1 / 12)
    probs[0, 0] += 0.01
    with pytest.raises(ValueError, match="sum to 1"):
        soft_hamming([1, 2], probs)


def test_soft_score_gradient_matches_finite_differences(rng):
    # perturb along e_k - e_j so rows keep summing to 1; the directional
    # derivative is the difference of the two partials
    from gradcheck import H, rel_error

    w = rand_weights(rng)
    y = string_to_labels("9+90=99")
    x = images_for(y, rng)
    probs = rng.dirichlet(np.ones(12), size=len(y))

    def score():
        total = float(np.vdot(w.refinement, soft_refinement_features(x, probs, y)))
        return total + w.delta * soft_hamming(y, probs)

    def partial(e, k):
        return -(response[e, k] + w.delta) if k == y[e] else 0.0

    x_flat = x.reshape(len(y), -1).astype(float)
    response = x_flat @ w.refinement
    worst = 0.0
    for e in range(len(y)):
        for k in range(12):
            j = (k + 1) % 12
            probs[e, k] += H
            probs[e, j] -= H
            up = score()
            probs[e, k] -= 2 * H
            probs[e, j] += 2 * H
            down = score()
            probs[e, k] += H
            probs[e, j] -= H
            numeric = (up - down) / (2 * H)
            worst = max(worst, rel_error(partial(e, k) - partial(e, j), numeric))
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def test_score_zero_weights(rng):
    y = string_to_labels("1+1=2")
    x = images_for(y, rng)
    assert nester_score(StructuredWeights.zeros(), x, y, y, "hard") == 0.0


def test_score_distance_only():
    w = StructuredWeights.zeros()
    w.delta = -1.0
    y = string_to_labels("1+1=2")
    yhat = string_to_labels("7+1=3")
    x = np.zeros((5, 9, 9))
    assert nester_score(w, x, yhat, y, "hard") == -2.0


def test_score_linear_in_weights(rng):
    y = string_to_labels("31+7=38")
    yhat = string_to_labels("31+9=38")
    x = images_for(y, rng)
    u, v = rand_weights(rng), rand_weights(rng)
    alpha, beta = 0.7, -1.3
    combo = StructuredWeights(
        emission=alpha * u.emission + beta * v.emission,
        transition=alpha * u.transition + beta * v.transition,
        refinement=alpha * u.refinement + beta * v.refinement,
        delta=alpha * u.delta + beta * v.delta,
    )
    lhs = nester_score(combo, x, yhat, y, "hard")
    rhs = alpha * nester_score(u, x, yhat, y, "hard") + beta * nester_score(
        v, x, yhat, y, "hard"
    )
    assert abs(lhs - rhs) < 1e-9


def test_concatenation_adds_boundary_transition(rng):
    y1 = string_to_labels("1+1=2")
    y2 = string_to_labels("40+2=42")
    x1, x2 = images_for(y1, rng), images_for(y2, rng)
    whole_t = transition_features(list(y1) + list(y2))
    parts_t = transition_features(y1) + transition_features(y2)
    boundary = np.zeros((12, 12))
    boundary[y1[-1], y2[0]] = 1
    assert np.array_equal(whole_t, parts_t + boundary)
    whole_e = emission_features(np.concatenate([x1, x2]), list(y1) + list(y2))
    assert np.array_equal(whole_e, emission_features(x1, y1) + emission_features(x2, y2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_refinement_bounded_by_emission(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 9))
    y = rng.integers(0, 12, m)
    yhat = rng.integers(0, 12, m)
    x = rng.integers(0, 2, (m, 9, 9))
    ref = refinement_features(x, yhat, y)
    em = emission_features(x, y)
    assert np.all(ref <= em + 1e-12)
    probs = rng.dirichlet(np.ones(12), size=m)
    soft = soft_refinement_features(x, probs, y)
    assert np.all(soft <= em + 1e-12)


# ---------------------------------------------------------------------------
# checkpoint round trip
# ---------------------------------------------------------------------------


def test_weights_round_trip(tmp_path, rng):
    w = rand_weights(rng)
    path = tmp_path / "w.ckpt"
    save_weights(w, path)
    back = load_weights(path)
    assert np.array_equal(back.emission, w.emission)
    assert np.array_equal(back.transition, w.transition)
    assert np.array_equal(back.refinement, w.refinement)
    assert back.delta == w.delta


def test_weights_header_check(tmp_path):
    path = tmp_path / "w.ckpt"
    path.write_text("#wrong v9\n")
    from nester.errors import DataFormatError

    with pytest.raises(DataFormatError, match="header"):
        load_weights(path)


def test_joint_features_blocks(rng):
    y = string_to_labels("5+5=10")
    yhat = string_to_labels("5+5=16")
    x = images_for(y, rng)
    feats = joint_features(x, yhat, y, "hard")
    assert isinstance(feats, JointFeatures)
    assert feats.delta == hamming(y, yhat)
    assert np.array_equal(feats.emission, emission_features(x, y))
