import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nester import glyphs
from nester.dataset import (
    DatasetBundle,
    NoiseConfig,
    generate_dataset,
    load_dataset,
    make_sample,
    render_glyph,
    sample_equation,
    save_dataset,
    shift_image,
)
from nester.errors import ConfigError, DataFormatError
from nester.solver import VALID, validate

NO_NOISE = NoiseConfig(flip_prob=0.0, max_shift=0)


# ---------------------------------------------------------------------------
# glyph rendering
# ---------------------------------------------------------------------------


def test_templates_distinct():
    flat = {g.tobytes() for g in glyphs.TEMPLATES}
    assert len(flat) == 12


def test_render_noiseless_is_template():
    rng = np.random.default_rng(0)
    img = render_glyph(glyphs.PLUS, NO_NOISE, rng)
    assert np.array_equal(img, glyphs.template(glyphs.PLUS))


def test_render_deterministic():
    noise = NoiseConfig(flip_prob=0.1, max_shift=1)
    a = render_glyph(3, noise, np.random.default_rng(42))
    b = render_glyph(3, noise, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_render_rejects_bad_symbol():
    with pytest.raises(ValueError, match="symbol"):
        render_glyph(12, NO_NOISE, np.random.default_rng(0))


def test_flip_rate_matches_configured_probability():
    # Monte Carlo estimate over 10,000 renders without shift
    noise = NoiseConfig(flip_prob=0.05, max_shift=0)
    rng = np.random.default_rng(7)
    template = glyphs.template(3)
    flipped = 0
    n = 10_000
    for _ in range(n):
        img = render_glyph(3, noise, rng)
        flipped += int((img != template).sum())
    rate = flipped / (n * 81)
    assert abs(rate - 0.05) < 0.01


def test_shift_zero_fills():
    img = glyphs.template(1)
    right = shift_image(img, 0, 1)
    assert np.array_equal(right[:, 1:], img[:, :-1])
    assert not right[:, 0].any()


def test_noiseless_rendering_invertible():
    # a lookup over noiseless renders recovers every label
    rng = np.random.default_rng(0)
    lookup = {render_glyph(k, NO_NOISE, rng).tobytes(): k for k in range(12)}
    assert len(lookup) == 12
    for k in range(12):
        assert lookup[glyphs.template(k).tobytes()] == k


# ---------------------------------------------------------------------------
# equation sampling
# ---------------------------------------------------------------------------


def test_sample_equation_minimum():
    class Forced:
        def __init__(self, values):
            self.values = iter(values)

        def integers(self, lo, hi):
            return next(self.values)

    assert sample_equation(3, Forced([1, 1])) == (1, 1, 2)
    # 999 + 1 overflows three digits and is rejected, then 10 + 20 is accepted
    assert sample_equation(3, Forced([999, 1, 10, 20])) == (10, 20, 30)


def test_sample_equation_bounds():
    rng = np.random.default_rng(123)
    for _ in range(10_000):
        a, b, c = sample_equation(3, rng)
        assert a >= 1 and b >= 1 and a + b == c
        assert c <= 999


def test_sample_requires_positive_digits():
    with pytest.raises(ConfigError):
        sample_equation(0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# bundle generation
# ---------------------------------------------------------------------------


def test_generate_chunk_schedule():
    bundle = generate_dataset(80, 10, 4, NO_NOISE, seed=7)
    assert bundle.chunk_sizes == [20, 40, 60, 80]
    assert len(bundle.train) == 80 and len(bundle.test) == 10


def test_generate_rejects_bad_chunking():
    with pytest.raises(ConfigError, match="divisible"):
        generate_dataset(10, 2, 3, NO_NOISE, seed=0)


def test_generate_deterministic(tmp_path):
    a = generate_dataset(30, 5, 3, NoiseConfig(), seed=9)
    b = generate_dataset(30, 5, 3, NoiseConfig(), seed=9)
    pa, pb = tmp_path / "a.tsv", tmp_path / "b.tsv"
    save_dataset(a, pa)
    save_dataset(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_generated_samples_are_valid_equations(tiny_bundle):
    for s in tiny_bundle.train + tiny_bundle.test:
        assert validate(s.labels).status == VALID
        assert 5 <= len(s) <= 11
        assert s.labels.count(10) == 1 and s.labels.count(11) == 1


def test_chunks_are_nested_prefixes(tiny_bundle):
    c1 = tiny_bundle.chunk(1)
    c2 = tiny_bundle.chunk(2)
    assert c2[: len(c1)] == c1


def test_sample_stream_independent_of_total():
    small = generate_dataset(10, 0, 1, NoiseConfig(), seed=4)
    large = generate_dataset(20, 4, 2, NoiseConfig(), seed=4)
    assert small.train == large.train[:10]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_round_trip(tmp_path, tiny_bundle):
    path = tmp_path / "data.tsv"
    save_dataset(tiny_bundle, path)
    assert load_dataset(path) == tiny_bundle


def test_truncated_file(tmp_path, tiny_bundle):
    path = tmp_path / "data.tsv"
    save_dataset(tiny_bundle, path)
    lines = path.read_text().splitlines(keepends=True)
    (tmp_path / "cut.tsv").write_text("".join(lines[:-3]))
    with pytest.raises(DataFormatError, match="truncated"):
        load_dataset(tmp_path / "cut.tsv")


def test_bad_pixel_value(tmp_path, tiny_bundle):
    path = tmp_path / "data.tsv"
    save_dataset(tiny_bundle, path)
    text = path.read_text()
    corrupted = text.replace("\t0", "\t2", 1)
    (tmp_path / "bad.tsv").write_text(corrupted)
    with pytest.raises(DataFormatError, match="sample 0.*pixel"):
        load_dataset(tmp_path / "bad.tsv")


def test_bad_header(tmp_path):
    path = tmp_path / "nope.tsv"
    path.write_text("#something else\n")
    with pytest.raises(DataFormatError, match="line 1"):
        load_dataset(path)


def test_invalid_gold_labels_rejected(tmp_path):
    path = tmp_path / "bad.tsv"
    pixels = "0" * (81 * 5)
    path.write_text(
        "#nester-dataset v1 seed=0 n=1,0 chunks=1\n" f"train\t1+1=3\t{pixels}\n"
    )
    with pytest.raises(DataFormatError, match="valid equation"):
        load_dataset(path)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16))
def test_make_sample_always_valid(seed):
    s = make_sample(3, NoiseConfig(), np.random.default_rng(seed))
    assert validate(s.labels).status == VALID
