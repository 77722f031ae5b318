"""Synthetic valid-equation dataset: generation, chunking, serialization.

Every sample is a sequence of noisy 9x9 glyph bitmaps paired with the gold
symbol sequence of an equation ``a+b=c`` that actually holds. Generation is
a pure function of (config, seed); each sample owns an independent rng
stream keyed by its index, so disjoint samples may be generated
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import glyphs
from .errors import ConfigError, DataFormatError

FORMAT_HEADER = "#nester-dataset v1"


@dataclass(frozen=True)
class NoiseConfig:
    """Per-glyph corruption: independent pixel flips plus a small shift."""

    flip_prob: float = 0.02
    max_shift: int = 1

    def __post_init__(self):
        if not 0.0 <= self.flip_prob < 0.5:
            raise ConfigError(f"flip_prob must be in [0, 0.5), got {self.flip_prob}")
        if self.max_shift not in (0, 1):
            raise ConfigError(f"max_shift must be 0 or 1, got {self.max_shift}")


@dataclass
class EquationSample:
    images: np.ndarray  # (m, 9, 9) uint8
    labels: tuple[int, ...]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = tuple(int(k) for k in self.labels)
        m = len(self.labels)
        if self.images.shape != (m, glyphs.IMG_SIZE, glyphs.IMG_SIZE):
            raise ValueError(
                f"images shape {self.images.shape} inconsistent with {m} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EquationSample)
            and self.labels == other.labels
            and np.array_equal(self.images, other.images)
        )


@dataclass
class DatasetBundle:
    train: list[EquationSample]
    test: list[EquationSample]
    seed: int
    chunk_sizes: list[int]

    def chunk(self, k: int) -> list[EquationSample]:
        """Training prefix for 1-based chunk index k. Chunks are nested."""
        if not 1 <= k <= len(self.chunk_sizes):
            raise ConfigError(f"chunk index {k} out of range 1..{len(self.chunk_sizes)}")
        return self.train[: self.chunk_sizes[k - 1]]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DatasetBundle)
            and self.seed == other.seed
            and self.chunk_sizes == other.chunk_sizes
            and self.train == other.train
            and self.test == other.test
        )


def render_glyph(symbol: int, noise: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Render one symbol: shift the template up to max_shift pixels per axis,
    then flip each pixel independently with probability flip_prob."""
    img = glyphs.template(symbol).copy()
    if noise.max_shift > 0:
        dr = int(rng.integers(-noise.max_shift, noise.max_shift + 1))
        dc = int(rng.integers(-noise.max_shift, noise.max_shift + 1))
        img = shift_image(img, dr, dc)
    if noise.flip_prob > 0:
        flips = rng.random(img.shape) < noise.flip_prob
        img = np.where(flips, 1 - img, img).astype(np.uint8)
    return img


def shift_image(img: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Translate, zero-filling vacated cells."""
    out = np.zeros_like(img)
    src_r = slice(max(0, -dr), img.shape[0] - max(0, dr))
    src_c = slice(max(0, -dc), img.shape[1] - max(0, dc))
    dst_r = slice(max(0, dr), img.shape[0] - max(0, -dr))
    dst_c = slice(max(0, dc), img.shape[1] - max(0, -dc))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def sample_equation(max_digits: int, rng: np.random.Generator) -> tuple[int, int, int]:
    """Draw (a, b, a+b) by rejection so all three fit in max_digits digits."""
    if max_digits < 1:
        raise ConfigError(f"max_digits must be >= 1, got {max_digits}")
    hi = 10**max_digits - 1
    while True:
        a = int(rng.integers(1, hi + 1))
        b = int(rng.integers(1, hi + 1))
        if a + b <= hi:
            return a, b, a + b


def equation_labels(a: int, b: int, c: int) -> tuple[int, ...]:
    return glyphs.string_to_labels(f"{a}+{b}={c}")


def make_sample(
    max_digits: int, noise: NoiseConfig, rng: np.random.Generator
) -> EquationSample:
    a, b, c = sample_equation(max_digits, rng)
    labels = equation_labels(a, b, c)
    images = np.stack([render_glyph(k, noise, rng) for k in labels])
    return EquationSample(images=images, labels=labels)


def generate_dataset(
    n_train: int,
    n_test: int,
    n_chunks: int,
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
    max_digits: int = 3,
) -> DatasetBundle:
    if n_chunks < 1 or n_train % n_chunks != 0:
        raise ConfigError(
            f"n_train ({n_train}) must be divisible by n_chunks ({n_chunks})"
        )
    # Sample index keys the rng stream: sample i is the same no matter how
    # many other samples are requested around it.
    samples = [
        make_sample(max_digits, noise, np.random.default_rng([seed, i]))
        for i in range(n_train + n_test)
    ]
    step = n_train // n_chunks
    chunk_sizes = [step * k for k in range(1, n_chunks + 1)]
    return DatasetBundle(
        train=samples[:n_train],
        test=samples[n_train:],
        seed=seed,
        chunk_sizes=chunk_sizes,
    )


def save_dataset(bundle: DatasetBundle, path) -> None:
    lines = [
        f"{FORMAT_HEADER} seed={bundle.seed}"
        f" n={len(bundle.train)},{len(bundle.test)}"
        f" chunks={','.join(str(s) for s in bundle.chunk_sizes)}\n"
    ]
    for split, samples in (("train", bundle.train), ("test", bundle.test)):
        for s in samples:
            pixels = "".join("1" if v else "0" for v in s.images.reshape(-1))
            lines.append(f"{split}\t{glyphs.labels_to_string(s.labels)}\t{pixels}\n")
    with open(path, "w") as fh:
        fh.writelines(lines)


def load_dataset(path) -> DatasetBundle:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(FORMAT_HEADER):
            raise DataFormatError(
                f"{path}: line 1: expected header {FORMAT_HEADER!r}, got {header!r}"
            )
        meta = _parse_header(header, path)
        train: list[EquationSample] = []
        test: list[EquationSample] = []
        for lineno, line in enumerate(fh, start=2):
            sample_idx = len(train) + len(test)
            split, sample = _parse_record(line.rstrip("\n"), path, lineno, sample_idx)
            (train if split == "train" else test).append(sample)
    if len(train) != meta["n_train"] or len(test) != meta["n_test"]:
        raise DataFormatError(
            f"{path}: truncated: header promises {meta['n_train']}+{meta['n_test']} "
            f"records, found {len(train)}+{len(test)}"
        )
    return DatasetBundle(
        train=train, test=test, seed=meta["seed"], chunk_sizes=meta["chunks"]
    )


def _parse_header(header: str, path) -> dict:
    fields = dict(
        part.split("=", 1) for part in header.split()[2:] if "=" in part
    )
    try:
        n_train, n_test = (int(v) for v in fields["n"].split(","))
        return {
            "seed": int(fields["seed"]),
            "n_train": n_train,
            "n_test": n_test,
            "chunks": [int(v) for v in fields["chunks"].split(",")],
        }
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: line 1: malformed header: {exc}") from exc


def _parse_record(line: str, path, lineno: int, sample_idx: int):
    parts = line.split("\t")
    if len(parts) != 3:
        raise DataFormatError(
            f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(parts)}"
        )
    split, label_str, pixel_str = parts
    if split not in ("train", "test"):
        raise DataFormatError(f"{path}: line {lineno}: unknown split {split!r}")
    try:
        labels = glyphs.string_to_labels(label_str)
    except ValueError as exc:
        raise DataFormatError(f"{path}: line {lineno}: sample {sample_idx}: {exc}") from exc
    m = len(labels)
    if len(pixel_str) != 81 * m:
        raise DataFormatError(
            f"{path}: line {lineno}: sample {sample_idx}: expected {81 * m} pixels, "
            f"got {len(pixel_str)}"
        )
    bad = set(pixel_str) - {"0", "1"}
    if bad:
        raise DataFormatError(
            f"{path}: line {lineno}: sample {sample_idx}: invalid pixel value "
            f"{sorted(bad)[0]!r}"
        )
    images = np.frombuffer(pixel_str.encode(), dtype=np.uint8) - ord("0")
    images = images.reshape(m, glyphs.IMG_SIZE, glyphs.IMG_SIZE)
    # Gold labels must themselves be valid equations.
    from .solver import validate, VALID

    if validate(labels).status != VALID:
        raise DataFormatError(
            f"{path}: line {lineno}: sample {sample_idx}: labels {label_str!r} "
            f"do not form a valid equation"
        )
    return split, EquationSample(images=images, labels=labels)
