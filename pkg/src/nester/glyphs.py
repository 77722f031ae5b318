"""Hand-designed 9x9 binary glyph templates for the 12-symbol alphabet.

Symbol ids: 0-9 are the digits, 10 is '+', 11 is '='. Each template is a
9x9 {0,1} bitmap drawn as a block of '.'/'#' rows below.
"""

from __future__ import annotations

import numpy as np

N_SYMBOLS = 12
PLUS = 10
EQUALS = 11
IMG_SIZE = 9

SYMBOL_CHARS = "0123456789+="

_TEMPLATE_ART = {
    0: """
        .........
        ...###...
        ..#...#..
        ..#...#..
        ..#...#..
        ..#...#..
        ..#...#..
        ...###...
        .........
        """,
    1: """
        .........
        ....#....
        ...##....
        ....#....
        ....#....
        ....#....
        ....#....
        ...###...
        .........
        """,
    2: """
        .........
        ...###...
        ..#...#..
        ......#..
        .....#...
        ....#....
        ...#.....
        ..#####..
        .........
        """,
    3: """
        .........
        ...###...
        ..#...#..
        ......#..
        ....##...
        ......#..
        ..#...#..
        ...###...
        .........
        """,
    4: """
        .........
        .....#...
        ....##...
        ...#.#...
        ..#..#...
        ..#####..
        .....#...
        .....#...
        .........
        """,
    5: """
        .........
        ..#####..
        ..#......
        ..####...
        ......#..
        ......#..
        ..#...#..
        ...###...
        .........
        """,
    6: """
        .........
        ...###...
        ..#......
        ..####...
        ..#...#..
        ..#...#..
        ..#...#..
        ...###...
        .........
        """,
    7: """
        .........
        ..#####..
        ......#..
        .....#...
        .....#...
        ....#....
        ....#....
        ....#....
        .........
        """,
    8: """
        .........
        ...###...
        ..#...#..
        ..#...#..
        ...###...
        ..#...#..
        ..#...#..
        ...###...
        .........
        """,
    9: """
        .........
        ...###...
        ..#...#..
        ..#...#..
        ...####..
        ......#..
        ......#..
        ...###...
        .........
        """,
    PLUS: """
        .........
        .........
        ....#....
        ....#....
        ..#####..
        ....#....
        ....#....
        .........
        .........
        """,
    EQUALS: """
        .........
        .........
        .........
        ..#####..
        .........
        ..#####..
        .........
        .........
        .........
        """,
}


def _parse_art(art: str) -> np.ndarray:
    rows = [line.strip() for line in art.strip().splitlines()]
    if len(rows) != IMG_SIZE or any(len(r) != IMG_SIZE for r in rows):
        raise ValueError("template art must be 9 rows of 9 characters")
    grid = np.array([[1 if ch == "#" else 0 for ch in row] for row in rows], dtype=np.uint8)
    return grid


TEMPLATES: np.ndarray = np.stack([_parse_art(_TEMPLATE_ART[k]) for k in range(N_SYMBOLS)])
TEMPLATES.setflags(write=False)


def template(symbol: int) -> np.ndarray:
    """Canonical noiseless bitmap for one symbol id."""
    if not 0 <= symbol < N_SYMBOLS:
        raise ValueError(f"invalid symbol id {symbol}; expected 0..{N_SYMBOLS - 1}")
    return TEMPLATES[symbol]


def labels_to_string(labels) -> str:
    return "".join(SYMBOL_CHARS[k] for k in labels)


def string_to_labels(text: str) -> tuple[int, ...]:
    out = []
    for ch in text:
        idx = SYMBOL_CHARS.find(ch)
        if idx < 0:
            raise ValueError(f"invalid symbol character {ch!r}")
        out.append(idx)
    return tuple(out)
