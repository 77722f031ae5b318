"""Exact MAP and loss-augmented inference over valid equations.

The output space is every symbol sequence matching the template
``<digits of a> + <digits of b> = <digits of c>`` whose decoded integers
satisfy a + b = c (leading zeros allowed). Inference enumerates the digit
count splits (len_a, len_b, len_c), and within a split runs a dynamic
program over digit columns, least significant first, whose state is the
addition carry plus the current column's digits. Ties within 1e-9 of the
optimum are broken toward the lexicographically smallest symbol sequence
via a greedy per-position descent, which is also what the brute-force
oracle does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InfeasibleError, SearchSpaceError
from .glyphs import N_SYMBOLS, PLUS, EQUALS

VALID = "valid"
SYNTACTIC = "syntactic_error"
SEMANTIC = "semantic_error"

TIE_TOL = 1e-9
BRUTE_FORCE_CAP = 2_000_000


@dataclass(frozen=True)
class Alphabet:
    """Mapping from digit values and operators to symbol ids.

    The canonical alphabet is the identity (digit d has id d); a permuted
    table exercises the relabeling invariance of the solvers.
    """

    digit_ids: tuple[int, ...] = tuple(range(10))
    plus_id: int = PLUS
    equals_id: int = EQUALS

    def __post_init__(self):
        ids = set(self.digit_ids) | {self.plus_id, self.equals_id}
        if len(self.digit_ids) != 10 or len(ids) != 12 or ids != set(range(N_SYMBOLS)):
            raise ValueError("alphabet must assign 12 distinct ids")

    def digit_value(self, symbol: int) -> Optional[int]:
        try:
            return self.digit_ids.index(symbol)
        except ValueError:
            return None


CANONICAL = Alphabet()


@dataclass
class ChainScore:
    """Compiled scores: total(y) = constant + sum_e unary[e, y_e]
    + sum_e pairwise[y_e, y_{e+1}]."""

    unary: np.ndarray  # (m, 12)
    pairwise: np.ndarray  # (12, 12)
    constant: float = 0.0

    def __post_init__(self):
        self.unary = np.asarray(self.unary, dtype=np.float64)
        self.pairwise = np.asarray(self.pairwise, dtype=np.float64)
        if self.unary.ndim != 2 or self.unary.shape[1] != N_SYMBOLS:
            raise ValueError(f"unary must be (m, 12), got {self.unary.shape}")
        if self.pairwise.shape != (N_SYMBOLS, N_SYMBOLS):
            raise ValueError(f"pairwise must be (12, 12), got {self.pairwise.shape}")

    @property
    def m(self) -> int:
        return self.unary.shape[0]

    def evaluate(self, y) -> float:
        y = np.asarray(y, dtype=np.intp)
        if y.shape != (self.m,):
            raise ValueError(f"sequence length {y.shape} does not match m={self.m}")
        total = self.constant + float(self.unary[np.arange(self.m), y].sum())
        if self.m > 1:
            total += float(self.pairwise[y[:-1], y[1:]].sum())
        return total


@dataclass(frozen=True)
class Split:
    """Digit counts of the three numbers; fixes both operator positions."""

    len_a: int
    len_b: int
    len_c: int

    @property
    def p_plus(self) -> int:
        return self.len_a

    @property
    def p_eq(self) -> int:
        return self.len_a + self.len_b + 1

    @property
    def m(self) -> int:
        return self.len_a + self.len_b + self.len_c + 2

    def lengths(self) -> tuple[int, int, int]:
        return (self.len_a, self.len_b, self.len_c)

    def digit_position(self, number: int, col: int) -> int:
        """Sequence position of digit column `col` (least significant = 0)
        of number 0 (a), 1 (b) or 2 (c)."""
        if number == 0:
            return self.len_a - 1 - col
        if number == 1:
            return self.len_a + self.len_b - col
        return self.m - 1 - col


@dataclass(frozen=True)
class Validity:
    status: str
    rule: Optional[str] = None


def enumerate_splits(m: int, max_digits: int = 3):
    out = []
    for la in range(1, max_digits + 1):
        for lb in range(1, max_digits + 1):
            lc = m - 2 - la - lb
            if 1 <= lc <= max_digits:
                out.append(Split(la, lb, lc))
    return out


def decode_numbers(
    y, max_digits: int = 3, alphabet: Alphabet = CANONICAL
) -> tuple[int, int, int]:
    """Decode a symbol sequence into (a, b, c), or raise ValueError carrying
    the first violated template rule."""
    y = [int(k) for k in y]
    for k in y:
        if not 0 <= k < N_SYMBOLS:
            raise ValueError(f"invalid symbol id {k}")
    plus_at = [i for i, k in enumerate(y) if k == alphabet.plus_id]
    eq_at = [i for i, k in enumerate(y) if k == alphabet.equals_id]
    if len(plus_at) != 1:
        raise ValueError(f"expected exactly one '+', found {len(plus_at)}")
    if len(eq_at) != 1:
        raise ValueError(f"expected exactly one '=', found {len(eq_at)}")
    p, q = plus_at[0], eq_at[0]
    if p > q:
        raise ValueError("'+' must come before '='")
    segments = (y[:p], y[p + 1 : q], y[q + 1 :])
    for name, seg in zip("abc", segments):
        if len(seg) == 0:
            raise ValueError(f"number {name} has no digits")
        if len(seg) > max_digits:
            raise ValueError(f"number {name} has {len(seg)} digits, max {max_digits}")
    values = []
    for seg in segments:
        v = 0
        for k in seg:
            d = alphabet.digit_value(k)
            assert d is not None  # operators were located above
            v = 10 * v + d
        values.append(v)
    return tuple(values)


def validate(y, max_digits: int = 3, alphabet: Alphabet = CANONICAL) -> Validity:
    try:
        a, b, c = decode_numbers(y, max_digits, alphabet)
    except ValueError as exc:
        return Validity(SYNTACTIC, str(exc))
    if a + b != c:
        return Validity(SEMANTIC, f"{a}+{b} != {c}")
    return Validity(VALID)


def compile_chain(weights, x, net_out=None, mode: str = "hard", gold=None) -> ChainScore:
    """Assemble per-position and pairwise scores from the structured weights.

    net_out is the per-glyph network output: an int sequence of predictions
    (hard mode) or an (m, 12) row-stochastic matrix (soft mode). With
    net_out=None the refinement and distance terms are omitted, which
    matches a predictor trained without network input. Passing gold adds
    the Hamming loss augmentation used during training.
    """
    x = np.asarray(x)
    m = x.shape[0]
    x_flat = x.reshape(m, -1).astype(np.float64)
    if x_flat.shape[1] != weights.emission.shape[0]:
        raise ValueError(f"image size {x_flat.shape[1]} does not match weights")
    unary = x_flat @ weights.emission
    if net_out is not None:
        disagree = _disagreement(net_out, m, mode)
        unary = unary + (x_flat @ weights.refinement) * disagree
        unary = unary + weights.delta * disagree
    if gold is not None:
        gold = np.asarray(gold, dtype=np.intp)
        if gold.shape != (m,):
            raise ValueError("gold length does not match input")
        aug = np.ones((m, N_SYMBOLS))
        aug[np.arange(m), gold] = 0.0
        unary = unary + aug
    return ChainScore(unary=unary, pairwise=weights.transition.copy(), constant=0.0)


def _disagreement(net_out, m: int, mode: str) -> np.ndarray:
    """(m, 12) matrix whose (e, k) entry scores 'output k overrides the
    network at position e': an indicator in hard mode, 1 - P in soft mode."""
    if mode == "hard":
        yhat = np.asarray(net_out, dtype=np.intp)
        if yhat.shape != (m,):
            raise ValueError(f"expected {m} network predictions, got {yhat.shape}")
        out = np.ones((m, N_SYMBOLS))
        out[np.arange(m), yhat] = 0.0
        return out
    if mode == "soft":
        probs = np.asarray(net_out, dtype=np.float64)
        if probs.shape != (m, N_SYMBOLS):
            raise ValueError(f"expected ({m}, 12) probabilities, got {probs.shape}")
        rowsum = probs.sum(axis=1)
        if np.any(np.abs(rowsum - 1.0) > 1e-6):
            raise ValueError("probability rows must sum to 1 within 1e-6")
        return 1.0 - probs
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Exact MAP by split enumeration + carry-digit dynamic program
# ---------------------------------------------------------------------------


@dataclass
class _SplitProblem:
    """One split's DP workspace for a fixed chain.

    Columns run least significant first; the carry at every column boundary
    is enumerated externally (at most 2^(L-1) vectors for L columns), which
    makes each column's digit triple a local constraint. Column candidate
    sets are memoized per clamp so the tie-breaking descent stays cheap.
    """

    split: Split
    chain: ChainScore
    alphabet: Alphabet

    def __post_init__(self):
        la, lb, lc = self.split.lengths()
        self.n_cols = max(la, lb, lc)
        # clamps[number][col]: fixed digit value or None
        self.clamps = [[None] * self.n_cols for _ in range(3)]
        self._cand_memo: dict = {}
        # operator unaries are shared by every assignment of this split
        U = self.chain.unary
        self.const = float(
            self.chain.constant
            + U[self.split.p_plus, self.alphabet.plus_id]
            + U[self.split.p_eq, self.alphabet.equals_id]
        )

    def clamp(self, number: int, col: int, value: int):
        self.clamps[number][col] = value

    def best(self) -> float:
        """Exact max of the chain score over this split's valid assignments,
        honoring current clamps. -inf when infeasible."""
        best = -np.inf
        for carries in self._carry_vectors():
            fwd = self._forward(carries)
            if fwd is not None:
                best = max(best, float(fwd[-1][0].max()))
        return best + self.const  # -inf stays -inf

    def best_by_digit(self, number: int, col: int) -> np.ndarray:
        """For each digit value at (number, col): the exact max total among
        assignments using it, honoring current clamps. One forward-backward
        pass per carry vector; entries of infeasible digits are -inf."""
        out = np.full(10, -np.inf)
        for carries in self._carry_vectors():
            fwd = self._forward(carries)
            if fwd is None:
                continue
            through = self._through(fwd, col)
            digits = fwd[col][1][:, number]
            np.maximum.at(out, digits, through)
        return out + self.const

    def _carry_vectors(self):
        # carry into column 0 and out of the last column are both 0
        n_internal = self.n_cols - 1
        for bits in range(1 << n_internal):
            yield (0,) + tuple((bits >> i) & 1 for i in range(n_internal)) + (0,)

    def _forward(self, carries):
        """Per column: (best-prefix scores, digit triples, incoming transition
        matrix, the column's own scores). None when some column has no
        feasible triple."""
        out = []
        prev_scores = None
        prev_digits = None
        for col in range(self.n_cols):
            cand = self._candidates(col, carries[col], carries[col + 1])
            if cand is None:
                return None
            own, digits = cand
            trans = None
            scores = own
            if prev_scores is not None:
                trans = self._between(prev_digits, digits, col)
                scores = own + (prev_scores[:, None] + trans).max(axis=0)
            out.append((scores, digits, trans, own))
            prev_scores, prev_digits = scores, digits
        return out

    def _through(self, fwd, col: int) -> np.ndarray:
        """Best total through each candidate of the given column: forward
        prefix plus the best completion over the remaining columns."""
        g = np.zeros(len(fwd[-1][0]))
        for later in range(self.n_cols - 1, col, -1):
            _, _, trans, own = fwd[later]
            g = (trans + (own + g)[None, :]).max(axis=1)
        return fwd[col][0] + g

    def _candidates(self, col: int, c_in: int, c_out: int):
        key = (
            col, c_in, c_out,
            self.clamps[0][col], self.clamps[1][col], self.clamps[2][col],
        )
        if key not in self._cand_memo:
            self._cand_memo[key] = self._build_candidates(col, c_in, c_out)
        return self._cand_memo[key]

    def _build_candidates(self, col: int, c_in: int, c_out: int):
        """Enumerate digit triples satisfying da + db + c_in = dc + 10*c_out
        (absent digits contribute 0), with their unary + boundary scores."""
        la, lb, lc = self.split.lengths()
        va = _domain(self.clamps[0][col]) if col < la else np.array([0])
        vb = _domain(self.clamps[1][col]) if col < lb else np.array([0])
        grid_a = np.repeat(va, len(vb))
        grid_b = np.tile(vb, len(va))
        dc = grid_a + grid_b + c_in - 10 * c_out
        if col < lc:
            clamp_c = self.clamps[2][col]
            ok = (dc >= 0) & (dc <= 9) if clamp_c is None else dc == clamp_c
        else:
            ok = dc == 0
        if not ok.any():
            return None
        grid_a, grid_b, dc = grid_a[ok], grid_b[ok], dc[ok]

        U, T = self.chain.unary, self.chain.pairwise
        ids = np.asarray(self.alphabet.digit_ids)
        id_a = ids[grid_a]
        id_b = ids[grid_b]
        id_c = ids[dc]
        scores = np.zeros(len(grid_a))
        if col < la:
            scores += U[self.split.digit_position(0, col), id_a]
        if col < lb:
            scores += U[self.split.digit_position(1, col), id_b]
            if col == lb - 1:  # '+' precedes b's most significant digit
                scores += T[self.alphabet.plus_id, id_b]
        if col < lc:
            scores += U[self.split.digit_position(2, col), id_c]
            if col == lc - 1:  # '=' precedes c's most significant digit
                scores += T[self.alphabet.equals_id, id_c]
        if col == 0:
            # least significant digits of a and b are followed by the operators
            scores += T[id_a, self.alphabet.plus_id]
            scores += T[id_b, self.alphabet.equals_id]

        digits = np.stack(
            [
                np.where(col < la, grid_a, -1),
                np.where(col < lb, grid_b, -1),
                np.where(col < lc, dc, -1),
            ],
            axis=1,
        )
        return scores, digits

    def _between(self, prev_digits, digits, col: int) -> np.ndarray:
        """Transition scores between column col-1 and col: within each number,
        the digit at the higher column immediately precedes the lower one."""
        la, lb, lc = self.split.lengths()
        T = self.chain.pairwise
        ids = np.asarray(self.alphabet.digit_ids)
        out = np.zeros((len(prev_digits), len(digits)))
        for number, ln in enumerate((la, lb, lc)):
            if col < ln:  # digit exists at both col-1 and col
                hi = ids[digits[:, number]]
                lo = ids[prev_digits[:, number]]
                out += T[hi[None, :], lo[:, None]]
        return out


def _domain(clamp) -> np.ndarray:
    return np.arange(10) if clamp is None else np.array([clamp])


def solve_map(
    chain: ChainScore,
    m: Optional[int] = None,
    max_digits: int = 3,
    alphabet: Alphabet = CANONICAL,
) -> tuple[tuple[int, ...], float]:
    """Exact argmax of the chain score over all valid equations of length m.

    Returns (sequence, score). Among sequences scoring within 1e-9 of the
    optimum, returns the lexicographically smallest.
    """
    if m is None:
        m = chain.m
    if m != chain.m:
        raise ValueError(f"m={m} does not match chain rows {chain.m}")
    splits = enumerate_splits(m, max_digits)
    if not splits:
        raise InfeasibleError(
            f"no valid equation of length {m} with max_digits={max_digits}"
        )
    problems = [_SplitProblem(s, chain, alphabet) for s in splits]
    bests = [p.best() for p in problems]
    s_star = max(bests)
    if s_star == -np.inf:
        raise InfeasibleError(f"no feasible digit assignment for length {m}")
    threshold = s_star - TIE_TOL
    best_y = None
    for p, b in zip(problems, bests):
        if b < threshold:
            continue
        y = _lex_descent(p, threshold)
        if y is not None and (best_y is None or y < best_y):
            best_y = y
    assert best_y is not None
    return best_y, chain.evaluate(best_y)


def _lex_descent(problem: _SplitProblem, threshold: float):
    """Lexicographically smallest sequence of this split scoring at or above
    the threshold. Digits of a then b are fixed greedily in reading order
    (most significant first); c's digits are then forced by the column sums.
    Greedy is exact because best_by_digit bounds every completion."""
    split, alphabet = problem.split, problem.alphabet
    # try digit values in symbol-id order so the greedy choice is lexicographic
    value_order = sorted(range(10), key=lambda v: alphabet.digit_ids[v])
    for number, length in ((0, split.len_a), (1, split.len_b)):
        for col in reversed(range(length)):
            options = problem.best_by_digit(number, col)
            chosen = next((v for v in value_order if options[v] >= threshold), None)
            if chosen is None:
                return None  # split cannot reach the threshold
            problem.clamp(number, col, chosen)
    a = sum(problem.clamps[0][c] * 10**c for c in range(split.len_a))
    b = sum(problem.clamps[1][c] * 10**c for c in range(split.len_b))
    c_digits = [(a + b) // 10**j % 10 for j in range(split.len_c)]
    seq = (
        [alphabet.digit_ids[problem.clamps[0][c]] for c in reversed(range(split.len_a))]
        + [alphabet.plus_id]
        + [alphabet.digit_ids[problem.clamps[1][c]] for c in reversed(range(split.len_b))]
        + [alphabet.equals_id]
        + [alphabet.digit_ids[d] for d in reversed(c_digits)]
    )
    return tuple(seq)


def solve_loss_augmented(
    weights,
    x,
    net_out,
    gold,
    mode: str = "hard",
    max_digits: int = 3,
    alphabet: Alphabet = CANONICAL,
) -> tuple[tuple[int, ...], float]:
    """Most violating rival: argmax over valid y of Hamming(gold, y) + score(y).

    The rival's augmented score is always >= the gold's, since gold is itself
    a feasible sequence.
    """
    chain = compile_chain(weights, x, net_out, mode=mode, gold=gold)
    return solve_map(chain, max_digits=max_digits, alphabet=alphabet)


def brute_force_map(
    chain: ChainScore,
    m: Optional[int] = None,
    max_digits: int = 3,
    alphabet: Alphabet = CANONICAL,
    cap: int = BRUTE_FORCE_CAP,
) -> tuple[tuple[int, ...], float]:
    """Exhaustive oracle: enumerate every valid equation, same tie rule as
    solve_map. Refuses when the a x b enumeration exceeds the cap."""
    if m is None:
        m = chain.m
    if m != chain.m:
        raise ValueError(f"m={m} does not match chain rows {chain.m}")
    splits = enumerate_splits(m, max_digits)
    if not splits:
        raise InfeasibleError(
            f"no valid equation of length {m} with max_digits={max_digits}"
        )
    total = sum(10 ** (s.len_a + s.len_b) for s in splits)
    if total > cap:
        raise SearchSpaceError(
            f"brute force would enumerate {total} assignments (cap {cap})"
        )
    best_score = -np.inf
    scored: list[tuple[float, np.ndarray]] = []
    for split in splits:
        seqs = _enumerate_split(split, alphabet)
        if len(seqs) == 0:
            continue
        scores = chain.unary[np.arange(m)[None, :], seqs].sum(axis=1)
        scores += chain.pairwise[seqs[:, :-1], seqs[:, 1:]].sum(axis=1)
        scores += chain.constant
        scored.append((scores, seqs))
        best_score = max(best_score, float(scores.max()))
    best_y = None
    for scores, seqs in scored:
        near = seqs[scores >= best_score - TIE_TOL]
        if len(near) == 0:
            continue
        order = np.lexsort(near.T[::-1])  # lexicographic by leftmost position
        y = tuple(int(v) for v in near[order[0]])
        if best_y is None or y < best_y:
            best_y = y
    assert best_y is not None
    return best_y, chain.evaluate(best_y)


def _enumerate_split(split: Split, alphabet: Alphabet) -> np.ndarray:
    """All valid sequences of one split as an int array (n, m): every (a, b)
    digit string pair whose sum fits in len_c digits, c forced to a + b."""
    la, lb, lc = split.lengths()
    a_vals = np.arange(10**la)
    b_vals = np.arange(10**lb)
    A = np.repeat(a_vals, len(b_vals))
    B = np.tile(b_vals, len(a_vals))
    C = A + B
    keep = C < 10**lc
    A, B, C = A[keep], B[keep], C[keep]
    ids = np.asarray(alphabet.digit_ids)
    cols = []
    for j in reversed(range(la)):
        cols.append(ids[A // 10**j % 10])
    cols.append(np.full(len(A), alphabet.plus_id))
    for j in reversed(range(lb)):
        cols.append(ids[B // 10**j % 10])
    cols.append(np.full(len(A), alphabet.equals_id))
    for j in reversed(range(lc)):
        cols.append(ids[C // 10**j % 10])
    return np.stack(cols, axis=1).astype(np.intp)
