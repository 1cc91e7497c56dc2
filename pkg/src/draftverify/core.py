"""Vocabulary, sequence, and distribution primitives shared by every other module.

All probability math is float64 in linear space; desk-scale vocabularies do
not need log-space representations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

# Floor applied to the q side inside kl_divergence so zero verifier entries
# keep the divergence finite without perturbing nonzero comparisons.
KL_EPS = 1e-12

# Tolerance for "sums to one" distribution checks.
PROB_TOL = 1e-9


@dataclass(frozen=True)
class VocabSpec:
    """Alphabet of `size` real tokens; id `size` itself is the MASK sentinel."""

    size: int

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError(f"vocab size must be at least 2, got {self.size}")

    @property
    def mask_id(self) -> int:
        return self.size

    def contains(self, token: int) -> bool:
        return 0 <= token < self.size


@dataclass(frozen=True)
class MaskedSequence:
    """Fixed-length token buffer whose entries are real token ids or MASK.

    Instances are immutable; edits return new sequences. The prompt/answer
    split and any decode bookkeeping live elsewhere.
    """

    vocab: VocabSpec
    tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        toks = tuple(int(t) for t in self.tokens)
        object.__setattr__(self, "tokens", toks)
        if len(toks) < 1:
            raise ValueError("sequence length must be at least 1")
        mask = self.vocab.mask_id
        for i, t in enumerate(toks):
            if t != mask and not self.vocab.contains(t):
                raise ValueError(f"token {t} at position {i} outside vocabulary")

    @classmethod
    def fully_masked(cls, vocab: VocabSpec, length: int,
                     prompt: Sequence[int] = ()) -> "MaskedSequence":
        """All-MASK sequence of `length` with an optional clean prefix."""
        prompt = tuple(int(t) for t in prompt)
        if len(prompt) >= length:
            raise ValueError(
                f"prompt length {len(prompt)} must be < sequence length {length}")
        return cls(vocab, prompt + (vocab.mask_id,) * (length - len(prompt)))

    def __len__(self) -> int:
        return len(self.tokens)

    def masked_positions(self) -> tuple[int, ...]:
        mask = self.vocab.mask_id
        return tuple(i for i, t in enumerate(self.tokens) if t == mask)

    def num_masked(self) -> int:
        return sum(1 for t in self.tokens if t == self.vocab.mask_id)

    def is_complete(self) -> bool:
        return self.num_masked() == 0

    def with_assignments(self, assignments: Mapping[int, int]) -> "MaskedSequence":
        """Commit tokens at currently masked positions; never overwrites."""
        toks = list(self.tokens)
        mask = self.vocab.mask_id
        for pos, tok in assignments.items():
            if toks[pos] != mask:
                raise ValueError(f"position {pos} is already unmasked")
            if not self.vocab.contains(tok):
                raise ValueError(f"cannot commit non-real token {tok}")
            toks[pos] = int(tok)
        return MaskedSequence(self.vocab, tuple(toks))

    def with_remasked(self, positions: Iterable[int]) -> "MaskedSequence":
        """Return MASK to the given currently unmasked positions."""
        toks = list(self.tokens)
        mask = self.vocab.mask_id
        for pos in positions:
            if toks[pos] == mask:
                raise ValueError(f"position {pos} is already masked")
            toks[pos] = mask
        return MaskedSequence(self.vocab, tuple(toks))


def masked_positions(seq: MaskedSequence) -> tuple[int, ...]:
    """Indices carrying the MASK sentinel, ascending."""
    return seq.masked_positions()


def as_distribution(probs: Sequence[float] | np.ndarray,
                    size: int | None = None) -> np.ndarray:
    """Validate a categorical over the real vocabulary and return it as float64.

    MASK carries no probability mass: valid vectors have exactly `size`
    entries, all nonnegative, summing to one within PROB_TOL.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"distribution must be 1-D, got shape {p.shape}")
    if size is not None and p.shape[0] != size:
        raise ValueError(f"distribution has {p.shape[0]} entries, expected {size}")
    if np.any(p < 0):
        raise ValueError("distribution has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise ValueError(f"distribution sums to {total!r}, not 1")
    return p


def uniform_distribution(size: int) -> np.ndarray:
    return np.full(size, 1.0 / size, dtype=np.float64)


@dataclass(frozen=True)
class PositionDistributions:
    """One categorical over the real vocabulary per sequence position.

    Rows cover every position, including already unmasked ones (those rows
    hold the model's leave-one-out beliefs, used by verification).
    """

    probs: np.ndarray  # (length, vocab_size) float64

    def __post_init__(self) -> None:
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"expected a (length, vocab) array, got shape {arr.shape}")
        if np.any(arr < 0):
            raise ValueError("per-position distribution has negative entries")
        sums = arr.sum(axis=1)
        bad = np.nonzero(np.abs(sums - 1.0) > PROB_TOL)[0]
        if bad.size:
            raise ValueError(
                f"row {int(bad[0])} sums to {float(sums[bad[0]])!r}, not 1")
        arr = np.array(arr, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    @classmethod
    def uniform(cls, length: int, size: int) -> "PositionDistributions":
        return cls(np.full((length, size), 1.0 / size, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.probs.shape[0])

    @property
    def vocab_size(self) -> int:
        return int(self.probs.shape[1])

    def row(self, position: int) -> np.ndarray:
        return self.probs[position]


def kl_divergence(p: np.ndarray | Sequence[float],
                  q: np.ndarray | Sequence[float]) -> float:
    """KL(p || q) with zero p-terms contributing exactly 0 and q floored at KL_EPS.

    Clamped at >= 0 so float cancellation never reports a negative divergence.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    support = p > 0
    if not np.any(support):
        return 0.0
    ps = p[support]
    qs = np.maximum(q[support], KL_EPS)
    value = float(np.sum(ps * np.log(ps / qs)))
    return max(value, 0.0)


def confidence(p: np.ndarray | Sequence[float]) -> float:
    """Largest single-token probability; always >= 1/size for a valid input."""
    return float(np.max(np.asarray(p, dtype=np.float64)))


def normalize_remask_weights(divergences: Mapping[int, float]) -> dict[int, float]:
    """Scale nonnegative per-position divergences so they sum to one.

    An all-zero input means drafter and verifier agree everywhere, so there
    are no remask candidates: the result is then empty rather than uniform.
    """
    for pos, value in divergences.items():
        if value < 0:
            raise ValueError(f"negative divergence {value!r} at position {pos}")
    total = float(sum(divergences.values()))
    if total <= 0.0:
        return {}
    return {pos: float(value) / total for pos, value in divergences.items()}


def categorical_index(rng: np.random.Generator,
                      weights: np.ndarray | Sequence[float]) -> int:
    """Draw an index proportional to `weights` using one rng.random() call.

    Only Generator.random() is consumed anywhere in this package, which keeps
    seeded streams maximally stable across numpy releases.
    """
    w = np.asarray(weights, dtype=np.float64)
    total = float(w.sum())
    if total <= 0.0:
        raise ValueError("categorical draw needs positive total weight")
    r = rng.random() * total
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, r, side="right"))
    return min(idx, w.shape[0] - 1)


def choose_without_replacement(rng: np.random.Generator,
                               population: Sequence[int], k: int) -> list[int]:
    """k distinct uniform picks from `population`, one rng.random() per pick."""
    pool = list(population)
    if not 0 <= k <= len(pool):
        raise ValueError(f"cannot choose {k} items from {len(pool)}")
    picked: list[int] = []
    for _ in range(k):
        idx = min(int(rng.random() * len(pool)), len(pool) - 1)
        picked.append(pool.pop(idx))
    return picked
