"""Forward masking process and single-step reverse unmasking policies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import (
    MaskedSequence,
    categorical_index,
    choose_without_replacement,
    confidence,
)
from .models import DenoisingModel


@dataclass(frozen=True)
class NoiseSchedule:
    """Masking rate alpha(t): 0 at t=0, 1 at t=1, monotone nondecreasing."""

    kind: str = "linear"

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def alpha(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must be in [0, 1], got {t!r}")
        if self.kind == "linear":
            return float(t)
        return float(1.0 - math.cos(math.pi * t / 2.0))


@dataclass(frozen=True)
class UnmaskPolicy:
    """Which masked positions to commit on each step, and how to pick tokens.

    kinds:
      top_k -- the k highest-confidence masked positions (all if fewer).
      confidence_threshold -- every masked position at or above theta; if
        none qualify, the single best one, so each step makes progress.
      random -- k masked positions chosen uniformly.

    commit_mode "argmax" takes each position's most likely token; "sample"
    draws from its distribution.
    """

    kind: str
    k: int | None = None
    theta: float | None = None
    commit_mode: str = "argmax"

    def __post_init__(self) -> None:
        if self.kind in ("top_k", "random"):
            if self.k is None or self.k < 1:
                raise ValueError(f"{self.kind} policy requires k >= 1")
        elif self.kind == "confidence_threshold":
            if self.theta is None or not 0.0 < self.theta < 1.0:
                raise ValueError("confidence_threshold requires theta in (0, 1)")
        else:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.commit_mode not in ("argmax", "sample"):
            raise ValueError(f"unknown commit_mode {self.commit_mode!r}")

    @classmethod
    def top_k(cls, k: int, commit_mode: str = "argmax") -> "UnmaskPolicy":
        return cls(kind="top_k", k=k, commit_mode=commit_mode)

    @classmethod
    def confidence_threshold(cls, theta: float,
                             commit_mode: str = "argmax") -> "UnmaskPolicy":
        return cls(kind="confidence_threshold", theta=theta, commit_mode=commit_mode)

    @classmethod
    def random(cls, k: int, commit_mode: str = "argmax") -> "UnmaskPolicy":
        return cls(kind="random", k=k, commit_mode=commit_mode)


def forward_mask(x0: MaskedSequence, t: float, schedule: NoiseSchedule,
                 rng: np.random.Generator) -> MaskedSequence:
    """Mask each position of a clean sequence independently with rate alpha(t)."""
    if not x0.is_complete():
        raise ValueError("forward_mask input must contain no MASK tokens")
    rate = schedule.alpha(t)
    draws = rng.random(len(x0))
    toks = tuple(
        x0.vocab.mask_id if draws[i] < rate else tok
        for i, tok in enumerate(x0.tokens)
    )
    return MaskedSequence(x0.vocab, toks)


def select_positions(policy: UnmaskPolicy, masked: tuple[int, ...],
                     conf: dict[int, float], rng: np.random.Generator) -> list[int]:
    """Masked positions to commit this step, ascending. Ties break toward
    lower position index so equal seeds give identical runs."""
    if policy.kind == "top_k":
        ranked = sorted(masked, key=lambda i: (-conf[i], i))
        return sorted(ranked[: policy.k])
    if policy.kind == "confidence_threshold":
        chosen = [i for i in masked if conf[i] >= policy.theta]
        if not chosen:
            chosen = [min(masked, key=lambda i: (-conf[i], i))]
        return sorted(chosen)
    # random
    k = min(policy.k, len(masked))
    return sorted(choose_without_replacement(rng, masked, k))


def unmask_step(model: DenoisingModel, seq: MaskedSequence, policy: UnmaskPolicy,
                rng: np.random.Generator, provenance: Any = None, *,
                cycle: int = 0, role: str = "drafter") -> MaskedSequence:
    """One model forward pass plus the commitment of the selected positions.

    Commits in ascending position order. When given, `provenance` receives a
    record_decode(position, role, cycle, distribution) call per commit.
    """
    masked = seq.masked_positions()
    if not masked:
        raise ValueError("unmask_step requires at least one masked position")
    dists = model.predict(seq)
    if len(dists) != len(seq):
        raise ValueError(
            f"model returned {len(dists)} rows for a length-{len(seq)} sequence")

    conf = {i: confidence(dists.row(i)) for i in masked}
    selected = select_positions(policy, masked, conf, rng)

    assignments: dict[int, int] = {}
    for pos in selected:
        row = dists.row(pos)
        if policy.commit_mode == "argmax":
            tok = int(np.argmax(row))
        else:
            tok = categorical_index(rng, row)
        assignments[pos] = tok
        if provenance is not None:
            provenance.record_decode(pos, role=role, cycle=cycle, dist=row)
    return seq.with_assignments(assignments)
