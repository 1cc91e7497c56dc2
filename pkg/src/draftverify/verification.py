"""Verification algorithms: decide which drafter-decoded tokens to remask.

Three families: trust (accept everything), divergence between drafter and
verifier beliefs (threshold or proportional draw), and verifier-side
confidence (threshold or per-position Bernoulli).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import math

import numpy as np

from .core import (
    MaskedSequence,
    PositionDistributions,
    categorical_index,
    confidence,
    kl_divergence,
    normalize_remask_weights,
)

ALGORITHMS = ("trust", "kl_threshold", "kl_proportional",
              "conf_threshold", "conf_probabilistic")


@dataclass(frozen=True)
class VerificationConfig:
    """Algorithm choice plus its hyperparameters.

    `budget` is the number of proportional-remask draws; None means
    max(1, ceil(0.1 * scope size)), and 1 reproduces a single draw from the
    normalized-divergence categorical. `drafter_dist_source` picks between
    the decode-time distributions stored in provenance (free) and a fresh
    drafter pass at verification time (one extra drafter call per cycle).
    """

    algorithm: str
    tau_kl: float | None = None
    tau_conf: float | None = None
    budget: int | None = None
    drafter_dist_source: str = "stored"
    scope: str = "current_cycle"

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown verification algorithm {self.algorithm!r}")
        if self.algorithm == "kl_threshold" and (self.tau_kl is None or self.tau_kl <= 0):
            raise ValueError("kl_threshold requires tau_kl > 0")
        if self.algorithm == "kl_proportional":
            if self.budget is not None and self.budget < 1:
                raise ValueError("budget must be >= 1")
        if self.algorithm == "conf_threshold":
            if self.tau_conf is None or not 0.0 < self.tau_conf < 1.0:
                raise ValueError("conf_threshold requires tau_conf in (0, 1)")
        if self.drafter_dist_source not in ("stored", "fresh"):
            raise ValueError(f"unknown drafter_dist_source {self.drafter_dist_source!r}")
        if self.scope not in ("current_cycle", "all_drafted"):
            raise ValueError(f"unknown scope {self.scope!r}")

    @property
    def needs_drafter_dists(self) -> bool:
        return self.algorithm in ("kl_threshold", "kl_proportional")

    def effective_budget(self, scope_size: int) -> int:
        if self.budget is not None:
            return self.budget
        return max(1, math.ceil(0.1 * scope_size))


@dataclass(frozen=True)
class PositionDiagnostic:
    """Score the decision was based on (KL or confidence) and the decision."""

    score: float
    remasked: bool


@dataclass(frozen=True)
class VerificationOutcome:
    verified_seq: MaskedSequence
    remasked: frozenset[int]
    diagnostics: dict[int, PositionDiagnostic] = field(default_factory=dict)


def _check_scope(seq: MaskedSequence, scope_positions: Iterable[int]) -> list[int]:
    scope = sorted(int(i) for i in scope_positions)
    mask = seq.vocab.mask_id
    for pos in scope:
        if seq.tokens[pos] == mask:
            raise ValueError(f"scope position {pos} is masked")
    return scope


def _apply(seq: MaskedSequence, remasked: Iterable[int],
           diagnostics: dict[int, PositionDiagnostic]) -> VerificationOutcome:
    remasked = frozenset(remasked)
    verified = seq.with_remasked(sorted(remasked)) if remasked else seq
    return VerificationOutcome(verified, remasked, diagnostics)


def verify_trust(seq: MaskedSequence) -> VerificationOutcome:
    """Accept the drafted sequence unchanged; costs no verifier pass."""
    return VerificationOutcome(seq, frozenset(), {})


def verify_kl(seq: MaskedSequence, drafter_dists: PositionDistributions,
              verifier_dists: PositionDistributions, scope_positions: Iterable[int],
              cfg: VerificationConfig, rng: np.random.Generator) -> VerificationOutcome:
    """Remask where drafter and verifier beliefs diverge.

    kl_threshold remasks every scope position whose divergence exceeds
    tau_kl. kl_proportional normalizes the divergences into a categorical
    and takes min(budget, #positive-weight positions) distinct positions by
    successive draws without replacement.
    """
    scope = _check_scope(seq, scope_positions)
    divergences = {
        i: kl_divergence(drafter_dists.row(i), verifier_dists.row(i)) for i in scope
    }

    if cfg.algorithm == "kl_threshold":
        remasked = {i for i, d in divergences.items() if d > cfg.tau_kl}
    elif cfg.algorithm == "kl_proportional":
        weights = normalize_remask_weights(divergences)
        n_draws = min(cfg.effective_budget(len(scope)),
                      sum(1 for w in weights.values() if w > 0))
        remasked = set()
        remaining = {i: w for i, w in weights.items() if w > 0}
        for _ in range(n_draws):
            order = sorted(remaining)
            pick = order[categorical_index(rng, [remaining[i] for i in order])]
            remasked.add(pick)
            del remaining[pick]
    else:
        raise ValueError(f"verify_kl cannot run algorithm {cfg.algorithm!r}")

    diags = {i: PositionDiagnostic(d, i in remasked) for i, d in divergences.items()}
    return _apply(seq, remasked, diags)


def verify_confidence(seq: MaskedSequence, verifier_dists: PositionDistributions,
                      scope_positions: Iterable[int], cfg: VerificationConfig,
                      rng: np.random.Generator) -> VerificationOutcome:
    """Remask based on the verifier's own certainty; no drafter input needed.

    conf_threshold remasks every scope position whose top probability is
    below tau_conf; conf_probabilistic remasks each independently with
    probability one minus that top probability.
    """
    scope = _check_scope(seq, scope_positions)
    confidences = {i: confidence(verifier_dists.row(i)) for i in scope}

    if cfg.algorithm == "conf_threshold":
        remasked = {i for i, c in confidences.items() if c < cfg.tau_conf}
    elif cfg.algorithm == "conf_probabilistic":
        remasked = {i for i in scope if rng.random() < 1.0 - confidences[i]}
    else:
        raise ValueError(f"verify_confidence cannot run algorithm {cfg.algorithm!r}")

    diags = {i: PositionDiagnostic(c, i in remasked) for i, c in confidences.items()}
    return _apply(seq, remasked, diags)
