"""Draft-and-verify generation loop plus single-model baselines.

Each cycle runs up to K drafter unmasking steps, then one verifier pass and
one verification decision (unless the algorithm is trust). Remasked tokens
return to MASK and are re-drafted next cycle. A stall window with a
forced-trust escape cycle and a hard cycle cap guarantee termination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import MaskedSequence, PositionDistributions, VocabSpec
from .diffusion import UnmaskPolicy, unmask_step
from .errors import LivelockError
from .models import DenoisingModel
from .verification import (
    VerificationConfig,
    VerificationOutcome,
    verify_confidence,
    verify_kl,
    verify_trust,
)

PROMPT_ROLE = "prompt"
DRAFTER_ROLE = "drafter"
VERIFIER_ROLE = "verifier"


class DecodeProvenance:
    """Per-position record of who decoded each token, when, and with what belief.

    Prompt positions are fixed forever. For generated positions the stored
    decode-time distribution backs stored-source verification, and
    remask_count tracks how often verification revoked the position.
    """

    def __init__(self, length: int):
        self.length = length
        self.roles: list[str | None] = [None] * length
        self.cycles: list[int | None] = [None] * length
        self.dists: list[np.ndarray | None] = [None] * length
        self.remask_counts: list[int] = [0] * length

    def record_prompt(self, position: int) -> None:
        self.roles[position] = PROMPT_ROLE
        self.cycles[position] = -1

    def record_decode(self, position: int, role: str, cycle: int,
                      dist: np.ndarray) -> None:
        if self.roles[position] == PROMPT_ROLE:
            raise ValueError(f"prompt position {position} cannot be redecoded")
        self.roles[position] = role
        self.cycles[position] = cycle
        self.dists[position] = np.array(dist, copy=True)

    def record_remask(self, position: int) -> None:
        if self.roles[position] == PROMPT_ROLE:
            raise ValueError(f"prompt position {position} cannot be remasked")
        self.remask_counts[position] += 1
        self.roles[position] = None
        self.cycles[position] = None

    def positions_with_role(self, role: str) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == role]

    def stored_distributions(self, vocab: VocabSpec) -> PositionDistributions:
        """Decode-time beliefs where recorded, uniform placeholders elsewhere."""
        rows = np.full((self.length, vocab.size), 1.0 / vocab.size, dtype=np.float64)
        for i, d in enumerate(self.dists):
            if d is not None:
                rows[i] = d
        return PositionDistributions(rows)

    def summary(self) -> list[dict]:
        return [
            {
                "position": i,
                "role": self.roles[i],
                "cycle": self.cycles[i],
                "remask_count": self.remask_counts[i],
            }
            for i in range(self.length)
        ]


@dataclass
class CycleTrace:
    cycle: int
    masked_before: int
    drafter_steps: int
    masked_after_draft: int
    remasked: int
    masked_after: int
    forced_trust: bool


@dataclass
class GenStats:
    """Forward-pass and cycle accounting for one generation run.

    drafter_forward_passes counts unmasking steps only; fresh-source
    verification passes land in drafter_fresh_passes so the two costs stay
    separable.
    """

    drafter_forward_passes: int = 0
    verifier_forward_passes: int = 0
    drafter_fresh_passes: int = 0
    cycles: int = 0
    total_remasked: int = 0
    forced_trust_cycles: int = 0
    trace: list[CycleTrace] = field(default_factory=list)

    @property
    def drafter_nfe(self) -> int:
        return self.drafter_forward_passes + self.drafter_fresh_passes

    @property
    def verifier_nfe(self) -> int:
        return self.verifier_forward_passes


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one draft-and-verify run.

    max_cycles None means 4x the sequence length, a hard cap well clear of
    the stall guard (which forces a trust cycle after `stall_window` cycles
    without net progress).
    """

    drafter_steps: int
    policy: UnmaskPolicy
    verification: VerificationConfig
    max_cycles: int | None = None
    stall_window: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.drafter_steps < 1:
            raise ValueError("drafter_steps must be >= 1")
        if self.max_cycles is not None and self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")
        if self.stall_window < 1:
            raise ValueError("stall_window must be >= 1")

    def cycle_cap(self, length: int) -> int:
        return self.max_cycles if self.max_cycles is not None else 4 * length


def _scope_positions(cfg: VerificationConfig, provenance: DecodeProvenance,
                     decoded_this_cycle: Sequence[int]) -> list[int]:
    if cfg.scope == "current_cycle":
        return sorted(decoded_this_cycle)
    return provenance.positions_with_role(DRAFTER_ROLE)


def _run_verification(seq: MaskedSequence, drafter: DenoisingModel,
                      verifier_dists: PositionDistributions, scope: Sequence[int],
                      cfg: VerificationConfig, provenance: DecodeProvenance,
                      rng: np.random.Generator,
                      stats: GenStats) -> VerificationOutcome:
    if cfg.algorithm in ("conf_threshold", "conf_probabilistic"):
        return verify_confidence(seq, verifier_dists, scope, cfg, rng)
    if cfg.drafter_dist_source == "fresh":
        drafter_dists = drafter.predict(seq)
        stats.drafter_fresh_passes += 1
    else:
        drafter_dists = provenance.stored_distributions(seq.vocab)
    return verify_kl(seq, drafter_dists, verifier_dists, scope, cfg, rng)


def dual_diffusion_generate(
    drafter: DenoisingModel,
    verifier: DenoisingModel,
    prompt: Sequence[int] | None,
    length: int,
    cfg: PipelineConfig,
) -> tuple[MaskedSequence, GenStats, DecodeProvenance]:
    """Alternate drafting phases with single verification passes until done.

    Deterministic given (models, prompt, cfg, seed): the run consumes a
    single seeded stream, in program order, for every random choice.
    """
    if drafter.vocab != verifier.vocab:
        raise ValueError("drafter and verifier must share a vocabulary")
    prompt = tuple(int(t) for t in prompt) if prompt else ()
    seq = MaskedSequence.fully_masked(verifier.vocab, length, prompt)

    provenance = DecodeProvenance(length)
    for i in range(len(prompt)):
        provenance.record_prompt(i)

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    stats = GenStats()
    cap = cfg.cycle_cap(length)

    best_unmasked = length - seq.num_masked()
    stalled_cycles = 0
    force_trust = False

    while not seq.is_complete():
        if stats.cycles >= cap:
            raise LivelockError(
                f"no complete sequence after {cap} cycles "
                f"({seq.num_masked()} positions still masked)", stats=stats)
        cycle = stats.cycles
        drafter.refresh()  # verification boundary: stale snapshots drop here
        masked_before = seq.num_masked()

        decoded_this_cycle: list[int] = []
        steps = 0
        for _ in range(cfg.drafter_steps):
            if seq.is_complete():
                break
            before = set(seq.masked_positions())
            seq = unmask_step(drafter, seq, cfg.policy, rng, provenance,
                              cycle=cycle, role=DRAFTER_ROLE)
            stats.drafter_forward_passes += 1
            steps += 1
            decoded_this_cycle.extend(before - set(seq.masked_positions()))
        masked_after_draft = seq.num_masked()

        trust_cycle = force_trust or cfg.verification.algorithm == "trust"
        remask_count = 0
        if trust_cycle:
            if force_trust:
                stats.forced_trust_cycles += 1
        else:
            verifier_dists = verifier.predict(seq)
            stats.verifier_forward_passes += 1
            scope = _scope_positions(cfg.verification, provenance, decoded_this_cycle)
            outcome = _run_verification(seq, drafter, verifier_dists, scope,
                                        cfg.verification, provenance, rng, stats)
            for pos in sorted(outcome.remasked):
                provenance.record_remask(pos)
            seq = outcome.verified_seq
            remask_count = len(outcome.remasked)
            stats.total_remasked += remask_count

        stats.cycles += 1
        stats.trace.append(CycleTrace(
            cycle=cycle,
            masked_before=masked_before,
            drafter_steps=steps,
            masked_after_draft=masked_after_draft,
            remasked=remask_count,
            masked_after=seq.num_masked(),
            forced_trust=force_trust,
        ))

        unmasked_now = length - seq.num_masked()
        if unmasked_now > best_unmasked:
            best_unmasked = unmasked_now
            stalled_cycles = 0
        else:
            stalled_cycles += 1
        force_trust = stalled_cycles >= cfg.stall_window

    return seq, stats, provenance


def _single_model_generate(
    model: DenoisingModel,
    prompt: Sequence[int] | None,
    length: int,
    policy: UnmaskPolicy,
    seed: int,
    role: str,
) -> tuple[MaskedSequence, GenStats]:
    prompt = tuple(int(t) for t in prompt) if prompt else ()
    seq = MaskedSequence.fully_masked(model.vocab, length, prompt)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    stats = GenStats()
    while not seq.is_complete():
        masked_before = seq.num_masked()
        seq = unmask_step(model, seq, policy, rng, None,
                          cycle=stats.cycles, role=role)
        if role == VERIFIER_ROLE:
            stats.verifier_forward_passes += 1
        else:
            stats.drafter_forward_passes += 1
        stats.cycles += 1
        stats.trace.append(CycleTrace(
            cycle=stats.cycles - 1,
            masked_before=masked_before,
            drafter_steps=1 if role == DRAFTER_ROLE else 0,
            masked_after_draft=seq.num_masked(),
            remasked=0,
            masked_after=seq.num_masked(),
            forced_trust=False,
        ))
    return seq, stats


def verifier_only_generate(verifier: DenoisingModel, prompt: Sequence[int] | None,
                           length: int, policy: UnmaskPolicy,
                           seed: int) -> tuple[MaskedSequence, GenStats]:
    """Plain iterative unmasking with the accurate model; no drafting."""
    return _single_model_generate(verifier, prompt, length, policy, seed,
                                  VERIFIER_ROLE)


def drafter_only_generate(drafter: DenoisingModel, prompt: Sequence[int] | None,
                          length: int, policy: UnmaskPolicy,
                          seed: int) -> tuple[MaskedSequence, GenStats]:
    """One unbounded drafting phase: maximum speed, no error correction.

    Equivalent to dual_diffusion_generate with trust verification and an
    unlimited per-cycle step budget; stale-context drafters refresh only on
    their own schedule, never at cycle boundaries.
    """
    return _single_model_generate(drafter, prompt, length, policy, seed,
                                  DRAFTER_ROLE)
