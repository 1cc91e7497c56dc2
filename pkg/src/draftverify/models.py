"""Denoising models: exact posterior oracles and degraded drafter wrappers.

An oracle plays the accurate-verifier role by computing exact conditionals
under a known joint. Degradation wrappers emulate the approximations a fast
drafter would make (stale cached context, flattened or blurred beliefs).
"""

from __future__ import annotations

import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    MaskedSequence,
    PositionDistributions,
    VocabSpec,
    categorical_index,
    PROB_TOL,
)


class DenoisingModel(ABC):
    """Predict-all-positions interface shared by drafters and verifiers.

    `predict` returns a valid distribution at every position (masked or not)
    and bumps `call_count` by exactly one. The counter increment is locked so
    concurrent sweep workers may share a model instance.
    """

    def __init__(self) -> None:
        self._call_count = 0
        self._count_lock = threading.Lock()

    @property
    @abstractmethod
    def vocab(self) -> VocabSpec: ...

    @property
    def call_count(self) -> int:
        return self._call_count

    def predict(self, seq: MaskedSequence) -> PositionDistributions:
        with self._count_lock:
            self._call_count += 1
        return self._predict(seq)

    @abstractmethod
    def _predict(self, seq: MaskedSequence) -> PositionDistributions: ...

    def refresh(self) -> None:
        """Drop any cached context. No-op for stateless models."""


class ExactOracle(DenoisingModel):
    """A denoising model backed by a fully known joint distribution."""

    @abstractmethod
    def sample_sequence(self, rng: np.random.Generator,
                        length: int | None = None) -> MaskedSequence:
        """Exact ancestral sample from the joint; deterministic given rng state.

        Chain-structured oracles need an explicit `length`; finite-support
        oracles take it from their support.
        """

    @abstractmethod
    def best_completion(self, prompt: Sequence[int], length: int) -> tuple[int, ...]:
        """Maximum-probability completion of `prompt` out to `length` tokens."""

    @abstractmethod
    def log_joint(self, tokens: Sequence[int]) -> float:
        """Log probability of a full clean sequence; -inf off the support."""


class MarkovOracle(ExactOracle):
    """Exact conditionals under a first-order Markov chain.

    Marginals come from one forward and one backward message pass per
    predict, with the queried position's own observation always excluded
    (leave-one-out), so unmasked positions get non-degenerate beliefs
    instead of trivial one-hots.
    """

    def __init__(self, initial: Sequence[float], transition: Sequence[Sequence[float]]):
        super().__init__()
        init = np.asarray(initial, dtype=np.float64)
        trans = np.asarray(transition, dtype=np.float64)
        if init.ndim != 1 or trans.shape != (init.shape[0], init.shape[0]):
            raise ValueError(
                f"incompatible shapes: initial {init.shape}, transition {trans.shape}")
        if np.any(init < 0) or np.any(trans < 0):
            raise ValueError("chain parameters must be nonnegative")
        if abs(float(init.sum()) - 1.0) > PROB_TOL:
            raise ValueError("initial distribution must sum to 1")
        rowsums = trans.sum(axis=1)
        if np.any(np.abs(rowsums - 1.0) > PROB_TOL):
            raise ValueError("every transition row must sum to 1")
        self.initial = init
        self.transition = trans
        self._vocab = VocabSpec(int(init.shape[0]))

    @property
    def vocab(self) -> VocabSpec:
        return self._vocab

    def _constraints(self, seq: MaskedSequence) -> np.ndarray:
        """(L, V) indicator rows: one-hot at observed positions, ones elsewhere."""
        size = self._vocab.size
        mask = self._vocab.mask_id
        cons = np.ones((len(seq), size), dtype=np.float64)
        for i, tok in enumerate(seq.tokens):
            if tok != mask:
                cons[i] = 0.0
                cons[i, tok] = 1.0
        return cons

    def _predict(self, seq: MaskedSequence) -> PositionDistributions:
        length = len(seq)
        size = self._vocab.size
        cons = self._constraints(seq)
        trans = self.transition

        # alpha[k] ~ P(x_k, evidence before k); constraint at k applied only
        # when propagating past k, so rows stay leave-one-out.
        alpha = np.empty((length, size), dtype=np.float64)
        alpha[0] = self.initial
        for k in range(length - 1):
            msg = alpha[k] * cons[k]
            total = msg.sum()
            if total > 0:
                msg = msg / total
            alpha[k + 1] = msg @ trans

        # beta[k] ~ P(evidence after k | x_k).
        beta = np.empty((length, size), dtype=np.float64)
        beta[length - 1] = 1.0
        for k in range(length - 2, -1, -1):
            msg = cons[k + 1] * beta[k + 1]
            total = msg.sum()
            if total > 0:
                msg = msg / total
            beta[k] = trans @ msg

        rows = alpha * beta
        sums = rows.sum(axis=1, keepdims=True)
        impossible = sums[:, 0] <= 0.0
        rows = np.where(sums > 0, rows / np.where(sums > 0, sums, 1.0), rows)
        if np.any(impossible):
            # Evidence with zero probability under the chain: fall back to
            # uniform so generation can still proceed.
            rows[impossible] = 1.0 / size
        return PositionDistributions(rows)

    def sample_sequence(self, rng: np.random.Generator,
                        length: int | None = None) -> MaskedSequence:
        if length is None or length < 1:
            raise ValueError("MarkovOracle sampling needs a positive length")
        toks = [categorical_index(rng, self.initial)]
        for _ in range(length - 1):
            toks.append(categorical_index(rng, self.transition[toks[-1]]))
        return MaskedSequence(self._vocab, tuple(toks))

    def best_completion(self, prompt: Sequence[int], length: int) -> tuple[int, ...]:
        prompt = tuple(int(t) for t in prompt)
        if len(prompt) >= length:
            raise ValueError("prompt must be shorter than the target length")
        size = self._vocab.size
        log_trans = _safe_log(self.transition)
        log_init = _safe_log(self.initial)

        start = len(prompt)
        if start == 0:
            score = log_init.copy()
        else:
            score = log_trans[prompt[-1]].copy()
        back: list[np.ndarray] = []
        for _ in range(start + 1, length):
            cand = score[:, None] + log_trans
            back.append(np.argmax(cand, axis=0))
            score = np.max(cand, axis=0)
        tail = [int(np.argmax(score))]
        for ptr in reversed(back):
            tail.append(int(ptr[tail[-1]]))
        tail.reverse()
        return prompt + tuple(tail)

    def log_joint(self, tokens: Sequence[int]) -> float:
        toks = tuple(int(t) for t in tokens)
        total = math.log(self.initial[toks[0]]) if self.initial[toks[0]] > 0 else -math.inf
        for a, b in zip(toks, toks[1:]):
            p = self.transition[a, b]
            if p <= 0:
                return -math.inf
            total += math.log(p)
        return total


def _safe_log(arr: np.ndarray) -> np.ndarray:
    out = np.full(arr.shape, -np.inf, dtype=np.float64)
    pos = arr > 0
    out[pos] = np.log(arr[pos])
    return out


class EnumeratedOracle(ExactOracle):
    """Exact conditionals over an explicit finite support.

    Predictions brute-force the support, so this doubles as a slow reference
    for chain-structured oracles when the support enumerates the full joint.
    """

    def __init__(self, vocab: VocabSpec,
                 support: Sequence[tuple[Sequence[int], float]]):
        super().__init__()
        if not support:
            raise ValueError("support must be nonempty")
        seqs = np.asarray([tuple(s) for s, _ in support], dtype=np.int64)
        weights = np.asarray([w for _, w in support], dtype=np.float64)
        if seqs.ndim != 2:
            raise ValueError("support sequences must all have the same length")
        if np.any(seqs < 0) or np.any(seqs >= vocab.size):
            raise ValueError("support sequences must contain real tokens only")
        if np.any(weights < 0):
            raise ValueError("support weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > PROB_TOL:
            raise ValueError("support weights must sum to 1")
        self._vocab = vocab
        self.sequences = seqs
        self.weights = weights / weights.sum()

    @property
    def vocab(self) -> VocabSpec:
        return self._vocab

    @property
    def length(self) -> int:
        return int(self.sequences.shape[1])

    def _predict(self, seq: MaskedSequence) -> PositionDistributions:
        if len(seq) != self.length:
            raise ValueError(
                f"sequence length {len(seq)} does not match support length {self.length}")
        size = self._vocab.size
        mask = self._vocab.mask_id
        obs = np.asarray(seq.tokens, dtype=np.int64)
        observed = obs != mask

        mismatch = observed[None, :] & (self.sequences != obs[None, :])
        n_mismatch = mismatch.sum(axis=1)

        rows = np.zeros((self.length, size), dtype=np.float64)
        for n in np.nonzero(n_mismatch == 0)[0]:
            # Consistent with all evidence: contributes at every position.
            rows[np.arange(self.length), self.sequences[n]] += self.weights[n]
        for n in np.nonzero(n_mismatch == 1)[0]:
            # Exactly one clash: consistent only when that position is the
            # one being queried (its own observation is excluded).
            i = int(np.argmax(mismatch[n]))
            rows[i, self.sequences[n, i]] += self.weights[n]

        sums = rows.sum(axis=1, keepdims=True)
        empty = sums[:, 0] <= 0.0
        rows = np.where(sums > 0, rows / np.where(sums > 0, sums, 1.0), rows)
        if np.any(empty):
            rows[empty] = 1.0 / size  # no consistent support sequence
        return PositionDistributions(rows)

    def sample_sequence(self, rng: np.random.Generator,
                        length: int | None = None) -> MaskedSequence:
        if length is not None and length != self.length:
            raise ValueError("length must match the support length")
        idx = categorical_index(rng, self.weights)
        return MaskedSequence(self._vocab, tuple(int(t) for t in self.sequences[idx]))

    def best_completion(self, prompt: Sequence[int], length: int) -> tuple[int, ...]:
        prompt = tuple(int(t) for t in prompt)
        if length != self.length:
            raise ValueError("length must match the support length")
        if len(prompt) >= length:
            raise ValueError("prompt must be shorter than the target length")
        best: tuple[float, tuple[int, ...]] | None = None
        for row, w in zip(self.sequences, self.weights):
            toks = tuple(int(t) for t in row)
            if toks[:len(prompt)] != prompt:
                continue
            key = (-float(w), toks)
            if best is None or key < best:
                best = key
        if best is None:
            raise ValueError("prompt has zero probability under the support")
        return best[1]

    def log_joint(self, tokens: Sequence[int]) -> float:
        toks = np.asarray([int(t) for t in tokens], dtype=np.int64)
        if toks.shape[0] != self.length:
            raise ValueError("sequence length does not match support length")
        match = np.all(self.sequences == toks[None, :], axis=1)
        total = float(self.weights[match].sum())
        return math.log(total) if total > 0 else -math.inf


def enumerate_markov_support(oracle: MarkovOracle, length: int) -> EnumeratedOracle:
    """Expand a chain's full joint over `length` positions into an
    EnumeratedOracle. Exponential in length; for cross-checking only."""
    if length < 1:
        raise ValueError("length must be >= 1")
    size = oracle.vocab.size
    if size ** length > 2_000_000:
        raise ValueError(f"joint of {size}^{length} sequences is too large")
    support: list[tuple[tuple[int, ...], float]] = []
    import itertools

    for toks in itertools.product(range(size), repeat=length):
        w = float(oracle.initial[toks[0]])
        for a, b in zip(toks, toks[1:]):
            w *= float(oracle.transition[a, b])
        if w > 0:
            support.append((toks, w))
    total = sum(w for _, w in support)
    support = [(toks, w / total) for toks, w in support]
    return EnumeratedOracle(oracle.vocab, support)


class UniformModel(DenoisingModel):
    """Maximally uninformative model: uniform beliefs at every position."""

    def __init__(self, vocab: VocabSpec):
        super().__init__()
        self._vocab = vocab

    @property
    def vocab(self) -> VocabSpec:
        return self._vocab

    def _predict(self, seq: MaskedSequence) -> PositionDistributions:
        return PositionDistributions.uniform(len(seq), self._vocab.size)


@dataclass(frozen=True)
class DrafterDegradation:
    """One approximation layer to wrap around a base model.

    kinds:
      stale_context -- condition on a snapshot refreshed every
        `refresh_period` predict calls (and at every verification boundary);
        None means never auto-refresh.
      temperature -- sharpen or flatten beliefs, probs ∝ p^(1/tau).
      uniform_mix -- blend with the uniform distribution by weight `mix`.
    """

    kind: str
    refresh_period: float | None = None
    tau: float | None = None
    mix: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "stale_context":
            if self.refresh_period is not None and not self.refresh_period >= 1:
                raise ValueError("refresh_period must be >= 1 or None (never)")
        elif self.kind == "temperature":
            if self.tau is None or not self.tau > 0:
                raise ValueError("temperature requires tau > 0")
        elif self.kind == "uniform_mix":
            if self.mix is None or not 0.0 <= self.mix <= 1.0:
                raise ValueError("uniform_mix requires mix in [0, 1]")
        else:
            raise ValueError(f"unknown degradation kind {self.kind!r}")

    @classmethod
    def stale_context(cls, refresh_period: float | None) -> "DrafterDegradation":
        return cls(kind="stale_context", refresh_period=refresh_period)

    @classmethod
    def temperature(cls, tau: float) -> "DrafterDegradation":
        return cls(kind="temperature", tau=tau)

    @classmethod
    def uniform_mix(cls, mix: float) -> "DrafterDegradation":
        return cls(kind="uniform_mix", mix=mix)


class _WrappedModel(DenoisingModel):
    def __init__(self, inner: DenoisingModel):
        super().__init__()
        self.inner = inner

    @property
    def vocab(self) -> VocabSpec:
        return self.inner.vocab

    def refresh(self) -> None:
        self.inner.refresh()


class TemperatureModel(_WrappedModel):
    def __init__(self, inner: DenoisingModel, tau: float):
        super().__init__(inner)
        self.tau = float(tau)

    def _predict(self, seq: MaskedSequence) -> PositionDistributions:
        probs = self.inner.predict(seq).probs
        scaled = probs ** (1.0 / self.tau)
        scaled = scaled / scaled.sum(axis=1, keepdims=True)
        return PositionDistributions(scaled)


class UniformMixModel(_WrappedModel):
    def __init__(self, inner: DenoisingModel, mix: float):
        super().__init__(inner)
        self.mix = float(mix)

    def _predict(self, seq: MaskedSequence) -> PositionDistributions:
        probs = self.inner.predict(seq).probs
        size = probs.shape[1]
        blended = (1.0 - self.mix) * probs + self.mix / size
        return PositionDistributions(blended)


class StaleContextModel(_WrappedModel):
    """Emulates block-style cache reuse: predictions condition on a snapshot
    of the sequence, not its current state, until the next refresh."""

    def __init__(self, inner: DenoisingModel, refresh_period: float | None):
        super().__init__(inner)
        self.refresh_period = math.inf if refresh_period is None else float(refresh_period)
        self._snapshot: MaskedSequence | None = None
        self._calls_since_snapshot = 0

    def _predict(self, seq: MaskedSequence) -> PositionDistributions:
        stale = self._snapshot
        if (stale is None or len(stale) != len(seq)
                or self._calls_since_snapshot >= self.refresh_period):
            self._snapshot = seq
            self._calls_since_snapshot = 0
            stale = seq
        self._calls_since_snapshot += 1
        return self.inner.predict(stale)

    def refresh(self) -> None:
        self._snapshot = None
        self._calls_since_snapshot = 0
        self.inner.refresh()


def degrade(base: DenoisingModel,
            spec: DrafterDegradation | Sequence[DrafterDegradation]) -> DenoisingModel:
    """Wrap `base` with one or more degradations, last list entry outermost."""
    specs = [spec] if isinstance(spec, DrafterDegradation) else list(spec)
    model: DenoisingModel = base
    for s in specs:
        if s.kind == "stale_context":
            model = StaleContextModel(model, s.refresh_period)
        elif s.kind == "temperature":
            model = TemperatureModel(model, s.tau)
        else:
            model = UniformMixModel(model, s.mix)
    return model
