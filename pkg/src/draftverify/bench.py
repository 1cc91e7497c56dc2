"""Synthetic tasks, quality metrics, ELBO diagnostic, sweeps, and Pareto extraction.

The cost axis is model calls (NFE), not wall clock: a verifier pass is
weighted by a configurable factor `lam` relative to a drafter pass. Exports
are byte-deterministic given the sweep seed, so wall time never appears in
them.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .core import MaskedSequence
from .diffusion import NoiseSchedule, UnmaskPolicy, forward_mask
from .errors import LivelockError
from .models import DenoisingModel, ExactOracle
from .pipeline import (
    GenStats,
    PipelineConfig,
    drafter_only_generate,
    dual_diffusion_generate,
    verifier_only_generate,
)

#: Column order of the records CSV; fixed contract for downstream tooling.
RECORD_COLUMNS = (
    "config_id", "fingerprint", "variant", "task_id", "seed", "status",
    "exact_match", "gt_loglik", "verifier_nll",
    "drafter_nfe", "verifier_nfe", "lambda", "weighted_cost",
    "cycles", "total_remasked", "forced_trust_cycles",
)

SUMMARY_COLUMNS = (
    "config_id", "fingerprint", "variant", "n_tasks", "n_livelock",
    "exact_match", "gt_loglik", "n_loglik_neg_inf", "verifier_nll",
    "n_nll_inf", "drafter_nfe", "verifier_nfe", "lambda", "weighted_cost",
)


def fingerprint(payload: Any) -> str:
    """Stable 12-hex-digit hash of a canonicalized JSON-able payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _fingerprint_u64(fp: str) -> int:
    return int(hashlib.sha256(fp.encode("utf-8")).hexdigest()[:16], 16)


def derive_run_seed(base_seed: int, fp: str, task_id: int) -> int:
    """Per-run seed: first 64-bit word of SeedSequence([base, fp_u64, task_id])."""
    ss = np.random.SeedSequence([base_seed, _fingerprint_u64(fp), task_id])
    return int(ss.generate_state(2, np.uint64)[0])


@dataclass(frozen=True)
class Task:
    """Prompt plus the oracle's maximum-probability answer region."""

    task_id: int
    prompt: tuple[int, ...]
    reference: tuple[int, ...]
    oracle_id: str

    @property
    def length(self) -> int:
        return len(self.prompt) + len(self.reference)


def make_tasks(oracle: ExactOracle, count: int, prompt_len: int, length: int,
               seed: int, oracle_id: str = "oracle") -> list[Task]:
    """Sample prompts from the oracle joint; references by exact maximization."""
    if not 0 <= prompt_len < length:
        raise ValueError("need 0 <= prompt_len < length")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    tasks = []
    for task_id in range(count):
        sample = oracle.sample_sequence(rng, length)
        prompt = sample.tokens[:prompt_len]
        best = oracle.best_completion(prompt, length)
        tasks.append(Task(task_id, prompt, best[prompt_len:], oracle_id))
    return tasks


@dataclass(frozen=True)
class ScoreMetrics:
    exact_match: int
    gt_loglik: float   # -inf when the sequence is off the oracle support
    verifier_nll: float  # may be +inf when the verifier rules a token out


def score(task: Task, generated: MaskedSequence, oracle: ExactOracle,
          verifier: DenoisingModel) -> ScoreMetrics:
    """Quality of a finished sequence against the task's oracle."""
    if not generated.is_complete():
        raise ValueError("cannot score a sequence with masked positions")
    if len(generated) != task.length:
        raise ValueError(
            f"generated length {len(generated)} != task length {task.length}")
    answer = generated.tokens[len(task.prompt):]
    exact = int(answer == task.reference)
    loglik = oracle.log_joint(generated.tokens)
    dists = verifier.predict(generated)
    nll = 0.0
    for i in range(len(task.prompt), task.length):
        p = float(dists.row(i)[generated.tokens[i]])
        nll += -math.log(p) if p > 0 else math.inf
    return ScoreMetrics(exact, loglik, nll)


@dataclass(frozen=True)
class ElboEstimate:
    """Monte-Carlo denoising-loss estimate over a corpus.

    `elbo` is the mean per-draw sum of masked-token negative log likelihoods;
    `per_token_nll` normalizes by the number of masked tokens seen.
    """

    elbo: float
    std_error: float
    per_token_nll: float
    draws: int
    masked_tokens: int


def elbo_eval(model: DenoisingModel, corpus: Sequence[MaskedSequence],
              schedule: NoiseSchedule, n_samples: int, seed: int) -> ElboEstimate:
    """Estimate the denoising loss: mask at a random time, score true tokens."""
    if not corpus:
        raise ValueError("corpus must be nonempty")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    draws: list[float] = []
    masked_total = 0
    nll_total = 0.0
    for x0 in corpus:
        if not x0.is_complete():
            raise ValueError("corpus sequences must be fully clean")
        for _ in range(n_samples):
            t = rng.random()
            xt = forward_mask(x0, t, schedule, rng)
            masked = xt.masked_positions()
            value = 0.0
            if masked:
                dists = model.predict(xt)
                for i in masked:
                    p = float(dists.row(i)[x0.tokens[i]])
                    value += -math.log(p) if p > 0 else math.inf
            draws.append(value)
            masked_total += len(masked)
            nll_total += value
    arr = np.asarray(draws, dtype=np.float64)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    per_token = nll_total / masked_total if masked_total else float("nan")
    return ElboEstimate(mean, stderr, per_token, len(arr), masked_total)


@dataclass(frozen=True)
class RunRecord:
    """One generation run: identity, quality, and cost."""

    config_id: str
    fingerprint: str
    variant: str          # dual | drafter_only | verifier_only
    task_id: int
    seed: int             # the sweep-level base seed
    status: str           # ok | livelock
    exact_match: int | None
    gt_loglik: float | None
    verifier_nll: float | None
    drafter_nfe: int
    verifier_nfe: int
    lam: float
    weighted_cost: float
    cycles: int
    total_remasked: int
    forced_trust_cycles: int
    wall_time: float = 0.0  # informational only; never exported


@dataclass(frozen=True)
class SweepCell:
    """One grid point: a named pipeline configuration."""

    config_id: str
    pipeline: PipelineConfig

    def descriptor(self) -> dict:
        v = self.pipeline.verification
        p = self.pipeline.policy
        return {
            "variant": "dual",
            "drafter_steps": self.pipeline.drafter_steps,
            "policy": {"kind": p.kind, "k": p.k, "theta": p.theta,
                       "commit_mode": p.commit_mode},
            "verification": {
                "algorithm": v.algorithm, "tau_kl": v.tau_kl,
                "tau_conf": v.tau_conf, "budget": v.budget,
                "drafter_dist_source": v.drafter_dist_source, "scope": v.scope,
            },
            "max_cycles": self.pipeline.max_cycles,
            "stall_window": self.pipeline.stall_window,
        }


def _policy_descriptor(policy: UnmaskPolicy) -> dict:
    return {"kind": policy.kind, "k": policy.k, "theta": policy.theta,
            "commit_mode": policy.commit_mode}


def _record_from_run(config_id: str, fp: str, variant: str, task: Task,
                     base_seed: int, lam: float, stats: GenStats,
                     metrics: ScoreMetrics | None, status: str,
                     wall_time: float) -> RunRecord:
    weighted = stats.drafter_nfe + lam * stats.verifier_nfe
    return RunRecord(
        config_id=config_id,
        fingerprint=fp,
        variant=variant,
        task_id=task.task_id,
        seed=base_seed,
        status=status,
        exact_match=metrics.exact_match if metrics else None,
        gt_loglik=metrics.gt_loglik if metrics else None,
        verifier_nll=metrics.verifier_nll if metrics else None,
        drafter_nfe=stats.drafter_nfe,
        verifier_nfe=stats.verifier_nfe,
        lam=lam,
        weighted_cost=weighted,
        cycles=stats.cycles,
        total_remasked=stats.total_remasked,
        forced_trust_cycles=stats.forced_trust_cycles,
        wall_time=wall_time,
    )


def sweep(tasks: Sequence[Task], verifier: ExactOracle,
          drafter_factory: Callable[[], DenoisingModel],
          cells: Sequence[SweepCell], lam: float, seed: int,
          baseline_policy: UnmaskPolicy, jobs: int = 1) -> list[RunRecord]:
    """Run every (cell x task) plus drafter-only and verifier-only baselines.

    Cells are independent; `jobs` only controls parallelism. Results come
    back in canonical order (config_id, then task_id) regardless of the
    worker count, and every run draws its own seed stream.
    """
    if not tasks or not cells:
        raise ValueError("sweep needs at least one task and one cell")

    work: list[tuple[str, str, str, Task, PipelineConfig | None]] = []
    for cell in cells:
        fp = fingerprint(cell.descriptor())
        for task in tasks:
            work.append((cell.config_id, fp, "dual", task, cell.pipeline))
    base_fp = {
        "drafter_only": fingerprint({"variant": "drafter_only",
                                     "policy": _policy_descriptor(baseline_policy)}),
        "verifier_only": fingerprint({"variant": "verifier_only",
                                      "policy": _policy_descriptor(baseline_policy)}),
    }
    for task in tasks:
        work.append(("baseline-drafter", base_fp["drafter_only"],
                     "drafter_only", task, None))
        work.append(("baseline-verifier", base_fp["verifier_only"],
                     "verifier_only", task, None))

    def run_one(item) -> RunRecord:
        config_id, fp, variant, task, pipe_cfg = item
        run_seed = derive_run_seed(seed, fp, task.task_id)
        start = time.perf_counter()
        if variant == "dual":
            drafter = drafter_factory()
            cfg = replace(pipe_cfg, seed=run_seed)
            try:
                seq, stats, _ = dual_diffusion_generate(
                    drafter, verifier, task.prompt, task.length, cfg)
            except LivelockError as err:
                stats = err.stats or GenStats()
                return _record_from_run(config_id, fp, variant, task, seed, lam,
                                        stats, None, "livelock",
                                        time.perf_counter() - start)
        elif variant == "drafter_only":
            seq, stats = drafter_only_generate(
                drafter_factory(), task.prompt, task.length,
                baseline_policy, run_seed)
        else:
            seq, stats = verifier_only_generate(
                verifier, task.prompt, task.length, baseline_policy, run_seed)
        metrics = score(task, seq, verifier, verifier)
        return _record_from_run(config_id, fp, variant, task, seed, lam,
                                stats, metrics, "ok",
                                time.perf_counter() - start)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run_one, work))
    else:
        records = [run_one(item) for item in work]
    records.sort(key=lambda r: (r.config_id, r.task_id))
    return records


@dataclass(frozen=True)
class ConfigSummary:
    """Per-config means; non-finite quality values are excluded and counted."""

    config_id: str
    fingerprint: str
    variant: str
    n_tasks: int
    n_livelock: int
    exact_match: float
    gt_loglik: float
    n_loglik_neg_inf: int
    verifier_nll: float
    n_nll_inf: int
    drafter_nfe: float
    verifier_nfe: float
    lam: float
    weighted_cost: float


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def summarize(records: Sequence[RunRecord]) -> list[ConfigSummary]:
    by_config: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_config.setdefault(rec.config_id, []).append(rec)
    out = []
    for config_id in sorted(by_config):
        group = by_config[config_id]
        ok = [r for r in group if r.status == "ok"]
        logliks = [r.gt_loglik for r in ok if math.isfinite(r.gt_loglik)]
        nlls = [r.verifier_nll for r in ok if math.isfinite(r.verifier_nll)]
        out.append(ConfigSummary(
            config_id=config_id,
            fingerprint=group[0].fingerprint,
            variant=group[0].variant,
            n_tasks=len(group),
            n_livelock=len(group) - len(ok),
            exact_match=_mean([float(r.exact_match) for r in ok]),
            gt_loglik=_mean(logliks),
            n_loglik_neg_inf=len(ok) - len(logliks),
            verifier_nll=_mean(nlls),
            n_nll_inf=len(ok) - len(nlls),
            drafter_nfe=_mean([float(r.drafter_nfe) for r in ok]),
            verifier_nfe=_mean([float(r.verifier_nfe) for r in ok]),
            lam=group[0].lam,
            weighted_cost=_mean([r.weighted_cost for r in ok]),
        ))
    return out


def _get(item: Any, key: str) -> float:
    if isinstance(item, dict):
        return float(item[key])
    return float(getattr(item, key))


def pareto_frontier(records: Sequence[Any], cost_key: str = "weighted_cost",
                    quality_key: str = "exact_match") -> list[Any]:
    """Non-dominated subset: nothing else is at most as costly and at least
    as good with one strict inequality. Cost-ascending; exact ties kept."""
    if not records:
        return []
    indexed = sorted(range(len(records)),
                     key=lambda i: (_get(records[i], cost_key),
                                    -_get(records[i], quality_key)))
    frontier: list[Any] = []
    best_quality = -math.inf
    pos = 0
    while pos < len(indexed):
        cost = _get(records[indexed[pos]], cost_key)
        group = []
        while pos < len(indexed) and _get(records[indexed[pos]], cost_key) == cost:
            group.append(indexed[pos])
            pos += 1
        group_best = max(_get(records[i], quality_key) for i in group)
        if group_best > best_quality:
            frontier.extend(i for i in group
                            if _get(records[i], quality_key) == group_best)
            best_quality = group_best
    return [records[i] for i in frontier]


# ---------------------------------------------------------------------------
# Deterministic exports

def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _record_row(rec: RunRecord) -> dict[str, Any]:
    return {
        "config_id": rec.config_id,
        "fingerprint": rec.fingerprint,
        "variant": rec.variant,
        "task_id": rec.task_id,
        "seed": rec.seed,
        "status": rec.status,
        "exact_match": rec.exact_match,
        "gt_loglik": rec.gt_loglik,
        "verifier_nll": rec.verifier_nll,
        "drafter_nfe": rec.drafter_nfe,
        "verifier_nfe": rec.verifier_nfe,
        "lambda": rec.lam,
        "weighted_cost": rec.weighted_cost,
        "cycles": rec.cycles,
        "total_remasked": rec.total_remasked,
        "forced_trust_cycles": rec.forced_trust_cycles,
    }


def records_csv_text(records: Sequence[RunRecord]) -> str:
    lines = [",".join(RECORD_COLUMNS)]
    for rec in records:
        row = _record_row(rec)
        lines.append(",".join(_cell(row[col]) for col in RECORD_COLUMNS))
    return "\n".join(lines) + "\n"


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        # NaN and infinities are not valid JSON; string-encode them.
        return repr(value)
    return value


def records_jsonl_text(records: Sequence[RunRecord]) -> str:
    lines = []
    for rec in records:
        row = {k: _jsonable(v) for k, v in _record_row(rec).items()}
        lines.append(json.dumps(row, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def summary_csv_text(summaries: Sequence[ConfigSummary]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for s in summaries:
        row = {
            "config_id": s.config_id, "fingerprint": s.fingerprint,
            "variant": s.variant, "n_tasks": s.n_tasks,
            "n_livelock": s.n_livelock, "exact_match": s.exact_match,
            "gt_loglik": s.gt_loglik, "n_loglik_neg_inf": s.n_loglik_neg_inf,
            "verifier_nll": s.verifier_nll, "n_nll_inf": s.n_nll_inf,
            "drafter_nfe": s.drafter_nfe, "verifier_nfe": s.verifier_nfe,
            "lambda": s.lam, "weighted_cost": s.weighted_cost,
        }
        lines.append(",".join(_cell(row[col]) for col in SUMMARY_COLUMNS))
    return "\n".join(lines) + "\n"
