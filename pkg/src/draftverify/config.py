"""Run-configuration loading, strict validation, and model/grid builders.

Configs are single YAML files with sections mirroring the library layout
(oracle, drafter, pipeline, bench, generate, eval). Unknown keys are
rejected anywhere in the tree; every value is validated before any
computation starts. The only environment hook is DRAFTVERIFY_OUTPUT, which
overrides the output directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import yaml

from .bench import SweepCell, fingerprint
from .diffusion import NoiseSchedule, UnmaskPolicy
from .errors import ConfigError
from .models import DrafterDegradation, EnumeratedOracle, ExactOracle, MarkovOracle
from .pipeline import PipelineConfig
from .verification import VerificationConfig
from .core import VocabSpec

OUTPUT_ENV_VAR = "DRAFTVERIFY_OUTPUT"

_TOP_KEYS = {"oracle", "drafter", "pipeline", "bench", "generate", "eval",
             "seed", "output"}
_GRID_AXES = ("policy", "drafter_steps", "algorithm", "tau_kl", "tau_conf", "budget")


def _require_keys(section: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _get(section: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in section:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return section[key]


def load_config(path: str, overrides: Mapping[str, Any] | None = None) -> dict:
    """Parse and validate a YAML config file, then fold in CLI overrides."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except yaml.MarkedYAMLError as err:
        mark = err.problem_mark
        where = f"{path}:{mark.line + 1}" if mark else path
        raise ConfigError(f"{where}: invalid YAML: {err.problem}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping at top level")

    if overrides:
        for key, value in overrides.items():
            if value is not None:
                raw[key] = value
    if OUTPUT_ENV_VAR in os.environ and (not overrides or overrides.get("output") is None):
        raw["output"] = os.environ[OUTPUT_ENV_VAR]

    validate_config(raw)
    return raw


def validate_config(raw: Mapping[str, Any]) -> None:
    _require_keys(raw, _TOP_KEYS, "config")
    if "oracle" not in raw:
        raise ConfigError("config: missing required section 'oracle'")
    _validate_oracle(raw["oracle"])
    if "drafter" in raw:
        _validate_drafter(raw["drafter"])
    if "pipeline" in raw:
        build_pipeline_config(raw["pipeline"], seed=0)
    if "bench" in raw:
        _validate_bench(raw["bench"])
    if "generate" in raw:
        _validate_generate(raw["generate"])
    if "eval" in raw:
        _validate_eval(raw["eval"])
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("config: seed must be a nonnegative integer")
    if "output" in raw and not isinstance(raw["output"], str):
        raise ConfigError("config: output must be a path string")


def config_fingerprint(raw: Mapping[str, Any]) -> str:
    return fingerprint(raw)


# -- oracle ------------------------------------------------------------------

def _validate_oracle(section: Any) -> None:
    if not isinstance(section, dict):
        raise ConfigError("oracle: must be a mapping")
    kind = _get(section, "kind", "oracle")
    if kind == "markov":
        _require_keys(section, {"kind", "initial", "transition"}, "oracle")
        _get(section, "initial", "oracle")
        _get(section, "transition", "oracle")
    elif kind == "enumerated":
        _require_keys(section, {"kind", "vocab_size", "support"}, "oracle")
        support = _get(section, "support", "oracle")
        if not isinstance(support, list) or not support:
            raise ConfigError("oracle.support: must be a nonempty list")
        for i, entry in enumerate(support):
            if not isinstance(entry, dict):
                raise ConfigError(f"oracle.support[{i}]: must be a mapping")
            _require_keys(entry, {"tokens", "weight"}, f"oracle.support[{i}]")
    else:
        raise ConfigError(f"oracle.kind: unknown kind {kind!r}")
    build_oracle(section)  # full numeric validation


def build_oracle(section: Mapping[str, Any]) -> ExactOracle:
    try:
        if section["kind"] == "markov":
            return MarkovOracle(section["initial"], section["transition"])
        vocab = VocabSpec(int(section["vocab_size"]))
        support = [(entry["tokens"], float(entry["weight"]))
                   for entry in section["support"]]
        return EnumeratedOracle(vocab, support)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"oracle: {err}") from err


def oracle_id(section: Mapping[str, Any]) -> str:
    return f"{section['kind']}-{fingerprint(dict(section))[:8]}"


# -- drafter -----------------------------------------------------------------

def _validate_drafter(section: Any) -> None:
    if not isinstance(section, dict):
        raise ConfigError("drafter: must be a mapping")
    _require_keys(section, {"degradations"}, "drafter")
    build_degradations(section)


def build_degradations(section: Mapping[str, Any]) -> list[DrafterDegradation]:
    degs = section.get("degradations", [])
    if degs is None:
        degs = []
    if not isinstance(degs, list):
        raise ConfigError("drafter.degradations: must be a list")
    out = []
    allowed = {"kind", "refresh_period", "tau", "mix"}
    for i, entry in enumerate(degs):
        where = f"drafter.degradations[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: must be a mapping")
        _require_keys(entry, allowed, where)
        try:
            out.append(DrafterDegradation(
                kind=_get(entry, "kind", where),
                refresh_period=entry.get("refresh_period"),
                tau=entry.get("tau"),
                mix=entry.get("mix"),
            ))
        except ValueError as err:
            raise ConfigError(f"{where}: {err}") from err
    return out


# -- pipeline ----------------------------------------------------------------

def build_policy(section: Mapping[str, Any], where: str = "policy") -> UnmaskPolicy:
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: must be a mapping")
    _require_keys(section, {"kind", "k", "theta", "commit_mode"}, where)
    try:
        return UnmaskPolicy(
            kind=_get(section, "kind", where),
            k=section.get("k"),
            theta=section.get("theta"),
            commit_mode=section.get("commit_mode", "argmax"),
        )
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from err


def build_verification(section: Mapping[str, Any],
                       where: str = "pipeline.verification") -> VerificationConfig:
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: must be a mapping")
    _require_keys(section, {"algorithm", "tau_kl", "tau_conf", "budget",
                            "drafter_dist_source", "scope"}, where)
    try:
        return VerificationConfig(
            algorithm=_get(section, "algorithm", where),
            tau_kl=section.get("tau_kl"),
            tau_conf=section.get("tau_conf"),
            budget=section.get("budget"),
            drafter_dist_source=section.get("drafter_dist_source", "stored"),
            scope=section.get("scope", "current_cycle"),
        )
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from err


def build_pipeline_config(section: Any, seed: int) -> PipelineConfig:
    if not isinstance(section, dict):
        raise ConfigError("pipeline: must be a mapping")
    _require_keys(section, {"drafter_steps", "policy", "verification",
                            "max_cycles", "stall_window"}, "pipeline")
    try:
        return PipelineConfig(
            drafter_steps=int(_get(section, "drafter_steps", "pipeline")),
            policy=build_policy(_get(section, "policy", "pipeline"),
                                "pipeline.policy"),
            verification=build_verification(
                _get(section, "verification", "pipeline")),
            max_cycles=section.get("max_cycles"),
            stall_window=int(section.get("stall_window", 3)),
            seed=seed,
        )
    except (ValueError, TypeError) as err:
        raise ConfigError(f"pipeline: {err}") from err


# -- bench -------------------------------------------------------------------

def _validate_bench(section: Any) -> None:
    if not isinstance(section, dict):
        raise ConfigError("bench: must be a mapping")
    _require_keys(section, {"task_count", "prompt_len", "length", "lambda",
                            "baseline_policy", "grid"}, "bench")
    count = _get(section, "task_count", "bench")
    prompt_len = _get(section, "prompt_len", "bench")
    length = _get(section, "length", "bench")
    if not (isinstance(count, int) and count >= 1):
        raise ConfigError("bench.task_count: must be a positive integer")
    if not (isinstance(length, int) and length >= 2):
        raise ConfigError("bench.length: must be an integer >= 2")
    if not (isinstance(prompt_len, int) and 0 <= prompt_len < length):
        raise ConfigError("bench.prompt_len: must satisfy 0 <= prompt_len < length")
    lam = section.get("lambda", 5.0)
    if not isinstance(lam, (int, float)) or lam < 0:
        raise ConfigError("bench.lambda: must be a nonnegative number")
    if section.get("baseline_policy") is not None:
        build_policy(section["baseline_policy"], "bench.baseline_policy")
    if "grid" in section and section["grid"] is not None:
        _validate_grid(section["grid"])


def _validate_grid(grid: Any) -> None:
    if not isinstance(grid, dict):
        raise ConfigError("bench.grid: must be a mapping of axis lists")
    _require_keys(grid, set(_GRID_AXES), "bench.grid")
    for axis, values in grid.items():
        if values is not None and not isinstance(values, list):
            raise ConfigError(f"bench.grid.{axis}: must be a list")


def expand_grid(raw: Mapping[str, Any]) -> list[SweepCell]:
    """Cross product of the grid axes applied over the base pipeline config."""
    bench = raw.get("bench") or {}
    grid = bench.get("grid")
    if not grid:
        raise ConfigError("bench.grid: sweep requires a nonempty grid")
    pipeline = raw.get("pipeline")
    if pipeline is None:
        raise ConfigError("pipeline: section required for sweeps")

    axes: list[tuple[str, list[Any]]] = []
    for axis in _GRID_AXES:
        values = grid.get(axis)
        if values:
            axes.append((axis, list(values)))
    if not axes:
        raise ConfigError("bench.grid: all axes are empty")

    combos: list[dict[str, Any]] = [{}]
    for axis, values in axes:
        combos = [dict(combo, **{axis: v}) for combo in combos for v in values]

    cells = []
    for index, combo in enumerate(combos):
        section = {
            "drafter_steps": combo.get("drafter_steps", pipeline["drafter_steps"]),
            "policy": combo.get("policy", pipeline["policy"]),
            "verification": dict(pipeline["verification"]),
            "max_cycles": pipeline.get("max_cycles"),
            "stall_window": pipeline.get("stall_window", 3),
        }
        for key in ("algorithm", "tau_kl", "tau_conf", "budget"):
            if key in combo:
                section["verification"][key] = combo[key]
        cfg = build_pipeline_config(section, seed=0)
        cells.append(SweepCell(config_id=f"grid-{index:03d}", pipeline=cfg))
    return cells


# -- generate / eval ---------------------------------------------------------

def _validate_generate(section: Any) -> None:
    if not isinstance(section, dict):
        raise ConfigError("generate: must be a mapping")
    _require_keys(section, {"length", "prompt", "prompt_len"}, "generate")
    length = _get(section, "length", "generate")
    if not (isinstance(length, int) and length >= 2):
        raise ConfigError("generate.length: must be an integer >= 2")
    prompt = section.get("prompt")
    prompt_len = section.get("prompt_len")
    if prompt is not None and prompt_len is not None:
        raise ConfigError("generate: give either prompt or prompt_len, not both")
    if prompt is not None:
        if not isinstance(prompt, list) or not all(isinstance(t, int) for t in prompt):
            raise ConfigError("generate.prompt: must be a list of token ids")
        if len(prompt) >= length:
            raise ConfigError("generate.prompt: must be shorter than length")
    if prompt_len is not None:
        if not (isinstance(prompt_len, int) and 0 <= prompt_len < length):
            raise ConfigError("generate.prompt_len: must satisfy 0 <= prompt_len < length")


def _validate_eval(section: Any) -> None:
    if not isinstance(section, dict):
        raise ConfigError("eval: must be a mapping")
    _require_keys(section, {"corpus_count", "corpus_length", "n_samples",
                            "schedule"}, "eval")
    for key in ("corpus_count", "corpus_length", "n_samples"):
        value = _get(section, key, "eval")
        if not (isinstance(value, int) and value >= 1):
            raise ConfigError(f"eval.{key}: must be a positive integer")
    try:
        NoiseSchedule(section.get("schedule", "linear"))
    except ValueError as err:
        raise ConfigError(f"eval.schedule: {err}") from err


def build_schedule(section: Mapping[str, Any]) -> NoiseSchedule:
    return NoiseSchedule(section.get("schedule", "linear"))
