"""Command-line entry point: generate, sweep, eval-model, tasks.

Exit codes are a fixed contract for harness scripting: 0 success, 1 usage or
config error, 2 livelock, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import bench as bench_mod
from . import config as config_mod
from . import report
from .diffusion import forward_mask
from .errors import ConfigError, LivelockError, ModelUnavailableError, ProtocolError
from .extmodel import ExternalModel
from .models import (
    DenoisingModel,
    ExactOracle,
    MarkovOracle,
    degrade,
    enumerate_markov_support,
)
from .pipeline import dual_diffusion_generate

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_LIVELOCK = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="draftverify",
        description="Speculative draft-and-verify decoding for masked "
                    "diffusion models, on exactly solvable oracle tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--output", default=None, help="override output path")
        p.add_argument("--external-model", default=None, metavar="CMD",
                       help="command line of an external model server; replaces "
                            "the drafter base model (and the eval-model target)")

    g = sub.add_parser("generate", help="run one draft-and-verify generation")
    add_common(g)

    s = sub.add_parser("sweep", help="run the benchmark grid and export records")
    add_common(s)
    s.add_argument("--jobs", type=int, default=None,
                   help="parallel workers (default: available parallelism)")

    e = sub.add_parser("eval-model", help="denoising-loss diagnostic for a model")
    add_common(e)

    t = sub.add_parser("tasks", help="emit the task suite as JSON lines")
    add_common(t)
    return parser


def _load(args: argparse.Namespace) -> dict:
    overrides = {"seed": args.seed, "output": args.output}
    return config_mod.load_config(args.config, overrides)


def _drafter_base(raw: Mapping[str, Any], oracle: ExactOracle,
                  args: argparse.Namespace) -> DenoisingModel:
    if args.external_model:
        return ExternalModel(args.external_model, oracle.vocab)
    return oracle


def _build_drafter(raw: Mapping[str, Any], oracle: ExactOracle,
                   args: argparse.Namespace) -> DenoisingModel:
    degradations = config_mod.build_degradations(raw.get("drafter", {}))
    return degrade(_drafter_base(raw, oracle, args), degradations)


def _require_section(raw: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    if name not in raw:
        raise ConfigError(f"config: section {name!r} is required for this command")
    return raw[name]


def _stats_dict(stats) -> dict:
    d = dataclasses.asdict(stats)
    d["drafter_nfe"] = stats.drafter_nfe
    d["verifier_nfe"] = stats.verifier_nfe
    return d


def cmd_generate(args: argparse.Namespace) -> int:
    raw = _load(args)
    section = _require_section(raw, "generate")
    pipeline_section = _require_section(raw, "pipeline")
    seed = raw.get("seed", 0)

    oracle = config_mod.build_oracle(raw["oracle"])
    drafter = _build_drafter(raw, oracle, args)
    length = section["length"]
    if section.get("prompt") is not None:
        prompt = tuple(section["prompt"])
    elif section.get("prompt_len"):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        prompt = oracle.sample_sequence(rng, length).tokens[:section["prompt_len"]]
    else:
        prompt = ()
    cfg = config_mod.build_pipeline_config(pipeline_section, seed=seed)

    seq, stats, provenance = dual_diffusion_generate(
        drafter, oracle, prompt, length, cfg)

    print("sequence:", " ".join(str(t) for t in seq.tokens))
    print(f"prompt length: {len(prompt)}   seed: {seed}   "
          f"fingerprint: {config_mod.config_fingerprint(raw)}")
    print(f"drafter passes: {stats.drafter_forward_passes}"
          f" (+{stats.drafter_fresh_passes} fresh-source)   "
          f"verifier passes: {stats.verifier_forward_passes}   "
          f"cycles: {stats.cycles}   remasked: {stats.total_remasked}   "
          f"forced trust: {stats.forced_trust_cycles}")
    print("cycle  masked_before  steps  masked_after_draft  remasked  masked_after")
    for t in stats.trace:
        print(f"{t.cycle:>5}  {t.masked_before:>13}  {t.drafter_steps:>5}  "
              f"{t.masked_after_draft:>18}  {t.remasked:>8}  {t.masked_after:>12}"
              + ("  [forced trust]" if t.forced_trust else ""))

    if raw.get("output"):
        record = {
            "fingerprint": config_mod.config_fingerprint(raw),
            "seed": seed,
            "prompt": list(prompt),
            "sequence": list(seq.tokens),
            "stats": _stats_dict(stats),
            "provenance": provenance.summary(),
        }
        path = Path(raw["output"])
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    raw = _load(args)
    bench_section = _require_section(raw, "bench")
    _require_section(raw, "pipeline")
    seed = raw.get("seed", 0)
    lam = float(bench_section.get("lambda", 5.0))

    oracle = config_mod.build_oracle(raw["oracle"])
    degradations = config_mod.build_degradations(raw.get("drafter", {}))

    def drafter_factory() -> DenoisingModel:
        base = (ExternalModel(args.external_model, oracle.vocab)
                if args.external_model else oracle)
        return degrade(base, degradations)

    tasks = bench_mod.make_tasks(
        oracle, bench_section["task_count"], bench_section["prompt_len"],
        bench_section["length"], seed, config_mod.oracle_id(raw["oracle"]))
    cells = config_mod.expand_grid(raw)
    if bench_section.get("baseline_policy") is not None:
        baseline_policy = config_mod.build_policy(
            bench_section["baseline_policy"], "bench.baseline_policy")
    else:
        baseline_policy = config_mod.build_policy(
            raw["pipeline"]["policy"], "pipeline.policy")

    jobs = args.jobs if args.jobs else (os.cpu_count() or 1)
    records = bench_mod.sweep(tasks, oracle, drafter_factory, cells, lam,
                              seed, baseline_policy, jobs=jobs)
    summaries = bench_mod.summarize(records)
    frontier = bench_mod.pareto_frontier(summaries)

    outdir = Path(raw.get("output", "out"))
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "records.csv").write_text(
        bench_mod.records_csv_text(records), encoding="utf-8")
    (outdir / "records.jsonl").write_text(
        bench_mod.records_jsonl_text(records), encoding="utf-8")
    (outdir / "summary.csv").write_text(
        bench_mod.summary_csv_text(summaries), encoding="utf-8")
    report.save_pareto_figure(summaries, frontier, str(outdir / "pareto.png"))
    report.save_nfe_figure(summaries, str(outdir / "nfe.png"))

    n_livelock = sum(s.n_livelock for s in summaries)
    frontier_ids = {s.config_id for s in frontier}
    print(f"config fingerprint: {config_mod.config_fingerprint(raw)}   "
          f"seed: {seed}   lambda: {lam!r}")
    print(f"{len(records)} records over {len(tasks)} tasks; "
          f"{n_livelock} livelocked cells")
    print("config            exact_match  weighted_cost  verifier_nfe  pareto")
    for s in summaries:
        mark = "*" if s.config_id in frontier_ids else ""
        print(f"{s.config_id:<17} {s.exact_match:>11.3f}  {s.weighted_cost:>13.2f}"
              f"  {s.verifier_nfe:>12.2f}  {mark:>6}")
    print(f"wrote records.csv, records.jsonl, summary.csv, pareto.png, nfe.png "
          f"to {outdir}")
    return EXIT_OK


def cmd_eval_model(args: argparse.Namespace) -> int:
    raw = _load(args)
    section = _require_section(raw, "eval")
    seed = raw.get("seed", 0)

    oracle = config_mod.build_oracle(raw["oracle"])
    model = _build_drafter(raw, oracle, args)
    schedule = config_mod.build_schedule(section)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    corpus = [oracle.sample_sequence(rng, section["corpus_length"])
              for _ in range(section["corpus_count"])]
    estimate = bench_mod.elbo_eval(model, corpus, schedule,
                                   section["n_samples"], seed)
    print(f"denoising loss estimate: {estimate.elbo:.9f} "
          f"+/- {estimate.std_error:.9f} "
          f"({estimate.draws} draws, {estimate.masked_tokens} masked tokens)")
    print(f"per-masked-token loss: {estimate.per_token_nll:.9f}")

    if isinstance(oracle, MarkovOracle):
        check_len = min(5, section["corpus_length"])
        reference = enumerate_markov_support(oracle, check_len)
        probe_rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        worst = 0.0
        for _ in range(8):
            clean = oracle.sample_sequence(probe_rng, check_len)
            probe = forward_mask(clean, 0.5, schedule, probe_rng)
            delta = np.max(np.abs(oracle.predict(probe).probs
                                  - reference.predict(probe).probs))
            worst = max(worst, float(delta))
        print(f"oracle exactness check (message passing vs support enumeration, "
              f"L={check_len}): max deviation {worst:.3e}")
    else:
        print("oracle exactness check: support-based oracle is exact by construction")
    return EXIT_OK


def cmd_tasks(args: argparse.Namespace) -> int:
    raw = _load(args)
    bench_section = _require_section(raw, "bench")
    seed = raw.get("seed", 0)
    oracle = config_mod.build_oracle(raw["oracle"])
    tasks = bench_mod.make_tasks(
        oracle, bench_section["task_count"], bench_section["prompt_len"],
        bench_section["length"], seed, config_mod.oracle_id(raw["oracle"]))
    lines = [json.dumps({"task_id": t.task_id, "prompt": list(t.prompt),
                         "reference": list(t.reference), "oracle_id": t.oracle_id},
                        sort_keys=True, separators=(",", ":"))
             for t in tasks]
    text = "\n".join(lines) + "\n"
    if raw.get("output"):
        path = Path(raw["output"])
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        print(f"wrote {len(tasks)} tasks to {path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "sweep": cmd_sweep,
    "eval-model": cmd_eval_model,
    "tasks": cmd_tasks,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except LivelockError as err:
        print(f"livelock: {err}", file=sys.stderr)
        return EXIT_LIVELOCK
    except (ProtocolError, ModelUnavailableError) as err:
        print(f"external model error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
