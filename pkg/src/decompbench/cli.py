"""Command-line front end.

Subcommands: build-corpus, dedup, evaluate, obfuscate-eval, report.

Exit codes: 0 success; 1 run completed but some eval cases failed (failures
are data); 2 environment or usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import backends as backends_mod
from . import dedup as dedup_mod
from .config import (
    ENV_API_BASE,
    ENV_API_KEY,
    ENV_GHIDRA_HOME,
    ENV_MODEL,
    OPT_LEVELS,
    Limits,
    Toolchain,
    load_config_file,
    tool_version,
)
from .corpus import (
    SkipLog,
    build_pairs,
    ingest_sources,
    read_pairs_jsonl,
    write_pairs_jsonl,
)
from .errors import DecompBenchError, MissingTool
from .harness import (
    EvalOutcome,
    ObfuscationConfig,
    aggregate,
    evaluate_pairs,
    obfuscate_and_compare,
    obfuscator_available,
    round_half_up,
)
from .manifest import RunManifest, corpus_digest, file_digest
from .report import (
    obfuscation_markdown,
    rate_table_markdown,
    write_report,
)

logger = logging.getLogger("decompbench")

EXIT_OK = 0
EXIT_SCORED_FAILURES = 1
EXIT_ENVIRONMENT = 2


def _ghidra_version(home: str) -> str:
    props = Path(home) / "Ghidra" / "application.properties"
    if props.is_file():
        for line in props.read_text().splitlines():
            if line.startswith("application.version="):
                return line.split("=", 1)[1].strip()
    return ""


def _tool_versions(toolchain: Toolchain, args) -> dict:
    versions = {
        "compiler": tool_version(toolchain.compiler) or toolchain.compiler,
        "objdump": tool_version(toolchain.objdump) or toolchain.objdump,
    }
    ghidra_home = getattr(args, "ghidra_home", "") or os.environ.get(ENV_GHIDRA_HOME, "")
    if ghidra_home:
        versions["ghidra"] = _ghidra_version(ghidra_home) or ghidra_home
    model = getattr(args, "model", "") or os.environ.get(ENV_MODEL, "")
    if model:
        versions["model"] = model
    return versions


def _merged_settings(args) -> dict:
    """Config file values overridden by flags; secrets stay in the env."""
    settings = {}
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    return settings


def _toolchain(args, settings: dict) -> Toolchain:
    compiler = args.compiler or settings.get("compiler", "gcc")
    objdump = args.objdump or settings.get("objdump", "objdump")
    return Toolchain(compiler=compiler, objdump=objdump)


def _limits(args, settings: dict) -> Limits:
    return Limits(
        compile_timeout_s=args.compile_timeout
        if args.compile_timeout is not None
        else float(settings.get("compile_timeout_s", 30.0)),
        run_timeout_s=args.run_timeout
        if args.run_timeout is not None
        else float(settings.get("run_timeout_s", 10.0)),
        memory_mb=args.memory_mb
        if args.memory_mb is not None
        else int(settings.get("memory_mb", 512)),
    )


def _jobs(args, settings: dict) -> int:
    if args.jobs is not None:
        return args.jobs
    if "jobs" in settings:
        return int(settings["jobs"])
    return os.cpu_count() or 1


def _backend(args, settings: dict) -> backends_mod.Backend:
    config = backends_mod.BackendConfig.from_env(
        endpoint=args.endpoint or settings.get("llm_api_base")
        or os.environ.get(ENV_API_BASE, ""),
        model=args.model or settings.get("llm_model") or os.environ.get(ENV_MODEL, ""),
        api_key=os.environ.get(ENV_API_KEY, ""),
        ghidra_home=args.ghidra_home or settings.get("ghidra_home")
        or os.environ.get(ENV_GHIDRA_HOME, ""),
        max_input_tokens=int(settings.get("max_input_tokens", 8192)),
    )
    return backends_mod.Backend(
        id=args.backend_id or args.backend, kind=args.backend, config=config
    )


def _levels(arg: str) -> tuple[str, ...]:
    levels = tuple(l.strip() for l in arg.split(",") if l.strip())
    bad = [l for l in levels if l not in OPT_LEVELS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown levels: {bad}")
    return levels


def _edges(arg: str) -> tuple[int, ...]:
    try:
        return tuple(int(e) for e in arg.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bucket edges must be integers: {arg!r}")


# ---------------------------------------------------------------------------
# build-corpus
# ---------------------------------------------------------------------------

def cmd_build_corpus(args) -> int:
    settings = _merged_settings(args)
    toolchain = _toolchain(args, settings)
    toolchain.require()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest.build(
        command="build-corpus",
        config={
            "levels": list(args.levels),
            "origin": args.origin,
            "input_kind": args.input_kind,
            "max_input_tokens": args.max_input_tokens,
        },
        tool_versions=_tool_versions(toolchain, args),
        input_digest=corpus_digest(args.src_dir),
    )
    manifest.write(out_dir)

    skips = SkipLog()
    sources = ingest_sources(args.src_dir, args.origin, toolchain, skips=skips)
    if not sources:
        print(f"warning: no usable sources in {args.src_dir} "
              f"({len(skips)} rejected)", file=sys.stderr)
        write_pairs_jsonl([], out_dir / "pairs.jsonl")
        return EXIT_OK

    pseudo_fn = None
    if args.input_kind == "ghidra_pseudo":
        config = backends_mod.BackendConfig.from_env(
            ghidra_home=args.ghidra_home or settings.get("ghidra_home")
            or os.environ.get(ENV_GHIDRA_HOME, "")
        )
        pseudo_fn = lambda unit, symbol: backends_mod.ghidra_decompile(unit, symbol, config)

    pairs = list(
        build_pairs(
            sources, args.levels, args.input_kind, toolchain,
            pseudo_fn=pseudo_fn, max_input_tokens=args.max_input_tokens, skips=skips,
        )
    )
    n = write_pairs_jsonl(pairs, out_dir / "pairs.jsonl")

    per_level = {level: 0 for level in args.levels}
    for p in pairs:
        per_level[p.opt_level] += 1
    stats = {
        "run_id": manifest.run_id,
        "sources_ingested": len(sources),
        "records_skipped": len(skips),
        "pairs_per_level": per_level,
        "pairs_total": n,
    }
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")

    for level in args.levels:
        print(f"{level}: {per_level[level]} pairs")
    print(f"{n} pairs written")
    if skips.entries:
        print(f"{len(skips)} records skipped (see log)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dedup
# ---------------------------------------------------------------------------

def cmd_dedup(args) -> int:
    if args.bands * args.rows != args.permutations:
        print(
            f"error: bands*rows must equal permutations "
            f"({args.bands}*{args.rows} != {args.permutations})",
            file=sys.stderr,
        )
        return EXIT_ENVIRONMENT
    if not 0 < args.threshold <= 1:
        print("error: threshold must be in (0, 1]", file=sys.stderr)
        return EXIT_ENVIRONMENT

    pairs = read_pairs_jsonl(args.pairs_in)
    kept, dropped, records = dedup_mod.dedup_corpus(
        pairs,
        threshold=args.threshold,
        k=args.k,
        num_permutations=args.permutations,
        bands=args.bands,
        rows=args.rows,
        seed=args.seed,
    )
    write_pairs_jsonl(kept, args.pairs_out)
    if args.drop_report:
        dedup_mod.write_drop_report(records, args.drop_report)

    out_dir = Path(args.pairs_out).parent
    manifest = RunManifest.build(
        command="dedup",
        config={
            "threshold": args.threshold, "k": args.k,
            "permutations": args.permutations, "bands": args.bands, "rows": args.rows,
        },
        tool_versions={},
        input_digest=file_digest(args.pairs_in),
        seed=args.seed,
    )
    manifest.write(out_dir)

    print(f"{len(kept)} pairs kept, {len(dropped)} dropped "
          f"({len(records)} duplicate functions)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _load_eval_inputs(args, toolchain):
    pairs = read_pairs_jsonl(args.pairs_in)
    executable_pairs = [p for p in pairs if p.stage == "executable"]
    skipped = len(pairs) - len(executable_pairs)
    if skipped:
        print(f"warning: {skipped} non-executable pairs skipped "
              "(no assertion drivers)", file=sys.stderr)
    if not executable_pairs:
        print("error: no executable-stage pairs to evaluate", file=sys.stderr)
        return None, None
    sources = ingest_sources(args.src_dir, "executable", toolchain)
    return executable_pairs, {s.id: s for s in sources}


def cmd_evaluate(args) -> int:
    settings = _merged_settings(args)
    toolchain = _toolchain(args, settings)
    toolchain.require()
    limits = _limits(args, settings)
    jobs = _jobs(args, settings)
    backend = _backend(args, settings)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs, sources_by_id = _load_eval_inputs(args, toolchain)
    if pairs is None:
        return EXIT_ENVIRONMENT

    manifest = RunManifest.build(
        command="evaluate",
        config={
            "backend": backend.kind,
            "backend_id": backend.id,
            "repeats": args.repeats,
            "limits": [limits.compile_timeout_s, limits.run_timeout_s, limits.memory_mb],
        },
        tool_versions=_tool_versions(toolchain, args),
        input_digest=file_digest(args.pairs_in),
    )
    manifest.write(out_dir)

    outcomes, stats = evaluate_pairs(
        pairs, sources_by_id, backend, toolchain, limits,
        jobs=jobs, repeats=args.repeats,
    )

    with open(out_dir / "outcomes.jsonl", "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(o.to_json(run_id=manifest.run_id))
            fh.write("\n")

    write_report(
        outcomes, out_dir, manifest.run_id, pairs=pairs,
        bucket_edges=args.bucket_edges, figures=not args.no_figures,
    )

    table = aggregate(outcomes)
    print(rate_table_markdown(table))
    if stats.renamed:
        print(f"{stats.renamed} candidate(s) required a function rename")
    if stats.backend_failures:
        print(f"{stats.backend_failures} backend failure(s)")

    failures = sum(1 for o in outcomes if o.status != "Pass")
    print(f"{len(outcomes) - failures}/{len(outcomes)} cases passed")
    return EXIT_SCORED_FAILURES if failures else EXIT_OK


# ---------------------------------------------------------------------------
# obfuscate-eval
# ---------------------------------------------------------------------------

def cmd_obfuscate_eval(args) -> int:
    settings = _merged_settings(args)
    toolchain = _toolchain(args, settings)
    toolchain.require()
    limits = _limits(args, settings)
    jobs = _jobs(args, settings)
    backend = _backend(args, settings)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    cfg = ObfuscationConfig(
        technique=args.technique,
        obfuscating_compiler=args.obf_compiler,
        extra_flags=tuple(args.extra_flag or ()),
    )
    if not obfuscator_available(cfg):
        raise MissingTool(
            cfg.obfuscating_compiler,
            f"cannot compile with {' '.join(cfg.flags)}",
        )

    sources = ingest_sources(args.src_dir, "executable", toolchain)
    if not sources:
        print("error: no usable sources", file=sys.stderr)
        return EXIT_ENVIRONMENT

    manifest = RunManifest.build(
        command="obfuscate-eval",
        config={
            "backend": backend.kind,
            "backend_id": backend.id,
            "technique": args.technique,
            "obf_compiler": args.obf_compiler,
            "extra_flags": list(cfg.extra_flags),
            "levels": list(args.levels),
        },
        tool_versions=_tool_versions(toolchain, args),
        input_digest=corpus_digest(args.src_dir),
    )
    manifest.write(out_dir)

    result = obfuscate_and_compare(
        sources, backend, cfg, toolchain, limits, levels=args.levels, jobs=jobs,
    )

    md = obfuscation_markdown(result)
    (out_dir / "obfuscation.md").write_text(f"Run: `{manifest.run_id}`\n\n{md}")
    print(md)
    avg_drop = result.drop_avg()
    if avg_drop is not None:
        print(f"relative drop (AVG): {round_half_up(avg_drop, 3)}")

    failures = bool(result.excluded)
    for table in (result.base, result.obfuscated):
        for bid in table.backends:
            failures = failures or any(
                table.rate(bid, lvl) < 1 for lvl in table.levels(bid)
            )
    return EXIT_SCORED_FAILURES if failures else EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    outcomes: list[EvalOutcome] = []
    run_ids: set[str] = set()
    for path in args.outcomes:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                outcome, run_id = EvalOutcome.from_json(line)
                outcomes.append(outcome)
                if run_id:
                    run_ids.add(run_id)
    if not outcomes:
        print("error: no outcomes found", file=sys.stderr)
        return EXIT_ENVIRONMENT
    if len(run_ids) > 1 and not args.force:
        print(
            f"error: outcome files mix runs {sorted(run_ids)}; pass --force to merge",
            file=sys.stderr,
        )
        return EXIT_ENVIRONMENT
    run_id = run_ids.pop() if len(run_ids) == 1 else "merged"

    pairs = read_pairs_jsonl(args.pairs) if args.pairs else None
    write_report(
        outcomes, args.out, run_id, pairs=pairs,
        bucket_edges=args.bucket_edges, figures=not args.no_figures,
    )
    print(rate_table_markdown(aggregate(outcomes)))
    print(f"report written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--compiler", default="", help="C compiler executable")
    parser.add_argument("--objdump", default="", help="disassembler executable")
    parser.add_argument("--jobs", type=int, default=None, help="worker pool size")
    parser.add_argument("-v", "--verbose", action="store_true")


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend", required=True, choices=backends_mod.BACKEND_KINDS,
        help="decompiler backend kind",
    )
    parser.add_argument("--backend-id", default="", help="label for report rows")
    parser.add_argument("--endpoint", default="", help=f"completion API base URL (or ${ENV_API_BASE})")
    parser.add_argument("--model", default="", help=f"model name (or ${ENV_MODEL})")
    parser.add_argument("--ghidra-home", default="", help=f"Ghidra install dir (or ${ENV_GHIDRA_HOME})")


def _add_limit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--compile-timeout", type=float, default=None, metavar="S")
    parser.add_argument("--run-timeout", type=float, default=None, metavar="S")
    parser.add_argument("--memory-mb", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decompbench",
        description="Build decompilation corpora and score decompiler backends "
        "by re-executability.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-corpus", help="compile, disassemble, and pair sources")
    p.add_argument("src_dir")
    p.add_argument("out")
    p.add_argument("--levels", type=_levels, default=OPT_LEVELS)
    p.add_argument("--origin", choices=("compilable", "executable"), default="executable")
    p.add_argument("--input-kind", choices=("asm", "ghidra_pseudo"), default="asm")
    p.add_argument("--max-input-tokens", type=int, default=8192)
    p.add_argument("--ghidra-home", default="")
    _add_common(p)
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("dedup", help="drop near-duplicate functions")
    p.add_argument("pairs_in")
    p.add_argument("pairs_out")
    p.add_argument("--threshold", type=float, default=dedup_mod.DEFAULT_THRESHOLD)
    p.add_argument("--k", type=int, default=dedup_mod.DEFAULT_K)
    p.add_argument("--permutations", type=int, default=dedup_mod.DEFAULT_PERMUTATIONS)
    p.add_argument("--bands", type=int, default=dedup_mod.DEFAULT_BANDS)
    p.add_argument("--rows", type=int, default=dedup_mod.DEFAULT_ROWS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-report", default="", help="write drop records here (JSONL)")
    _add_common(p)
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("evaluate", help="score a backend on executable pairs")
    p.add_argument("pairs_in")
    p.add_argument("--src-dir", required=True, help="source tree with drivers")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--bucket-edges", type=_edges, default=None)
    p.add_argument("--no-figures", action="store_true")
    _add_backend_flags(p)
    _add_limit_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("obfuscate-eval", help="compare plain vs obfuscated builds")
    p.add_argument("--src-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--technique", required=True, choices=("CFF", "BCF"))
    p.add_argument("--obf-compiler", required=True, help="obfuscating compiler executable")
    p.add_argument("--extra-flag", action="append", help="extra obfuscation flag (repeatable)")
    p.add_argument("--levels", type=_levels, default=OPT_LEVELS)
    _add_backend_flags(p)
    _add_limit_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_obfuscate_eval)

    p = sub.add_parser("report", help="merge outcome files into tables and figures")
    p.add_argument("outcomes", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", default="", help="pairs file for length buckets")
    p.add_argument("--bucket-edges", type=_edges, default=None)
    p.add_argument("--force", action="store_true", help="allow mixing run ids")
    p.add_argument("--no-figures", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except MissingTool as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    except (DecompBenchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT


if __name__ == "__main__":
    sys.exit(main())
