"""Candidate scoring: re-executability, edit similarity, readability parsing,
error taxonomy, length buckets, and obfuscation comparison.

An eval case compiles the decompiled candidate together with the original
headers and assertion driver at O0, links it, and runs it in a scratch
directory under OS resource limits. Exit 0 within the time budget is a Pass.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
import re
import shlex
import signal
import subprocess
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .backends import Backend, Candidate, decompile
from .config import OPT_LEVELS, Limits, Toolchain
from .corpus import (
    CompiledUnit,
    DecompPair,
    FUNC_DEF_RE,
    SourceFunction,
    compile_function,
    disassemble,
    normalize_asm,
    token_count,
)
from .errors import (
    DecompBenchError,
    EmptyRun,
    MissingTool,
    ReportIntegrityError,
    UnparseableJudgement,
    UnusableCandidate,
)

logger = logging.getLogger(__name__)

STATUSES = (
    "Pass", "AssertFail", "CompileError", "LinkError",
    "RuntimeError", "Timeout", "BackendFailure",
)
ERROR_CLASSES = (
    "none", "logic_assertion", "undeclared_function",
    "structure_misuse", "syntax", "other",
)


@dataclass
class EvalOutcome:
    source_id: str
    opt_level: str
    backend_id: str
    status: str
    error_class: str = "none"
    edit_similarity: float = 0.0
    readability: int | None = None
    exec_ms: int = 0

    def validate(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")
        if self.error_class not in ERROR_CLASSES:
            raise ValueError(f"bad error_class {self.error_class!r}")
        if (self.status == "Pass") != (self.error_class == "none"):
            raise ValueError(
                f"status {self.status} inconsistent with error_class {self.error_class}"
            )
        if self.error_class == "logic_assertion" and self.status != "AssertFail":
            raise ValueError("logic_assertion requires AssertFail")
        if self.error_class in ("undeclared_function", "structure_misuse") and (
            self.status not in ("CompileError", "LinkError")
        ):
            raise ValueError(f"{self.error_class} requires a compile or link failure")
        if not 0.0 <= self.edit_similarity <= 1.0:
            raise ValueError("edit_similarity out of [0,1]")
        if self.readability is not None and not 1 <= self.readability <= 5:
            raise ValueError("readability out of 1..5")

    def to_json(self, run_id: str | None = None) -> str:
        d = {
            "source_id": self.source_id,
            "opt_level": self.opt_level,
            "backend_id": self.backend_id,
            "status": self.status,
            "error_class": self.error_class,
            "edit_similarity": self.edit_similarity,
            "readability": self.readability,
            "exec_ms": self.exec_ms,
        }
        if run_id is not None:
            d["run_id"] = run_id
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> tuple["EvalOutcome", str | None]:
        d = json.loads(line)
        run_id = d.pop("run_id", None)
        return cls(**d), run_id


# ---------------------------------------------------------------------------
# Test-program assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssembledProgram:
    text: str
    renamed: bool


def _param_count(param_text: str) -> int:
    p = param_text.strip()
    if not p or p == "void":
        return 0
    return p.count(",") + 1


def _function_defs(code: str) -> list[tuple[str, int]]:
    defs = []
    for m in FUNC_DEF_RE.finditer(code):
        name = m.group(1)
        if name in ("if", "for", "while", "switch", "return", "sizeof", "else", "do"):
            continue
        defs.append((name, _param_count(m.group(2))))
    return defs


def assemble_test_program(candidate: Candidate, src: SourceFunction) -> AssembledProgram:
    """One translation unit: headers + candidate code + assertion driver.

    When the candidate defines the expected symbol, the code is used as-is.
    Otherwise a best-effort match (unique definition, or unique definition
    with the right parameter count) is renamed to the expected symbol and
    the rewrite is flagged.
    """
    if src.origin != "executable" or src.driver is None:
        raise ValueError(f"{src.id}: needs an executable-origin source with a driver")
    code = candidate.code.strip()
    if not code:
        raise UnusableCandidate(f"{src.id}: empty candidate")

    defs = _function_defs(code)
    names = [name for name, _ in defs]
    renamed = False
    if src.symbol not in names:
        expected_params = None
        own = _function_defs(src.code)
        if len(own) == 1:
            expected_params = own[0][1]
        matching = [n for n, np in defs if np == expected_params and n != "main"]
        non_main = [n for n in names if n != "main"]
        if len(non_main) == 1:
            rename_from = non_main[0]
        elif len(matching) == 1:
            rename_from = matching[0]
        else:
            raise UnusableCandidate(
                f"{src.id}: no plausible function named {src.symbol!r} in candidate "
                f"(found {names or 'none'})"
            )
        code = re.sub(rf"\b{re.escape(rename_from)}\b", src.symbol, code)
        renamed = True
        logger.warning("%s: renamed candidate function %s -> %s",
                       src.id, rename_from, src.symbol)

    return AssembledProgram(text=f"{src.headers}\n{code}\n{src.driver}\n", renamed=renamed)


# ---------------------------------------------------------------------------
# Sandboxed compile-link-run
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunResult:
    status: str
    exec_ms: int
    diagnostics: str


def _ulimit_wrapper(cmd: Sequence[str], limits: Limits) -> list[str]:
    # soft resource caps around the candidate process: CPU seconds, address
    # space, file size, no core dumps
    cpu_s = max(1, math.ceil(limits.run_timeout_s))
    ulimits = (
        f"ulimit -t {cpu_s + 1} -v {limits.memory_mb * 1024} -f 32768 -c 0"
    )
    quoted = " ".join(shlex.quote(c) for c in cmd)
    return ["bash", "-c", f"{ulimits}; exec {quoted}"]


def run_eval_case(
    program: str,
    limits: Limits | None = None,
    toolchain: Toolchain | None = None,
) -> RunResult:
    """Compile at O0, link, and execute one assembled test program."""
    limits = limits or Limits()
    toolchain = toolchain or Toolchain()
    with tempfile.TemporaryDirectory(prefix="eval-") as scratch:
        scratch_path = Path(scratch)
        c_file = scratch_path / "prog.c"
        obj_file = scratch_path / "prog.o"
        exe_file = scratch_path / "prog"
        c_file.write_text(program)

        compile_cmd = [toolchain.compiler, "-O0", *toolchain.extra_compile_flags,
                       "-c", str(c_file), "-o", str(obj_file)]
        try:
            proc = subprocess.run(
                compile_cmd, capture_output=True, text=True,
                timeout=limits.compile_timeout_s, cwd=scratch,
            )
        except FileNotFoundError:
            raise MissingTool(toolchain.compiler) from None
        except subprocess.TimeoutExpired:
            return RunResult("CompileError", 0, "compiler timed out")
        if proc.returncode != 0:
            return RunResult("CompileError", 0, proc.stderr)

        link_cmd = [toolchain.compiler, str(obj_file), "-o", str(exe_file),
                    *toolchain.extra_link_flags]
        try:
            proc = subprocess.run(
                link_cmd, capture_output=True, text=True,
                timeout=limits.compile_timeout_s, cwd=scratch,
            )
        except subprocess.TimeoutExpired:
            return RunResult("LinkError", 0, "linker timed out")
        if proc.returncode != 0:
            return RunResult("LinkError", 0, proc.stderr)

        run_cmd = _ulimit_wrapper([str(exe_file)], limits)
        started = time.perf_counter()
        try:
            proc = subprocess.run(
                run_cmd, capture_output=True, text=True,
                timeout=limits.run_timeout_s, cwd=scratch,
            )
        except subprocess.TimeoutExpired:
            elapsed = int((time.perf_counter() - started) * 1000)
            return RunResult("Timeout", elapsed, f"wall clock over {limits.run_timeout_s}s")
        elapsed = int((time.perf_counter() - started) * 1000)

        if proc.returncode == 0:
            return RunResult("Pass", elapsed, "")
        if proc.returncode == -signal.SIGXCPU:
            return RunResult("Timeout", elapsed, "CPU limit exceeded")
        if proc.returncode == -signal.SIGABRT and "assert" in proc.stderr.lower():
            return RunResult("AssertFail", elapsed, proc.stderr)
        return RunResult(
            "RuntimeError", elapsed,
            f"exit {proc.returncode}\n{proc.stderr}",
        )


# ---------------------------------------------------------------------------
# Error taxonomy
# ---------------------------------------------------------------------------

_STRUCTURE_PATTERNS = (
    "invalid use of undefined type",
    "dereferencing pointer to incomplete type",
    "has no member named",
    "invalid use of incomplete typedef",
    "storage size of",
    "array type has incomplete element type",
)
_UNDECLARED_PATTERNS = (
    "implicit declaration of function",
    "undeclared (first use",
    "undeclared here",
    "undefined reference to",
)
_SYNTAX_PATTERNS = (
    "expected declaration",
    "expected identifier",
    "expected expression",
    "expected ';'",
    "syntax error",
    "stray '",
    re.compile(r"expected .* before"),
)


def classify_error(status: str, diagnostics: str = "") -> str:
    """Map a failed outcome's diagnostics to the error taxonomy."""
    if status == "Pass":
        return "none"
    if status == "AssertFail":
        return "logic_assertion"
    if status in ("CompileError", "LinkError"):
        for pat in _STRUCTURE_PATTERNS:
            if pat in diagnostics:
                return "structure_misuse"
        for pat in _UNDECLARED_PATTERNS:
            if pat in diagnostics:
                return "undeclared_function"
        for pat in _SYNTAX_PATTERNS:
            if isinstance(pat, str):
                if pat in diagnostics:
                    return "syntax"
            elif pat.search(diagnostics):
                return "syntax"
        return "other"
    return "other"


# ---------------------------------------------------------------------------
# Edit similarity
# ---------------------------------------------------------------------------

def _levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        append = current.append
        for j, cb in enumerate(b, start=1):
            cost = previous[j - 1] if ca == cb else min(
                previous[j - 1], previous[j], current[j - 1]
            ) + 1
            append(cost)
        previous = current
    return previous[-1]


def edit_similarity(a: str, b: str) -> float:
    """1 - Levenshtein(a, b) / max(|a|, |b|) over characters; 1.0 when both empty."""
    if not a and not b:
        return 1.0
    return 1.0 - _levenshtein(a, b) / max(len(a), len(b))


# ---------------------------------------------------------------------------
# Readability parsing
# ---------------------------------------------------------------------------

_SCORE_LINE_RE = re.compile(r"^\s*SCORE:\s*([+-]?\d+)\s*$", re.MULTILINE)


def parse_readability(judge_reply: str) -> int:
    """The final `SCORE: <n>` line of a judge reply; out-of-range is an error."""
    matches = _SCORE_LINE_RE.findall(judge_reply)
    if not matches:
        raise UnparseableJudgement("no SCORE line found")
    if len(matches) > 1:
        logger.warning("multiple SCORE lines, keeping the last")
    value = int(matches[-1])
    if not 1 <= value <= 5:
        raise UnparseableJudgement(f"score {value} outside 1..5")
    return value


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def round_half_up(value, decimals: int = 2) -> str:
    """Exact half-up decimal rounding of a non-negative rational, as a string."""
    frac = value if isinstance(value, Fraction) else Fraction(str(value))
    scaled = frac * 10**decimals
    q, r = divmod(scaled.numerator, scaled.denominator)
    if 2 * r >= scaled.denominator:
        q += 1
    text = str(q).rjust(decimals + 1, "0")
    if decimals:
        return f"{text[:-decimals]}.{text[-decimals:]}"
    return text


@dataclass
class CellStats:
    passes: int = 0
    total: int = 0
    edit_sum: float = 0.0
    edit_n: int = 0
    rate_override: Fraction | None = None

    @property
    def rate(self) -> Fraction:
        if self.rate_override is not None:
            return self.rate_override
        if self.total == 0:
            return Fraction(0)
        return Fraction(self.passes, self.total)

    @property
    def edit_mean(self) -> float | None:
        if self.edit_n == 0:
            return None
        return self.edit_sum / self.edit_n


class RateTable:
    """Per-(backend, level) re-executability rates with per-backend averages.

    Rates are exact rationals internally; display rounding (half-up, two
    decimals, percent) happens only at rendering time.
    """

    def __init__(self):
        self.cells: dict[str, dict[str, CellStats]] = {}

    @property
    def backends(self) -> list[str]:
        return list(self.cells)

    def levels(self, backend_id: str) -> list[str]:
        present = self.cells[backend_id]
        ordered = [l for l in OPT_LEVELS if l in present]
        ordered += [l for l in present if l not in OPT_LEVELS]
        return ordered

    def cell(self, backend_id: str, level: str) -> CellStats:
        return self.cells.setdefault(backend_id, {}).setdefault(level, CellStats())

    def rate(self, backend_id: str, level: str) -> Fraction:
        return self.cells[backend_id][level].rate

    def avg(self, backend_id: str) -> Fraction:
        levels = self.levels(backend_id)
        rates = [self.cells[backend_id][l].rate for l in levels]
        return sum(rates, Fraction(0)) / len(rates)

    def edit_avg(self, backend_id: str) -> float | None:
        means = [
            self.cells[backend_id][l].edit_mean
            for l in self.levels(backend_id)
            if self.cells[backend_id][l].edit_mean is not None
        ]
        if not means:
            return None
        return sum(means) / len(means)

    def total(self, backend_id: str) -> int:
        return sum(c.total for c in self.cells[backend_id].values())

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[EvalOutcome]) -> "RateTable":
        table = cls()
        n = 0
        for o in outcomes:
            n += 1
            c = table.cell(o.backend_id, o.opt_level)
            c.total += 1
            if o.status == "Pass":
                c.passes += 1
            c.edit_sum += o.edit_similarity
            c.edit_n += 1
        if n == 0:
            raise EmptyRun("no outcomes to aggregate")
        return table

    @classmethod
    def from_rates(cls, backend_id: str, level_rates: dict, percent: bool = True) -> "RateTable":
        """Build a table from already-computed per-level rates (e.g. published
        numbers); values may be str, float, or Fraction."""
        table = cls()
        for level, value in level_rates.items():
            frac = value if isinstance(value, Fraction) else Fraction(str(value))
            if percent:
                frac /= 100
            table.cell(backend_id, level).rate_override = frac
        return table


def aggregate(outcomes: Iterable[EvalOutcome]) -> RateTable:
    """Cell rate = Pass / total per (backend, level); AVG = mean of level rates."""
    return RateTable.from_outcomes(outcomes)


# ---------------------------------------------------------------------------
# Length buckets
# ---------------------------------------------------------------------------

DEFAULT_BUCKET_EDGES = (0, 128, 256, 512, 1024)
LOW_CONFIDENCE_MIN_SAMPLES = 5


@dataclass
class LengthBucket:
    lo: int
    hi: int | None  # None = unbounded
    passes: int = 0
    total: int = 0

    @property
    def rate(self) -> Fraction:
        return Fraction(self.passes, self.total) if self.total else Fraction(0)

    @property
    def low_confidence(self) -> bool:
        return self.total < LOW_CONFIDENCE_MIN_SAMPLES

    @property
    def label(self) -> str:
        return f"[{self.lo},{self.hi})" if self.hi is not None else f"[{self.lo},inf)"


def length_buckets(
    outcomes: Iterable[EvalOutcome],
    pairs: Iterable[DecompPair],
    bucket_edges: Sequence[int] = DEFAULT_BUCKET_EDGES,
) -> list[LengthBucket]:
    """Re-executability grouped by input-token count of the matching pair."""
    edges = sorted(set(bucket_edges))
    if not edges:
        raise ValueError("bucket_edges must be non-empty")
    buckets = [
        LengthBucket(lo=edges[i], hi=edges[i + 1] if i + 1 < len(edges) else None)
        for i in range(len(edges))
    ]
    by_key = {(p.source_id, p.opt_level): p for p in pairs}
    for o in outcomes:
        pair = by_key.get((o.source_id, o.opt_level))
        if pair is None:
            raise ReportIntegrityError(
                f"outcome ({o.source_id}, {o.opt_level}) has no matching pair"
            )
        idx = max(0, bisect.bisect_right(edges, pair.token_count_input) - 1)
        buckets[idx].total += 1
        if o.status == "Pass":
            buckets[idx].passes += 1
    return buckets


# ---------------------------------------------------------------------------
# Evaluation orchestration
# ---------------------------------------------------------------------------

class EvalStats:
    """Run-level counters safe to bump from worker threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self.renamed = 0
        self.backend_failures = 0

    def bump(self, counter: str) -> None:
        with self._lock:
            setattr(self, counter, getattr(self, counter) + 1)


def _eval_one(
    pair: DecompPair,
    src: SourceFunction,
    backend: Backend,
    toolchain: Toolchain,
    limits: Limits,
    unit: CompiledUnit | None,
    stats: EvalStats,
) -> EvalOutcome:
    needs_unit = backend.kind in ("ghidra", "llm_refine")
    with tempfile.TemporaryDirectory(prefix="unit-") as scratch:
        try:
            if needs_unit and unit is None:
                unit = compile_function(src, pair.opt_level, "object",
                                        toolchain, out_dir=scratch)
            candidate = decompile(backend, unit, pair, symbol=src.symbol)
        except MissingTool:
            raise
        except DecompBenchError as exc:
            stats.bump("backend_failures")
            logger.warning("%s %s: backend failed: %s", pair.source_id, pair.opt_level, exc)
            return EvalOutcome(
                source_id=pair.source_id, opt_level=pair.opt_level,
                backend_id=backend.id, status="BackendFailure",
                error_class="other", edit_similarity=0.0,
            )

    sim = edit_similarity(candidate.code, pair.target_text)
    try:
        assembled = assemble_test_program(candidate, src)
    except UnusableCandidate as exc:
        return EvalOutcome(
            source_id=pair.source_id, opt_level=pair.opt_level,
            backend_id=backend.id, status="CompileError",
            error_class=classify_error("CompileError", str(exc)),
            edit_similarity=sim,
        )
    if assembled.renamed:
        stats.bump("renamed")
    result = run_eval_case(assembled.text, limits, toolchain)
    return EvalOutcome(
        source_id=pair.source_id, opt_level=pair.opt_level,
        backend_id=backend.id, status=result.status,
        error_class=classify_error(result.status, result.diagnostics),
        edit_similarity=sim, exec_ms=result.exec_ms,
    )


def evaluate_pairs(
    pairs: Sequence[DecompPair],
    sources_by_id: dict[str, SourceFunction],
    backend: Backend,
    toolchain: Toolchain | None = None,
    limits: Limits | None = None,
    jobs: int = 1,
    repeats: int = 1,
    units_by_key: dict[tuple[str, str], CompiledUnit] | None = None,
) -> tuple[list[EvalOutcome], EvalStats]:
    """Score every pair against its assertion driver with the given backend.

    Cases run on a bounded worker pool, one scratch dir each; outcome order
    follows input order. `repeats` reruns the whole set (meaningful only for
    stochastic backends); rates then average over runs.
    """
    toolchain = toolchain or Toolchain()
    limits = limits or Limits()
    stats = EvalStats()

    missing = [p.source_id for p in pairs if p.source_id not in sources_by_id]
    if missing:
        raise ReportIntegrityError(f"pairs without sources: {sorted(set(missing))[:5]}")

    def worker(pair: DecompPair) -> EvalOutcome:
        unit = None
        if units_by_key is not None:
            unit = units_by_key.get((pair.source_id, pair.opt_level))
        return _eval_one(
            pair, sources_by_id[pair.source_id], backend, toolchain, limits, unit, stats
        )

    outcomes: list[EvalOutcome] = []
    for _ in range(max(1, repeats)):
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes.extend(pool.map(worker, pairs))
        else:
            outcomes.extend(worker(p) for p in pairs)
    for o in outcomes:
        o.validate()
    return outcomes, stats


# ---------------------------------------------------------------------------
# Obfuscation comparison
# ---------------------------------------------------------------------------

TECHNIQUE_FLAGS = {
    "CFF": ("-mllvm", "-fla"),
    "BCF": ("-mllvm", "-bcf"),
}


@dataclass(frozen=True)
class ObfuscationConfig:
    technique: str  # CFF | BCF
    obfuscating_compiler: str
    extra_flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.technique not in TECHNIQUE_FLAGS:
            raise ValueError(f"technique must be one of {tuple(TECHNIQUE_FLAGS)}")

    @property
    def flags(self) -> tuple[str, ...]:
        return TECHNIQUE_FLAGS[self.technique] + self.extra_flags


def relative_drop(base, obf) -> Fraction | None:
    """(base - obf) / base as an exact rational; None when base is zero."""
    base = base if isinstance(base, Fraction) else Fraction(str(base))
    obf = obf if isinstance(obf, Fraction) else Fraction(str(obf))
    if base == 0:
        return None
    return (base - obf) / base


@dataclass
class ObfuscationResult:
    backend_id: str
    technique: str
    base: RateTable
    obfuscated: RateTable
    excluded: list[tuple[str, str]]  # (source_id, level) failing their own assertions

    def _rates(self, level: str) -> tuple[Fraction, Fraction] | None:
        try:
            return (
                self.base.rate(self.backend_id, level),
                self.obfuscated.rate(self.backend_id, level),
            )
        except KeyError:
            return None

    def drop(self, level: str) -> Fraction | None:
        rates = self._rates(level)
        if rates is None:
            return None
        return relative_drop(*rates)

    def drop_avg(self) -> Fraction | None:
        if (
            self.backend_id not in self.base.cells
            or self.backend_id not in self.obfuscated.cells
        ):
            return None
        return relative_drop(
            self.base.avg(self.backend_id), self.obfuscated.avg(self.backend_id)
        )


def _build_leg(
    sources: Sequence[SourceFunction],
    levels: Sequence[str],
    toolchain: Toolchain,
    limits: Limits,
    compiler_override: str | None,
    extra_flags: tuple[str, ...],
    gate_excluded: list[tuple[str, str]],
    scratch: str,
) -> tuple[list[DecompPair], dict[tuple[str, str], CompiledUnit]]:
    """Compile linked binaries (optionally with an obfuscating compiler),
    gate each on its own assertions, and derive asm pairs from the admitted
    binaries."""
    pairs: list[DecompPair] = []
    units: dict[tuple[str, str], CompiledUnit] = {}
    for src in sources:
        for level in levels:
            key = (src.id, level)
            try:
                unit = compile_function(
                    src, level, "linked_executable", toolchain,
                    out_dir=scratch, compiler_override=compiler_override,
                    extra_flags=extra_flags,
                )
                gate = _run_binary(unit.artifact_path, limits)
                if gate != 0:
                    gate_excluded.append(key)
                    logger.warning("%s %s: binary fails own assertions, excluded",
                                   src.id, level)
                    continue
                raw = disassemble(unit, src.symbol, toolchain)
                listing = normalize_asm(raw.text, source_id=src.id,
                                        opt_level=level, symbol=src.symbol)
            except MissingTool:
                raise
            except DecompBenchError as exc:
                gate_excluded.append(key)
                logger.warning("%s %s: excluded (%s)", src.id, level, exc)
                continue
            units[key] = unit
            pairs.append(DecompPair(
                source_id=src.id, opt_level=level, stage="executable",
                input_kind="asm", input_text=listing.text, target_text=src.code,
                token_count_input=listing.normalized_token_count,
                token_count_target=token_count(src.code),
            ))
    return pairs, units


def _run_binary(path: Path, limits: Limits) -> int:
    cmd = _ulimit_wrapper([str(path)], limits)
    try:
        proc = subprocess.run(cmd, capture_output=True, timeout=limits.run_timeout_s)
    except subprocess.TimeoutExpired:
        return -1
    return proc.returncode


def obfuscate_and_compare(
    sources: Sequence[SourceFunction],
    backend: Backend,
    cfg: ObfuscationConfig,
    toolchain: Toolchain | None = None,
    limits: Limits | None = None,
    levels: Sequence[str] = OPT_LEVELS,
    jobs: int = 1,
) -> ObfuscationResult:
    """Run the decompile+eval pipeline on plain and obfuscated builds.

    Obfuscated binaries must pass their own assertions before being scored;
    failures are excluded and counted, never held against the backend.
    """
    toolchain = toolchain or Toolchain()
    limits = limits or Limits()
    excluded: list[tuple[str, str]] = []
    sources_by_id = {s.id: s for s in sources}

    with tempfile.TemporaryDirectory(prefix="obf-") as scratch:
        base_dir = Path(scratch) / "base"
        obf_dir = Path(scratch) / "obf"
        base_dir.mkdir()
        obf_dir.mkdir()
        base_pairs, base_units = _build_leg(
            sources, levels, toolchain, limits, None, (), excluded, str(base_dir)
        )
        obf_pairs, obf_units = _build_leg(
            sources, levels, toolchain, limits,
            cfg.obfuscating_compiler, cfg.flags, excluded, str(obf_dir),
        )
        base_outcomes, _ = evaluate_pairs(
            base_pairs, sources_by_id, backend, toolchain, limits,
            jobs=jobs, units_by_key=base_units,
        )
        obf_outcomes, _ = evaluate_pairs(
            obf_pairs, sources_by_id, backend, toolchain, limits,
            jobs=jobs, units_by_key=obf_units,
        )

    return ObfuscationResult(
        backend_id=backend.id,
        technique=cfg.technique,
        base=RateTable.from_outcomes(base_outcomes) if base_outcomes else RateTable(),
        obfuscated=RateTable.from_outcomes(obf_outcomes) if obf_outcomes else RateTable(),
        excluded=excluded,
    )


def obfuscator_available(cfg: ObfuscationConfig) -> bool:
    """Probe: can the configured compiler build a trivial program with the
    technique's flags?"""
    with tempfile.TemporaryDirectory(prefix="obfprobe-") as scratch:
        probe = Path(scratch) / "probe.c"
        probe.write_text("int main(void){return 0;}\n")
        out = Path(scratch) / "probe"
        try:
            proc = subprocess.run(
                [cfg.obfuscating_compiler, *cfg.flags, str(probe), "-o", str(out)],
                capture_output=True, timeout=60,
            )
        except (OSError, subprocess.TimeoutExpired):
            return False
        return proc.returncode == 0 and out.exists()
