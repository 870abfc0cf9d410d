"""Source ingestion, compilation, disassembly, and pair construction.

Turns a directory of standalone C functions into compiled artifacts,
normalized assembly listings, and (input, source) record pairs at the four
GCC optimization levels.

On-disk source layout (one directory per function):

    <dir>/<id>/func.c      the function definition
    <dir>/<id>/headers.h   include/typedef preamble needed to compile it
    <dir>/<id>/driver.c    optional: a `main` with assertions (executable origin)
"""

from __future__ import annotations

import json
import logging
import re
import subprocess
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .config import OPT_LEVELS, Toolchain, tool_version
from .errors import (
    CompileFailed,
    EmptyListing,
    IngestError,
    MissingTool,
    NormalizationSuspect,
    SymbolNotFound,
)

logger = logging.getLogger(__name__)

ORIGINS = ("compilable", "executable")
UNIT_KINDS = ("object", "linked_executable")
INPUT_KINDS = ("asm", "ghidra_pseudo")

# Records whose function source is shorter than this many whitespace tokens
# are dropped during pair construction.
MIN_TARGET_TOKENS = 10

# A C function definition: return type words, the name, a parameter list,
# then an opening brace. Deliberately simple; sources that defeat it are
# rejected at ingest rather than guessed at.
FUNC_DEF_RE = re.compile(
    r"^[ \t]*(?:[A-Za-z_][A-Za-z0-9_]*[ \t\*]+)+\(?\*?([A-Za-z_][A-Za-z0-9_]*)\)?"
    r"[ \t]*\(([^;{}]*)\)\s*\{",
    re.MULTILINE,
)

_KEYWORD_NOT_NAMES = {"if", "for", "while", "switch", "return", "sizeof", "else", "do"}


def token_count(text: str) -> int:
    """Whitespace-delimited token count (the toolkit's only tokenizer)."""
    return len(text.split())


def scan_function_names(code: str) -> list[str]:
    """Names of all top-level-looking function definitions in `code`."""
    names = []
    for m in FUNC_DEF_RE.finditer(code):
        name = m.group(1)
        if name not in _KEYWORD_NOT_NAMES:
            names.append(name)
    return names


def scan_symbol(code: str) -> str:
    """The single function name defined by `code`; ambiguity is an error."""
    names = scan_function_names(code)
    if len(names) != 1:
        raise IngestError(
            f"expected exactly one function definition, found {len(names)}: {names}"
        )
    return names[0]


class SkipLog:
    """Collector for per-record skips; keeps (id, reason) in arrival order."""

    def __init__(self):
        self.entries: list[tuple[str, str]] = []

    def add(self, record_id: str, reason: str) -> None:
        self.entries.append((record_id, reason))
        logger.warning("skipped %s: %s", record_id, reason)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class SourceFunction:
    """One standalone C function plus the preamble and test driver it needs."""

    id: str
    code: str
    headers: str
    driver: str | None
    origin: str  # compilable | executable
    symbol: str

    @property
    def ground_truth_program(self) -> str:
        if self.driver is None:
            raise ValueError(f"{self.id}: no driver")
        return f"{self.headers}\n{self.code}\n{self.driver}\n"


@dataclass(frozen=True)
class CompiledUnit:
    source_id: str
    opt_level: str
    kind: str  # object | linked_executable
    artifact_path: Path
    compiler_id: str


@dataclass(frozen=True)
class AsmListing:
    """Disassembly of one function. Invariants (no address tokens,
    normalized_token_count >= 1) hold for listings produced by
    normalize_asm; disassemble() returns the raw form with
    normalized_token_count == 0."""

    source_id: str
    opt_level: str
    text: str
    symbol: str
    raw_line_count: int
    normalized_token_count: int


PAIR_FIELDS = (
    "source_id",
    "opt_level",
    "stage",
    "input_kind",
    "input_text",
    "target_text",
    "token_count_input",
    "token_count_target",
)


@dataclass(frozen=True)
class DecompPair:
    source_id: str
    opt_level: str
    stage: str  # compilable | executable
    input_kind: str  # asm | ghidra_pseudo
    input_text: str
    target_text: str
    token_count_input: int
    token_count_target: int

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps({k: d[k] for k in PAIR_FIELDS})

    @classmethod
    def from_json(cls, line: str) -> "DecompPair":
        return cls(**json.loads(line))


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------

def _trial_compile(src_text: str, toolchain: Toolchain) -> None:
    """Compile `src_text` to an object at O0 in a scratch dir; raise on failure."""
    with tempfile.TemporaryDirectory(prefix="ingest-") as scratch:
        unit = Path(scratch) / "unit.c"
        unit.write_text(src_text)
        cmd = [toolchain.compiler, "-O0", *toolchain.extra_compile_flags,
               "-c", str(unit), "-o", str(Path(scratch) / "unit.o")]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=60)
        except FileNotFoundError:
            raise MissingTool(toolchain.compiler) from None
        if proc.returncode != 0:
            raise CompileFailed("trial compile failed", stderr=proc.stderr)


def ingest_sources(
    src_dir: str | Path,
    origin: str,
    toolchain: Toolchain | None = None,
    skips: SkipLog | None = None,
) -> list[SourceFunction]:
    """Load every function directory under `src_dir` that passes an O0 trial
    compile. Rejects are logged with diagnostics and counted, not returned."""
    if origin not in ORIGINS:
        raise ValueError(f"origin must be one of {ORIGINS}, got {origin!r}")
    toolchain = toolchain or Toolchain()
    skips = skips if skips is not None else SkipLog()

    root = Path(src_dir)
    if not root.is_dir():
        raise NotADirectoryError(f"source directory not readable: {root}")

    records: list[SourceFunction] = []
    entries = sorted(p for p in root.iterdir() if p.is_dir())
    if not entries:
        logger.warning("source directory %s contains no function directories", root)
        return records

    for entry in entries:
        rec_id = entry.name
        func_path = entry / "func.c"
        headers_path = entry / "headers.h"
        driver_path = entry / "driver.c"
        try:
            if not func_path.is_file():
                raise IngestError("missing func.c")
            code = func_path.read_text()
            headers = headers_path.read_text() if headers_path.is_file() else ""
            driver = driver_path.read_text() if driver_path.is_file() else None
            if origin == "executable" and driver is None:
                raise IngestError("origin=executable requires driver.c")
            symbol = scan_symbol(code)
            _trial_compile(f"{headers}\n{code}", toolchain)
        except MissingTool:
            raise
        except CompileFailed as exc:
            skips.add(rec_id, f"trial compile failed:\n{exc.stderr}")
            continue
        except IngestError as exc:
            skips.add(rec_id, str(exc))
            continue
        records.append(
            SourceFunction(
                id=rec_id, code=code, headers=headers, driver=driver,
                origin=origin, symbol=symbol,
            )
        )
    return records


# ---------------------------------------------------------------------------
# Compile
# ---------------------------------------------------------------------------

def compile_function(
    src: SourceFunction,
    opt_level: str,
    kind: str,
    toolchain: Toolchain | None = None,
    out_dir: str | Path | None = None,
    compiler_override: str | None = None,
    extra_flags: Iterable[str] = (),
) -> CompiledUnit:
    """Compile one source function at `opt_level` into an object file or a
    linked executable. Compilation happens in a private scratch directory;
    only the artifact is moved to `out_dir`.

    `compiler_override`/`extra_flags` let the obfuscation pipeline swap in a
    different compiler and pass flags while keeping artifact handling.
    """
    if opt_level not in OPT_LEVELS:
        raise ValueError(f"opt_level must be one of {OPT_LEVELS}, got {opt_level!r}")
    if kind not in UNIT_KINDS:
        raise ValueError(f"kind must be one of {UNIT_KINDS}, got {kind!r}")
    if kind == "linked_executable" and src.driver is None:
        raise ValueError(f"{src.id}: linked_executable requires a driver")

    toolchain = toolchain or Toolchain()
    compiler = compiler_override or toolchain.compiler
    out_root = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="units-"))
    out_root.mkdir(parents=True, exist_ok=True)
    suffix = "o" if kind == "object" else "bin"
    artifact = out_root / f"{src.id}.{opt_level}.{suffix}"

    if kind == "object":
        source_text = f"{src.headers}\n{src.code}\n"
    else:
        source_text = src.ground_truth_program

    with tempfile.TemporaryDirectory(prefix="compile-") as scratch:
        unit = Path(scratch) / "unit.c"
        unit.write_text(source_text)
        cmd = [compiler, f"-{opt_level}", *toolchain.extra_compile_flags, *extra_flags]
        if kind == "object":
            cmd += ["-c", str(unit), "-o", str(artifact)]
        else:
            cmd += [str(unit), "-o", str(artifact), *toolchain.extra_link_flags]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=120)
        except FileNotFoundError:
            raise MissingTool(compiler) from None
        if proc.returncode != 0:
            raise CompileFailed(
                f"{src.id} at {opt_level} ({kind}): compiler exited {proc.returncode}",
                stderr=proc.stderr,
            )

    if not artifact.exists() or artifact.stat().st_size == 0:
        raise CompileFailed(f"{src.id} at {opt_level}: artifact missing or empty")
    return CompiledUnit(
        source_id=src.id, opt_level=opt_level, kind=kind,
        artifact_path=artifact, compiler_id=tool_version(compiler) or compiler,
    )


# ---------------------------------------------------------------------------
# Disassemble
# ---------------------------------------------------------------------------

_BLOCK_HEADER_RE = re.compile(r"^[0-9a-f]+\s+<([^>]+)>:\s*$")


def disassemble(
    unit: CompiledUnit, symbol: str, toolchain: Toolchain | None = None
) -> AsmListing:
    """Run the disassembler and return the raw listing restricted to `symbol`."""
    toolchain = toolchain or Toolchain()
    if not Path(unit.artifact_path).exists():
        raise FileNotFoundError(f"artifact missing: {unit.artifact_path}")
    cmd = [toolchain.objdump, "-d", str(unit.artifact_path)]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=60)
    except FileNotFoundError:
        raise MissingTool(toolchain.objdump) from None
    if proc.returncode != 0:
        raise CompileFailed(
            f"disassembler exited {proc.returncode}", stderr=proc.stderr
        )

    blocks: dict[str, list[str]] = {}
    current: str | None = None
    for line in proc.stdout.splitlines():
        m = _BLOCK_HEADER_RE.match(line.strip())
        if m:
            current = m.group(1)
            blocks[current] = [line.rstrip()]
            continue
        if current is not None:
            if not line.strip():
                current = None
                continue
            blocks[current].append(line.rstrip())

    if symbol not in blocks:
        raise SymbolNotFound(symbol, available=sorted(blocks))
    text = "\n".join(blocks[symbol])
    return AsmListing(
        source_id=unit.source_id, opt_level=unit.opt_level, text=text,
        symbol=symbol, raw_line_count=len(blocks[symbol]), normalized_token_count=0,
    )


# ---------------------------------------------------------------------------
# Normalize
# ---------------------------------------------------------------------------

# `  1129:\t55 48 89 e5\tpush   %rbp`  -> groups (addr, bytes, instr)
_INSTR_LINE_RE = re.compile(
    r"^\s*([0-9a-f]+):\s*((?:[0-9a-f]{2}\s+)*)(\S.*)?$"
)
_NORMALIZED_LABEL_RE = re.compile(r"^[\w.@$><+]+:$")
_NOISE_SUBSTRINGS = ("file format ", "Disassembly of section ")
MAX_DROPPED_FRACTION = 0.20


def _clean_instruction(mnemonic: str, operands: str) -> str:
    # trailing `# ...` disassembler comments carry run-specific addresses
    operands = operands.split("#", 1)[0]
    operands = " ".join(operands.split())
    if operands:
        return f"{mnemonic}\t{operands}"
    return mnemonic


def normalize_asm(
    raw_listing: str,
    source_id: str = "",
    opt_level: str = "O0",
    symbol: str = "",
) -> AsmListing:
    """Normalize disassembler output: strip address and encoding columns,
    keep `mnemonic<TAB>operands` lines and `label:` lines, drop comments.
    Idempotent: already-normalized text passes through unchanged."""
    raw_lines = raw_listing.splitlines()
    out_lines: list[str] = []
    dropped = 0
    considered = 0

    for line in raw_lines:
        stripped = line.strip()
        if not stripped or stripped == "...":
            continue
        if any(s in stripped for s in _NOISE_SUBSTRINGS):
            continue

        header = _BLOCK_HEADER_RE.match(stripped)
        if header:
            out_lines.append(f"{header.group(1)}:")
            continue

        # address-prefixed lines first, so a bare hex `1129:` can never
        # survive as a label
        m = _INSTR_LINE_RE.match(line.rstrip())
        if m:
            rest = (m.group(3) or "").strip()
            if not rest or re.fullmatch(r"[0-9a-f]{2}(?:\s+[0-9a-f]{2})*", rest):
                # encoding-continuation line: bytes without a mnemonic
                continue
            considered += 1
            parts = rest.split(None, 1)
            out_lines.append(_clean_instruction(parts[0], parts[1] if len(parts) > 1 else ""))
            continue

        if _NORMALIZED_LABEL_RE.match(stripped):
            out_lines.append(stripped)
            continue

        # already-normalized instruction, or free-form text
        considered += 1
        parts = stripped.split(None, 1)
        mnemonic = parts[0]
        if re.fullmatch(r"[a-z][a-z0-9.]*", mnemonic):
            out_lines.append(_clean_instruction(mnemonic, parts[1] if len(parts) > 1 else ""))
        else:
            dropped += 1

    if considered and dropped / considered > MAX_DROPPED_FRACTION:
        raise NormalizationSuspect(
            f"{dropped}/{considered} lines unparseable; input does not look like "
            "disassembler output"
        )

    text = "\n".join(out_lines)
    n_tokens = token_count(text)
    if n_tokens < 1:
        raise EmptyListing("normalization produced an empty listing")
    if not symbol:
        first_label = next((l[:-1] for l in out_lines if l.endswith(":")), "")
        symbol = first_label
    return AsmListing(
        source_id=source_id, opt_level=opt_level, text=text, symbol=symbol,
        raw_line_count=len(raw_lines), normalized_token_count=n_tokens,
    )


# ---------------------------------------------------------------------------
# Pairs
# ---------------------------------------------------------------------------

def build_pairs(
    sources: Iterable[SourceFunction],
    levels: Iterable[str] = OPT_LEVELS,
    input_kind: str = "asm",
    toolchain: Toolchain | None = None,
    pseudo_fn: Callable[[CompiledUnit, str], str] | None = None,
    max_input_tokens: int | None = None,
    skips: SkipLog | None = None,
) -> Iterator[DecompPair]:
    """Emit one DecompPair per (source, level).

    input_kind="asm": compile to an object, disassemble, normalize.
    input_kind="ghidra_pseudo": `pseudo_fn(unit, symbol)` supplies the
    decompiler pseudo-code (wired to the Ghidra backend by the CLI), and
    inputs longer than `max_input_tokens` are dropped.

    Targets shorter than MIN_TARGET_TOKENS tokens are dropped. Per-pair
    failures are skipped and counted; the stream never aborts.
    """
    if input_kind not in INPUT_KINDS:
        raise ValueError(f"input_kind must be one of {INPUT_KINDS}, got {input_kind!r}")
    if input_kind == "ghidra_pseudo" and pseudo_fn is None:
        raise MissingTool("ghidra", "ghidra_pseudo pairs need a configured bridge")
    toolchain = toolchain or Toolchain()
    skips = skips if skips is not None else SkipLog()
    levels = tuple(levels)

    with tempfile.TemporaryDirectory(prefix="pairs-") as scratch:
        for src in sources:
            n_target = token_count(src.code)
            if n_target < MIN_TARGET_TOKENS:
                skips.add(src.id, f"target below {MIN_TARGET_TOKENS} tokens ({n_target})")
                continue
            for level in levels:
                try:
                    unit = compile_function(
                        src, level, "object", toolchain, out_dir=scratch
                    )
                    if input_kind == "asm":
                        raw = disassemble(unit, src.symbol, toolchain)
                        listing = normalize_asm(
                            raw.text, source_id=src.id, opt_level=level, symbol=src.symbol
                        )
                        input_text = listing.text
                        n_input = listing.normalized_token_count
                    else:
                        input_text = pseudo_fn(unit, src.symbol)
                        n_input = token_count(input_text)
                        if max_input_tokens is not None and n_input > max_input_tokens:
                            skips.add(src.id, f"{level}: input exceeds {max_input_tokens} tokens")
                            continue
                except MissingTool:
                    raise
                except Exception as exc:  # per-pair failures never abort the stream
                    skips.add(src.id, f"{level}: {exc}")
                    continue
                yield DecompPair(
                    source_id=src.id,
                    opt_level=level,
                    stage=src.origin,
                    input_kind=input_kind,
                    input_text=input_text,
                    target_text=src.code,
                    token_count_input=n_input,
                    token_count_target=n_target,
                )


def write_pairs_jsonl(pairs: Iterable[DecompPair], path: str | Path) -> int:
    """Write pairs as UTF-8 JSON lines; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(pair.to_json())
            fh.write("\n")
            n += 1
    return n


def read_pairs_jsonl(path: str | Path) -> list[DecompPair]:
    with open(path, encoding="utf-8") as fh:
        return [DecompPair.from_json(line) for line in fh if line.strip()]
