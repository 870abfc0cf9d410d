import re
import subprocess
from pathlib import Path

import pytest

from decompbench.config import OPT_LEVELS, Toolchain
from decompbench.corpus import (
    MIN_TARGET_TOKENS,
    SkipLog,
    SourceFunction,
    build_pairs,
    compile_function,
    disassemble,
    ingest_sources,
    normalize_asm,
    scan_symbol,
    token_count,
)
from decompbench.errors import (
    CompileFailed,
    EmptyListing,
    IngestError,
    MissingTool,
    NormalizationSuspect,
    SymbolNotFound,
)

HEX_ADDR_TOKEN = re.compile(r"^[0-9a-f]+:", re.MULTILINE)


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def test_ingest_filters_noncompiling(bad_mix_dir, toolchain):
    skips = SkipLog()
    records = ingest_sources(bad_mix_dir, "executable", toolchain, skips=skips)
    assert sorted(r.id for r in records) == ["array_sum", "gcd_euclid", "is_prime"]
    assert len(skips) == 1
    assert skips.entries[0][0] == "broken"


def test_ingest_empty_dir(tmp_path, toolchain, caplog):
    with caplog.at_level("WARNING"):
        records = ingest_sources(tmp_path, "executable", toolchain)
    assert records == []
    assert any("no function directories" in r.message for r in caplog.records)


def test_ingest_unreadable_dir(toolchain):
    with pytest.raises(NotADirectoryError):
        ingest_sources("/nonexistent/benchmark/dir", "executable", toolchain)


def test_ingest_executable_requires_driver(tmp_path, toolchain):
    d = tmp_path / "nodriver"
    d.mkdir()
    (d / "func.c").write_text("int ten_of(int x) { return x * 10 + 0 * x; }\n")
    (d / "headers.h").write_text("")
    skips = SkipLog()
    assert ingest_sources(tmp_path, "executable", toolchain, skips=skips) == []
    assert len(skips) == 1
    # the same record is fine as compilable origin
    records = ingest_sources(tmp_path, "compilable", toolchain)
    assert [r.id for r in records] == ["nodriver"]
    assert records[0].symbol == "ten_of"


def test_ingest_ambiguous_symbol_rejected(tmp_path, toolchain):
    d = tmp_path / "two_funcs"
    d.mkdir()
    (d / "func.c").write_text(
        "int first(int x) { return x + 1; }\nint second(int x) { return x + 2; }\n"
    )
    (d / "headers.h").write_text("")
    skips = SkipLog()
    assert ingest_sources(tmp_path, "compilable", toolchain, skips=skips) == []
    assert "exactly one function" in skips.entries[0][1]


def test_scan_symbol_variants():
    assert scan_symbol("int f(void) { return 0; }") == "f"
    assert scan_symbol("static long long big_one(int a, int b) {\n return a; }") == "big_one"
    assert scan_symbol("char *reverse(char *s) {\n return s; }") == "reverse"
    with pytest.raises(IngestError):
        scan_symbol("int x = 3;")


# ---------------------------------------------------------------------------
# compile
# ---------------------------------------------------------------------------

def test_compile_object_base_case(small_sources, toolchain, tmp_path):
    unit = compile_function(small_sources[0], "O0", "object", toolchain, out_dir=tmp_path)
    assert unit.kind == "object"
    assert unit.opt_level == "O0"
    assert Path(unit.artifact_path).stat().st_size > 0
    assert unit.compiler_id  # captured verbatim from the tool


def test_compile_linked_runs_clean(small_sources, toolchain, tmp_path):
    src = next(s for s in small_sources if s.id == "array_sum")
    unit = compile_function(src, "O2", "linked_executable", toolchain, out_dir=tmp_path)
    proc = subprocess.run([str(unit.artifact_path)], capture_output=True, timeout=10)
    assert proc.returncode == 0


def test_compile_levels_differ_bytewise(small_sources, toolchain, tmp_path):
    src = next(s for s in small_sources if s.id == "array_sum")  # loop-containing
    o0 = compile_function(src, "O0", "object", toolchain, out_dir=tmp_path)
    o3 = compile_function(src, "O3", "object", toolchain, out_dir=tmp_path)
    assert Path(o0.artifact_path).read_bytes() != Path(o3.artifact_path).read_bytes()


def test_compile_linked_requires_driver(toolchain, tmp_path):
    src = SourceFunction(
        id="x", code="int f(int a) { return a; }", headers="", driver=None,
        origin="compilable", symbol="f",
    )
    with pytest.raises(ValueError):
        compile_function(src, "O0", "linked_executable", toolchain, out_dir=tmp_path)


def test_compile_missing_compiler(small_sources, tmp_path):
    bad = Toolchain(compiler="gcc-definitely-not-here")
    with pytest.raises(MissingTool) as exc:
        compile_function(small_sources[0], "O0", "object", bad, out_dir=tmp_path)
    assert "gcc-definitely-not-here" in str(exc.value)


def test_compile_failure_captures_stderr(toolchain, tmp_path):
    src = SourceFunction(
        id="bad", code="int f(int a) { return b; }", headers="", driver=None,
        origin="compilable", symbol="f",
    )
    with pytest.raises(CompileFailed) as exc:
        compile_function(src, "O0", "object", toolchain, out_dir=tmp_path)
    assert "b" in exc.value.stderr


# ---------------------------------------------------------------------------
# disassemble
# ---------------------------------------------------------------------------

def test_disassemble_restricts_to_symbol(small_sources, toolchain, tmp_path):
    src = next(s for s in small_sources if s.id == "gcd_euclid")
    unit = compile_function(src, "O0", "object", toolchain, out_dir=tmp_path)
    listing = disassemble(unit, "gcd_euclid", toolchain)
    first = listing.text.splitlines()[0]
    assert first.endswith("<gcd_euclid>:")
    assert listing.symbol == "gcd_euclid"
    assert listing.raw_line_count > 3


def test_disassemble_symbol_not_found(small_sources, toolchain, tmp_path):
    unit = compile_function(small_sources[0], "O0", "object", toolchain, out_dir=tmp_path)
    with pytest.raises(SymbolNotFound) as exc:
        disassemble(unit, "no_such_symbol", toolchain)
    assert exc.value.available  # lists what is there


def test_disassemble_stripped_artifact(small_sources, toolchain, tmp_path):
    src = small_sources[0]
    unit = compile_function(src, "O0", "object", toolchain, out_dir=tmp_path)
    subprocess.run(["strip", "--strip-all", str(unit.artifact_path)], check=True)
    with pytest.raises(SymbolNotFound):
        disassemble(unit, src.symbol, toolchain)


def test_disassemble_two_line_add_golden(toolchain, tmp_path):
    # golden expectation pinned from one inspection of objdump output on an
    # O0 object of a two-line add function
    src = SourceFunction(
        id="tiny_add",
        code="int tiny_add(int a, int b) {\n    return a + b;\n}\n",
        headers="", driver=None, origin="compilable", symbol="tiny_add",
    )
    unit = compile_function(src, "O0", "object", toolchain, out_dir=tmp_path)
    listing = disassemble(unit, "tiny_add", toolchain)
    norm = normalize_asm(listing.text, symbol="tiny_add")
    mnemonics = [l.split("\t")[0] for l in norm.text.splitlines() if not l.endswith(":")]
    assert any(m.startswith("add") for m in mnemonics)
    assert "ret" in mnemonics


# ---------------------------------------------------------------------------
# normalize
# ---------------------------------------------------------------------------

def test_normalize_golden_line():
    listing = normalize_asm("  1129:\t55          \tpush %rbp")
    assert listing.text == "push\t%rbp"
    assert listing.normalized_token_count == 2


def test_normalize_block_header_becomes_label():
    raw = "0000000000001129 <func0>:\n  1129:\t55\tpush   %rbp"
    listing = normalize_asm(raw)
    assert listing.text.splitlines() == ["func0:", "push\t%rbp"]
    assert listing.symbol == "func0"


def test_normalize_strips_comments_and_encodings():
    raw = "  1158:\t48 8d 3d a5 0e 00 00 \tlea    0xea5(%rip),%rdi        # 2004 <x+0x4>"
    listing = normalize_asm(raw)
    assert listing.text == "lea\t0xea5(%rip),%rdi"


def test_normalize_idempotent_on_real_output(small_pairs):
    for pair in small_pairs:
        once = pair.input_text
        twice = normalize_asm(once).text
        assert twice == once


def test_normalize_empty_input():
    with pytest.raises(EmptyListing):
        normalize_asm("")


def test_normalize_suspect_on_garbage():
    garbage = "\n".join(f"?!{i} ###" for i in range(10))
    with pytest.raises(NormalizationSuspect):
        normalize_asm(garbage)


def test_normalize_drops_continuation_lines():
    raw = "  1129:\t55\tpush   %rbp\n  112a:\t00 00\n"
    listing = normalize_asm(raw)
    assert listing.text == "push\t%rbp"


def test_normalized_output_has_no_address_tokens(small_pairs):
    for pair in small_pairs:
        assert not HEX_ADDR_TOKEN.search(pair.input_text)


# ---------------------------------------------------------------------------
# pairs
# ---------------------------------------------------------------------------

def test_build_pairs_cardinality(minibench_dir, toolchain):
    sources = ingest_sources(minibench_dir, "executable", toolchain)[:5]
    skips = SkipLog()
    pairs = list(build_pairs(sources, OPT_LEVELS, "asm", toolchain, skips=skips))
    assert len(pairs) == 5 * 4
    assert len(skips) == 0
    # exactly one pair per (source, level)
    keys = {(p.source_id, p.opt_level) for p in pairs}
    assert len(keys) == 20


def test_build_pairs_short_target_filtered(toolchain):
    shorty = SourceFunction(
        id="shorty", code="int s(){return 0;}", headers="", driver=None,
        origin="compilable", symbol="s",
    )
    assert token_count(shorty.code) < MIN_TARGET_TOKENS
    skips = SkipLog()
    pairs = list(build_pairs([shorty], OPT_LEVELS, "asm", toolchain, skips=skips))
    assert pairs == []
    assert len(skips) == 1


def test_build_pairs_metadata(small_pairs, small_sources):
    by_id = {s.id: s for s in small_sources}
    for pair in small_pairs:
        assert pair.stage == "executable"
        assert pair.input_kind == "asm"
        assert pair.target_text == by_id[pair.source_id].code
        assert pair.token_count_target == token_count(pair.target_text)
        assert pair.token_count_input >= 1
        assert pair.token_count_target >= MIN_TARGET_TOKENS


def test_build_pairs_ghidra_needs_bridge(small_sources, toolchain):
    with pytest.raises(MissingTool):
        list(build_pairs(small_sources, ("O0",), "ghidra_pseudo", toolchain))


def test_build_pairs_pseudo_length_filter(small_sources, toolchain):
    def fake_pseudo(unit, symbol):
        return "tok " * 50

    skips = SkipLog()
    pairs = list(
        build_pairs(
            small_sources[:1], ("O0",), "ghidra_pseudo", toolchain,
            pseudo_fn=fake_pseudo, max_input_tokens=10, skips=skips,
        )
    )
    assert pairs == []
    assert len(skips) == 1
    assert "exceeds" in skips.entries[0][1]


def test_build_pairs_backend_failure_skips_pair(small_sources, toolchain):
    calls = {"n": 0}

    def flaky_pseudo(unit, symbol):
        calls["n"] += 1
        if unit.opt_level == "O1":
            raise RuntimeError("decompiler crashed")
        return "plausible pseudo code here"

    skips = SkipLog()
    pairs = list(
        build_pairs(
            small_sources[:1], OPT_LEVELS, "ghidra_pseudo", toolchain,
            pseudo_fn=flaky_pseudo, skips=skips,
        )
    )
    assert [p.opt_level for p in pairs] == ["O0", "O2", "O3"]
    assert len(skips) == 1


def test_pair_json_roundtrip(small_pairs):
    from decompbench.corpus import DecompPair

    for pair in small_pairs[:2]:
        again = DecompPair.from_json(pair.to_json())
        assert again == pair


def test_round_trip_executability(minibench_dir, toolchain, tmp_path):
    """Linked binaries at every level pass their own assertions."""
    sources = ingest_sources(minibench_dir, "executable", toolchain)
    chosen = [s for s in sources if s.id in ("fibonacci", "binary_search", "count_bits")]
    for src in chosen:
        for level in OPT_LEVELS:
            unit = compile_function(src, level, "linked_executable", toolchain, out_dir=tmp_path)
            proc = subprocess.run([str(unit.artifact_path)], capture_output=True, timeout=10)
            assert proc.returncode == 0, f"{src.id} at {level} failed"
