"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Criteria needing tools this machine lacks (a real Ghidra install, an
obfuscation-capable compiler) skip with a notice instead of failing.
"""

import json
import os
import random
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

from decompbench.backends import Backend, BackendConfig, ghidra_decompile
from decompbench.cli import main
from decompbench.config import OPT_LEVELS, Limits
from decompbench.corpus import build_pairs, compile_function, ingest_sources
from decompbench.dedup import (
    LshIndex,
    candidate_probability,
    dedup_corpus,
    estimate_jaccard,
    minhash_signature,
    permutation_params,
)
from decompbench.errors import DecompBenchError
from decompbench.harness import (
    ObfuscationConfig,
    RateTable,
    aggregate,
    edit_similarity,
    evaluate_pairs,
    obfuscate_and_compare,
    obfuscator_available,
    relative_drop,
    round_half_up,
)
from decompbench.prompts import render_end2end, render_refine
from decompbench.report import rate_table_markdown

from test_dedup import make_pair, words
from test_harness import oracle_levenshtein
from test_prompts import random_pair

EVAL_LIMITS = Limits(compile_timeout_s=30, run_timeout_s=10, memory_mb=512)
JOBS = max(2, (os.cpu_count() or 2))


@contextmanager
def criterion(number: int, label: str):
    try:
        yield
    except pytest.skip.Exception as exc:
        print(f"SKIP: criterion {number} - {label} ({exc})")
        raise
    except BaseException:
        print(f"FAIL: criterion {number} - {label}")
        raise
    print(f"PASS: criterion {number} - {label}")


# ---------------------------------------------------------------------------
# 1. harness endpoints on the mini-benchmark
# ---------------------------------------------------------------------------

def test_criterion_1_harness_endpoints(minibench_dir, toolchain):
    with criterion(1, "identity scores 100.00 and null 0.00 in every cell"):
        started = time.perf_counter()
        sources = ingest_sources(minibench_dir, "executable", toolchain)
        assert len(sources) >= 20, "mini-benchmark must hold at least 20 functions"
        pairs = list(build_pairs(sources, OPT_LEVELS, "asm", toolchain))
        assert len(pairs) == len(sources) * 4
        by_id = {s.id: s for s in sources}

        identity, _ = evaluate_pairs(
            pairs, by_id, Backend(id="identity", kind="identity"),
            toolchain, EVAL_LIMITS, jobs=JOBS,
        )
        null, _ = evaluate_pairs(
            pairs, by_id, Backend(id="null", kind="null"),
            toolchain, EVAL_LIMITS, jobs=JOBS,
        )
        table = aggregate(identity + null)
        for level in OPT_LEVELS:
            assert round_half_up(table.rate("identity", level) * 100, 2) == "100.00"
            assert round_half_up(table.rate("null", level) * 100, 2) == "0.00"
            assert table.rate("identity", level) == 1
            assert table.rate("null", level) == 0
        assert round_half_up(table.avg("identity") * 100, 2) == "100.00"
        assert round_half_up(table.avg("null") * 100, 2) == "0.00"

        elapsed = time.perf_counter() - started
        print(f"  ({len(sources)} functions x 4 levels, {elapsed:.1f}s)")
        assert elapsed < 300, "mini-benchmark must finish in under 5 minutes"


# ---------------------------------------------------------------------------
# 2. published-table arithmetic
# ---------------------------------------------------------------------------

def test_criterion_2_table_arithmetic():
    with criterion(2, "level-rate averaging reproduces 45.37 and 20.12"):
        end_model = RateTable.from_rates(
            "end_model", {"O0": "68.05", "O1": "39.51", "O2": "36.71", "O3": "37.20"}
        )
        assert round_half_up(end_model.avg("end_model") * 100, 2) == "45.37"
        ghidra_base = RateTable.from_rates(
            "ghidra_base", {"O0": "34.76", "O1": "16.46", "O2": "15.24", "O3": "14.02"}
        )
        assert round_half_up(ghidra_base.avg("ghidra_base") * 100, 2) == "20.12"


# ---------------------------------------------------------------------------
# 3. edit similarity vs DP oracle
# ---------------------------------------------------------------------------

def test_criterion_3_edit_similarity_oracle():
    with criterion(3, "edit similarity matches the DP oracle on 1000 pairs"):
        assert abs(edit_similarity("kitten", "sitting") - 0.5714) <= 0.0001

        rng = random.Random(1234)
        alphabet = "abcdef ()+;{}"
        for _ in range(1000):
            a = "".join(rng.choices(alphabet, k=rng.randint(0, 200)))
            b = "".join(rng.choices(alphabet, k=rng.randint(0, 200)))
            if not a and not b:
                expected = 1.0
            else:
                expected = 1 - oracle_levenshtein(a, b) / max(len(a), len(b))
            assert edit_similarity(a, b) == expected


# ---------------------------------------------------------------------------
# 4. MinHash fidelity
# ---------------------------------------------------------------------------

def _random_set_pair(rng):
    na = rng.randint(1, 200)
    nb = rng.randint(1, 200)
    ni = rng.randint(0, min(na, nb))
    pool = set()
    while len(pool) < na + nb - ni:
        pool.add(rng.getrandbits(64))
    pool = list(pool)
    a = frozenset(pool[:na])
    b = frozenset(pool[:ni] + pool[na:])
    return a, b, ni / (na + nb - ni)


def test_criterion_4_minhash_fidelity():
    with criterion(4, "estimator error, LSH recall formula, exact-dup dedup"):
        rng = random.Random(99)
        params = permutation_params(256, seed=7)
        errs = []
        for _ in range(1000):
            a, b, true_j = _random_set_pair(rng)
            sa = minhash_signature(a, 256, seed=7, _params=params)
            sb = minhash_signature(b, 256, seed=7, _params=params)
            errs.append(abs(estimate_jaccard(sa, sb) - true_j))
        mean_err = sum(errs) / len(errs)
        print(f"  (mean |estimate - true| = {mean_err:.4f})")
        assert mean_err < 0.02

        # banded-LSH candidate rate vs 1-(1-s^R)^B, 200 trials per s
        bands, rows = 32, 8
        for num, den in ((6, 20), (10, 20), (14, 20), (17, 20), (19, 20)):
            s = num / den
            hits = 0
            trials = 200
            for t in range(trials):
                pool = rng.sample(range(2**62), 20)
                shared, uniques = pool[:num], pool[num:]
                half = len(uniques) // 2
                a = frozenset(shared + uniques[:half])
                b = frozenset(shared + uniques[half:])
                assert len(a | b) == 20 and len(a & b) == num
                seed = rng.randrange(2**31)
                sa = minhash_signature(a, 256, seed=seed, source_id="a")
                sb = minhash_signature(b, 256, seed=seed, source_id="b")
                index = LshIndex(bands=bands, rows=rows)
                index.insert(sa)
                if "a" in index.candidates(sb):
                    hits += 1
            expected = candidate_probability(s, rows, bands)
            assert abs(hits / trials - expected) <= 0.1, f"s={s}"

        # exact-duplicate corpora keep first occurrences only, no false keeps
        for seed in (0, 1, 2):
            uniques = [make_pair(f"u{i}", " ".join(words(30, f"u{i}_"))) for i in range(10)]
            copies = [make_pair(f"c{i}", uniques[i % 10].target_text) for i in range(15)]
            kept, dropped, _ = dedup_corpus(uniques + copies, seed=seed)
            assert [p.source_id for p in kept] == [f"u{i}" for i in range(10)]
            assert len(dropped) == 15


# ---------------------------------------------------------------------------
# 5. obfuscation drop arithmetic
# ---------------------------------------------------------------------------

def test_criterion_5_obfuscation_drop_arithmetic():
    with criterion(5, "relative drop reproduces 0.902 and 0.780"):
        assert round_half_up(relative_drop("0.5274", "0.0519"), 3) == "0.902"
        assert round_half_up(relative_drop("0.5274", "0.1159"), 3) == "0.780"


# ---------------------------------------------------------------------------
# 6. Ghidra path (needs a real install)
# ---------------------------------------------------------------------------

def _real_ghidra_home():
    home = os.environ.get("GHIDRA_HOME", "")
    if home and (Path(home) / "support" / "analyzeHeadless").exists():
        return home
    return ""


def test_criterion_6_ghidra_path(minibench_dir, toolchain, tmp_path):
    with criterion(6, "Ghidra pseudo-code extraction and Table-3-shaped report"):
        home = _real_ghidra_home()
        if not home:
            pytest.skip("notice: GHIDRA_HOME not set or analyzeHeadless missing; "
                        "install Ghidra to exercise this criterion")
        config = BackendConfig.from_env()
        sources = ingest_sources(minibench_dir, "executable", toolchain)
        extracted = 0
        for src in sources:
            unit = compile_function(src, "O0", "object", toolchain, out_dir=tmp_path)
            try:
                pseudo = ghidra_decompile(unit, src.symbol, config)
                if pseudo.strip():
                    extracted += 1
            except DecompBenchError:
                pass
        assert extracted / len(sources) >= 0.95

        pairs = list(build_pairs(sources, OPT_LEVELS, "asm", toolchain))
        by_id = {s.id: s for s in sources}
        ghidra_outcomes, _ = evaluate_pairs(
            pairs, by_id, Backend(id="ghidra", kind="ghidra", config=config),
            toolchain, EVAL_LIMITS, jobs=JOBS,
        )
        identity_outcomes, _ = evaluate_pairs(
            pairs, by_id, Backend(id="identity", kind="identity"),
            toolchain, EVAL_LIMITS, jobs=JOBS,
        )
        table = aggregate(ghidra_outcomes + identity_outcomes)
        assert table.avg("ghidra") < table.avg("identity") == 1
        md = rate_table_markdown(table)
        assert "| Backend | O0 | O1 | O2 | O3 | AVG |" in md
        assert any(l.startswith("| ghidra") for l in md.splitlines())


# ---------------------------------------------------------------------------
# 7. obfuscation gate (needs an obfuscating compiler)
# ---------------------------------------------------------------------------

def _obfuscation_cfg():
    compiler = os.environ.get("OBFUSCATING_CC", "clang")
    if shutil.which(compiler) is None:
        return None
    cfg = ObfuscationConfig("CFF", compiler)
    return cfg if obfuscator_available(cfg) else None


def test_criterion_7_obfuscation_gate(minibench_dir, toolchain):
    with criterion(7, "gate admits only assertion-passing obfuscated binaries"):
        cfg = _obfuscation_cfg()
        if cfg is None:
            pytest.skip("notice: no obfuscation-capable compiler found (set "
                        "OBFUSCATING_CC to an Obfuscator-LLVM clang); criterion "
                        "skipped")
        sources = ingest_sources(minibench_dir, "executable", toolchain)[:5]
        backend_kind = "ghidra" if _real_ghidra_home() else "identity"
        backend = Backend(id=backend_kind, kind=backend_kind,
                          config=BackendConfig.from_env())
        result = obfuscate_and_compare(
            sources, backend, cfg, toolchain, EVAL_LIMITS, levels=("O0", "O2"),
            jobs=JOBS,
        )
        # gate property: an admitted binary re-passes its own assertions
        admitted = {(s.id, l) for s in sources for l in ("O0", "O2")} - set(result.excluded)
        assert admitted, "every obfuscated binary was excluded; nothing admitted"
        if backend_kind == "ghidra":
            assert result.obfuscated.avg("ghidra") <= result.base.avg("ghidra")
        else:
            assert result.drop_avg() == 0


# ---------------------------------------------------------------------------
# 8. template byte-exactness
# ---------------------------------------------------------------------------

def test_criterion_8_template_bytes():
    with criterion(8, "prompt templates byte-exact, loss spans on 1000 records"):
        rec = render_end2end(make_prompt_pair(), "infer")
        assert "# This is the assembly code:" in rec.text
        assert "# What is the source code?" in rec.text
        refine = render_refine("undefined8 f(void) { return 0; }", "infer")
        assert refine.text.startswith(
            "Generate linux compilable C/C++ code of the main and other "
            "functions in the supplied snippet without using goto, fix any "
            "missing headers. Do not explain anything."
        )
        rng = random.Random(4321)
        for _ in range(1000):
            pair = random_pair(rng)
            train = render_end2end(pair, "train")
            assert train.loss_text() == pair.target_text
            start, end = train.loss_span
            assert train.text[start:end] == pair.target_text


def make_prompt_pair():
    from decompbench.corpus import DecompPair

    return DecompPair(
        source_id="p", opt_level="O0", stage="executable", input_kind="asm",
        input_text="endbr64\nret", target_text="int f(void) { return 0; }",
        token_count_input=2, token_count_target=6,
    )


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    with criterion(9, "identical manifests give byte-identical pairs and tables"):
        src_dir = tmp_path / "src"
        from minibench import materialize

        materialize(src_dir, names=("array_sum", "gcd_euclid", "abs_diff",
                                    "digit_sum", "count_bits"))
        corpora = []
        for name in ("c1", "c2"):
            out = tmp_path / name
            assert main(["build-corpus", str(src_dir), str(out)]) == 0
            corpora.append(out)
        assert (corpora[0] / "pairs.jsonl").read_bytes() == \
            (corpora[1] / "pairs.jsonl").read_bytes()
        m1 = json.loads((corpora[0] / "manifest.json").read_text())
        m2 = json.loads((corpora[1] / "manifest.json").read_text())
        assert m1["run_id"] == m2["run_id"]

        evals = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            assert main([
                "evaluate", str(corpora[0] / "pairs.jsonl"),
                "--src-dir", str(src_dir), "--out", str(out),
                "--backend", "identity", "--jobs", str(JOBS), "--no-figures",
            ]) == 0
            evals.append(out)
        assert (evals[0] / "report.csv").read_bytes() == (evals[1] / "report.csv").read_bytes()
        assert (evals[0] / "report.md").read_bytes() == (evals[1] / "report.md").read_bytes()
