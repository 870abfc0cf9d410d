"""decompbench: corpus construction and re-executability evaluation for
binary decompilation backends."""

__version__ = "0.1.0"

from .backends import Backend, BackendConfig, Candidate, decompile, extract_code
from .corpus import (
    AsmListing,
    CompiledUnit,
    DecompPair,
    SourceFunction,
    build_pairs,
    compile_function,
    disassemble,
    ingest_sources,
    normalize_asm,
)
from .dedup import (
    LshIndex,
    MinHashSignature,
    ShingleSet,
    dedup_corpus,
    estimate_jaccard,
    minhash_signature,
    shingle,
)
from .harness import (
    EvalOutcome,
    ObfuscationConfig,
    RateTable,
    aggregate,
    assemble_test_program,
    classify_error,
    edit_similarity,
    evaluate_pairs,
    length_buckets,
    obfuscate_and_compare,
    parse_readability,
    relative_drop,
    run_eval_case,
)
from .prompts import (
    PromptRecord,
    render_end2end,
    render_readability_judge,
    render_refine,
)

__all__ = [
    "AsmListing",
    "Backend",
    "BackendConfig",
    "Candidate",
    "CompiledUnit",
    "DecompPair",
    "EvalOutcome",
    "LshIndex",
    "MinHashSignature",
    "ObfuscationConfig",
    "PromptRecord",
    "RateTable",
    "ShingleSet",
    "SourceFunction",
    "aggregate",
    "assemble_test_program",
    "build_pairs",
    "classify_error",
    "compile_function",
    "decompile",
    "dedup_corpus",
    "disassemble",
    "edit_similarity",
    "estimate_jaccard",
    "evaluate_pairs",
    "extract_code",
    "ingest_sources",
    "length_buckets",
    "minhash_signature",
    "normalize_asm",
    "obfuscate_and_compare",
    "parse_readability",
    "relative_drop",
    "render_end2end",
    "render_readability_judge",
    "render_refine",
    "run_eval_case",
    "shingle",
]
