"""Near-duplicate removal over pair targets: MinHash signatures + banded LSH.

The hash family is pinned so corpora are reproducible bit-exactly across
runs and machines:

* shingles: blake2b (8-byte digest, big-endian) of each k-token window,
  tokens being whitespace-delimited;
* permutations: P multiply-shift maps h_i(x) = (a_i * x + b_i) mod 2^64
  with odd a_i, where (a_i, b_i) come from `random.Random(seed)` via
  successive getrandbits(64) calls (a first, then b, per permutation).
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import DecompPair
from .errors import EmptyDocument, IncomparableSignatures

logger = logging.getLogger(__name__)

DEFAULT_K = 5
DEFAULT_PERMUTATIONS = 256
DEFAULT_BANDS = 32
DEFAULT_ROWS = 8
DEFAULT_THRESHOLD = 0.85


@dataclass(frozen=True)
class ShingleSet:
    source_id: str
    shingles: frozenset[int]


@dataclass(frozen=True)
class MinHashSignature:
    source_id: str
    seed: int
    values: tuple[int, ...]

    @property
    def num_permutations(self) -> int:
        return len(self.values)


def _hash64(text: str) -> int:
    return int.from_bytes(
        hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big"
    )


def shingle(text: str, k: int = DEFAULT_K) -> ShingleSet:
    """Hashes of all consecutive k-token windows of `text`.

    Texts shorter than k tokens yield the single hash of the whole text.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    tokens = text.split()
    if len(tokens) < k:
        return ShingleSet(source_id="", shingles=frozenset({_hash64(text)}))
    hashes = frozenset(
        _hash64(" ".join(tokens[i : i + k])) for i in range(len(tokens) - k + 1)
    )
    return ShingleSet(source_id="", shingles=hashes)


def permutation_params(num_permutations: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """The (a, b) coefficient arrays of the seeded multiply-shift family."""
    rng = random.Random(seed)
    a = np.empty(num_permutations, dtype=np.uint64)
    b = np.empty(num_permutations, dtype=np.uint64)
    for i in range(num_permutations):
        a[i] = rng.getrandbits(64) | 1
        b[i] = rng.getrandbits(64)
    return a, b


def minhash_signature(
    shingles: ShingleSet | frozenset[int] | set[int],
    num_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    source_id: str = "",
    _params: tuple[np.ndarray, np.ndarray] | None = None,
) -> MinHashSignature:
    """Per-permutation minima over the shingle hashes.

    `_params` lets batch callers reuse the coefficient arrays; the values
    are identical to recomputing them from `seed`.
    """
    if num_permutations < 1:
        raise ValueError(f"num_permutations must be >= 1, got {num_permutations}")
    if isinstance(shingles, ShingleSet):
        source_id = source_id or shingles.source_id
        shingles = shingles.shingles
    if not shingles:
        raise EmptyDocument("cannot sign an empty shingle set")
    a, b = _params if _params is not None else permutation_params(num_permutations, seed)
    x = np.fromiter(shingles, dtype=np.uint64, count=len(shingles))
    # uint64 arithmetic wraps mod 2^64, which is exactly the family definition
    mins = (a[:, None] * x[None, :] + b[:, None]).min(axis=1)
    return MinHashSignature(source_id=source_id, seed=seed, values=tuple(int(v) for v in mins))


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    """Fraction of equal signature positions; unbiased for the true Jaccard."""
    if a.num_permutations != b.num_permutations or a.seed != b.seed:
        raise IncomparableSignatures(
            f"P={a.num_permutations}/seed={a.seed} vs P={b.num_permutations}/seed={b.seed}"
        )
    equal = sum(1 for x, y in zip(a.values, b.values) if x == y)
    return equal / a.num_permutations


class LshIndex:
    """Banded index over signatures: B bands of R rows (B*R = P)."""

    def __init__(self, bands: int = DEFAULT_BANDS, rows: int = DEFAULT_ROWS):
        if bands < 1 or rows < 1:
            raise ValueError("bands and rows must be >= 1")
        self.bands = bands
        self.rows = rows
        self.buckets: dict[tuple[int, tuple[int, ...]], list[str]] = {}

    def _band_keys(self, sig: MinHashSignature):
        if sig.num_permutations != self.bands * self.rows:
            raise IncomparableSignatures(
                f"signature has P={sig.num_permutations}, index needs {self.bands * self.rows}"
            )
        for band in range(self.bands):
            yield (band, sig.values[band * self.rows : (band + 1) * self.rows])

    def insert(self, sig: MinHashSignature) -> None:
        for key in self._band_keys(sig):
            self.buckets.setdefault(key, []).append(sig.source_id)

    def candidates(self, sig: MinHashSignature) -> list[str]:
        """ids sharing at least one band bucket, in first-inserted order."""
        seen: dict[str, None] = {}
        for key in self._band_keys(sig):
            for sid in self.buckets.get(key, ()):
                seen.setdefault(sid)
        return list(seen)


def candidate_probability(jaccard: float, rows: int, bands: int) -> float:
    """Probability a pair with the given Jaccard shares at least one band."""
    return 1.0 - (1.0 - jaccard**rows) ** bands


@dataclass(frozen=True)
class DropRecord:
    dropped_id: str
    kept_id: str
    estimated_jaccard: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "dropped_id": self.dropped_id,
                "kept_id": self.kept_id,
                "estimated_jaccard": self.estimated_jaccard,
            }
        )


def dedup_corpus(
    pairs: Iterable[DecompPair],
    threshold: float = DEFAULT_THRESHOLD,
    k: int = DEFAULT_K,
    num_permutations: int = DEFAULT_PERMUTATIONS,
    bands: int = DEFAULT_BANDS,
    rows: int = DEFAULT_ROWS,
    seed: int = 0,
) -> tuple[list[DecompPair], list[DecompPair], list[DropRecord]]:
    """Keep the first occurrence of each near-duplicate cluster.

    Deduplication keys on the target source text per function: the decision
    for a source_id is made when it is first seen and every later pair of
    that function (other optimization levels) follows it, so all four levels
    of a kept function survive together.

    A function is dropped iff some kept function shares an LSH bucket AND
    the signature estimate reaches `threshold`. Returns (kept_pairs,
    dropped_pairs, drop_records) where drop_records holds one entry per
    dropped function.
    """
    if bands * rows != num_permutations:
        raise ValueError(
            f"bands*rows must equal num_permutations: {bands}*{rows} != {num_permutations}"
        )
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")

    params = permutation_params(num_permutations, seed)
    index = LshIndex(bands=bands, rows=rows)
    sig_by_id: dict[str, MinHashSignature] = {}
    decision: dict[str, str | None] = {}  # source_id -> kept_id it matched, None if kept

    kept: list[DecompPair] = []
    dropped: list[DecompPair] = []
    records: list[DropRecord] = []

    for pair in pairs:
        sid = pair.source_id
        if sid not in decision:
            sig = minhash_signature(
                shingle(pair.target_text, k), num_permutations, seed,
                source_id=sid, _params=params,
            )
            matched = None
            for cand_id in index.candidates(sig):
                est = estimate_jaccard(sig, sig_by_id[cand_id])
                if est >= threshold:
                    matched = cand_id
                    records.append(DropRecord(sid, cand_id, est))
                    break
            decision[sid] = matched
            if matched is None:
                index.insert(sig)
                sig_by_id[sid] = sig
        if decision[sid] is None:
            kept.append(pair)
        else:
            dropped.append(pair)

    logger.info(
        "dedup: %d pairs kept, %d dropped (%d duplicate functions)",
        len(kept), len(dropped), len(records),
    )
    return kept, dropped, records


def write_drop_report(records: Iterable[DropRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")
            n += 1
    return n
