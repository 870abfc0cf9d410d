"""Prompt templates and training-record rendering.

The canonical byte-exact forms (no trailing newline anywhere):

* direct decompilation, infer:
      `# This is the assembly code: <input> # What is the source code? `
* direct decompilation, train: the infer form immediately followed by the
  target function source; the loss span covers exactly that suffix.
* refinement, infer: the refinement instruction, one newline, the
  decompiler pseudo-code.
* refinement, train: the direct template with pseudo-code in the input slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

from .corpus import DecompPair
from .errors import InputEmpty, KindMismatch

END2END_PREFIX = "# This is the assembly code: "
END2END_QUESTION = " # What is the source code? "

REFINE_INSTRUCTION = (
    "Generate linux compilable C/C++ code of the main and other functions in "
    "the supplied snippet without using goto, fix any missing headers. Do not "
    "explain anything."
)

READABILITY_TEMPLATE = """You are grading how readable a decompiled C function is compared to its original source.

Original source code:
{original}

Decompiled code:
{decompiled}

Assess the following, briefly:
1. Syntax similarity: variables, loops, conditions.
2. Structural integrity: logic flow and overall structure.

Then give one overall readability score from 1 (Poor) to 5 (Excellent).
Reply with your assessment followed by a final line of exactly:
SCORE: <n>"""

PROMPT_KINDS = (
    "end2end_train",
    "end2end_infer",
    "refine_infer",
    "refine_train",
    "readability_judge",
)

TRAINING_RECORD_FIELDS = (
    "text", "loss_start", "loss_end", "kind", "source_id", "opt_level", "stage",
)


@dataclass(frozen=True)
class PromptRecord:
    text: str
    kind: str
    loss_span: tuple[int, int] | None = None
    source_id: str = ""
    opt_level: str = ""
    stage: str = ""

    def loss_text(self) -> str:
        if self.loss_span is None:
            raise ValueError(f"{self.kind} records carry no loss span")
        start, end = self.loss_span
        return self.text[start:end]

    def to_json(self) -> str:
        start, end = self.loss_span if self.loss_span is not None else (None, None)
        return json.dumps(
            {
                "text": self.text,
                "loss_start": start,
                "loss_end": end,
                "kind": self.kind,
                "source_id": self.source_id,
                "opt_level": self.opt_level,
                "stage": self.stage,
            }
        )


def _require_nonempty(text: str, what: str) -> None:
    if not text or not text.strip():
        raise InputEmpty(f"{what} is empty")


def render_end2end(pair: DecompPair, mode: str = "infer") -> PromptRecord:
    """Render the direct-decompilation template for an assembly pair."""
    if pair.input_kind != "asm":
        raise KindMismatch(f"end2end template needs asm input, got {pair.input_kind!r}")
    _require_nonempty(pair.input_text, "assembly input")
    base = f"{END2END_PREFIX}{pair.input_text}{END2END_QUESTION}"
    meta = dict(source_id=pair.source_id, opt_level=pair.opt_level, stage=pair.stage)
    if mode == "infer":
        return PromptRecord(text=base, kind="end2end_infer", **meta)
    if mode == "train":
        target = pair.target_text
        return PromptRecord(
            text=base + target,
            kind="end2end_train",
            loss_span=(len(base), len(base) + len(target)),
            **meta,
        )
    raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


def render_refine(
    pseudo: str,
    mode: str = "infer",
    target: str | None = None,
    source_id: str = "",
    opt_level: str = "",
    stage: str = "",
) -> PromptRecord:
    """Render a refinement prompt over decompiler pseudo-code.

    infer: the verbatim refinement instruction followed by the pseudo-code
    (the form used to drive a general-purpose model). train: the direct
    template with pseudo-code in the input slot, for fine-tuning records.
    """
    _require_nonempty(pseudo, "pseudo-code input")
    meta = dict(source_id=source_id, opt_level=opt_level, stage=stage)
    if mode == "infer":
        return PromptRecord(
            text=f"{REFINE_INSTRUCTION}\n{pseudo}", kind="refine_infer", **meta
        )
    if mode == "train":
        if target is None:
            raise ValueError("refine_train needs the target source")
        base = f"{END2END_PREFIX}{pseudo}{END2END_QUESTION}"
        return PromptRecord(
            text=base + target,
            kind="refine_train",
            loss_span=(len(base), len(base) + len(target)),
            **meta,
        )
    raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


def render_readability_judge(original: str, decompiled: str) -> PromptRecord:
    """Prompt asking a judge model to grade decompiled-code readability 1-5."""
    _require_nonempty(original, "original source")
    _require_nonempty(decompiled, "decompiled code")
    return PromptRecord(
        text=READABILITY_TEMPLATE.format(original=original, decompiled=decompiled),
        kind="readability_judge",
    )


def training_record(pair: DecompPair) -> PromptRecord:
    """Training record for a pair, selecting the template by input kind."""
    if pair.input_kind == "asm":
        return render_end2end(pair, "train")
    return render_refine(
        pair.input_text,
        "train",
        target=pair.target_text,
        source_id=pair.source_id,
        opt_level=pair.opt_level,
        stage=pair.stage,
    )


def write_training_records(pairs: Iterable[DecompPair], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(training_record(pair).to_json())
            fh.write("\n")
            n += 1
    return n
