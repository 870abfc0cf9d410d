"""Report rendering: markdown and CSV rate tables, length-bucket and
error-class breakdowns, and matplotlib figures saved next to the tables.

Numbers are displayed as percentages rounded half-up to two decimals; the
underlying tables keep full precision.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from .config import OPT_LEVELS
from .corpus import DecompPair
from .harness import (
    ERROR_CLASSES,
    EvalOutcome,
    LengthBucket,
    ObfuscationResult,
    RateTable,
    length_buckets,
    round_half_up,
)

logger = logging.getLogger(__name__)


def _pct(frac) -> str:
    return round_half_up(frac * 100, 2)


def _edit_pct(value: float | None) -> str:
    if value is None:
        return "--"
    return round_half_up(value * 100, 2)


# ---------------------------------------------------------------------------
# Rate tables
# ---------------------------------------------------------------------------

def rate_table_markdown(table: RateTable, title: str = "Re-executability") -> str:
    lines = [f"### {title} (%)", ""]
    header = ["Backend"] + [*OPT_LEVELS] + ["AVG"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for backend_id in table.backends:
        cells = [backend_id]
        for level in OPT_LEVELS:
            if level in table.cells[backend_id]:
                cells.append(_pct(table.rate(backend_id, level)))
            else:
                cells.append("--")
        cells.append(_pct(table.avg(backend_id)))
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines)


def edit_table_markdown(table: RateTable) -> str:
    lines = ["### Edit similarity (%)", ""]
    header = ["Backend"] + [*OPT_LEVELS] + ["AVG"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for backend_id in table.backends:
        cells = [backend_id]
        for level in OPT_LEVELS:
            cell = table.cells[backend_id].get(level)
            cells.append(_edit_pct(cell.edit_mean) if cell else "--")
        cells.append(_edit_pct(table.edit_avg(backend_id)))
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines)


def rate_table_csv(table: RateTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["backend", *[l.lower() for l in OPT_LEVELS], "avg",
                     *[f"edit_{l.lower()}" for l in OPT_LEVELS], "edit_avg", "samples"])
    for backend_id in table.backends:
        row = [backend_id]
        for level in OPT_LEVELS:
            cell = table.cells[backend_id].get(level)
            row.append(_pct(cell.rate) if cell else "")
        row.append(_pct(table.avg(backend_id)))
        for level in OPT_LEVELS:
            cell = table.cells[backend_id].get(level)
            row.append(_edit_pct(cell.edit_mean) if cell and cell.edit_mean is not None else "")
        edit_avg = table.edit_avg(backend_id)
        row.append(_edit_pct(edit_avg) if edit_avg is not None else "")
        row.append(table.total(backend_id))
        writer.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Length buckets and error histogram
# ---------------------------------------------------------------------------

def buckets_markdown(buckets: Sequence[LengthBucket]) -> str:
    lines = ["### Re-executability by input length (tokens)", ""]
    lines.append("| Bucket | Samples | Rate (%) | Note |")
    lines.append("|---|---|---|---|")
    for b in buckets:
        note = "low confidence" if b.low_confidence else ""
        lines.append(f"| {b.label} | {b.total} | {_pct(b.rate)} | {note} |")
    lines.append("")
    return "\n".join(lines)


def buckets_csv(buckets: Sequence[LengthBucket]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bucket_lo", "bucket_hi", "samples", "rate_pct", "low_confidence"])
    for b in buckets:
        writer.writerow([b.lo, b.hi if b.hi is not None else "", b.total,
                         _pct(b.rate), int(b.low_confidence)])
    return buf.getvalue()


def error_histogram(outcomes: Iterable[EvalOutcome]) -> Counter:
    counts = Counter()
    for o in outcomes:
        if o.status != "Pass":
            counts[o.error_class] += 1
    return counts


def error_histogram_markdown(counts: Counter) -> str:
    lines = ["### Error classes (failed cases)", ""]
    lines.append("| Class | Count | Share (%) |")
    lines.append("|---|---|---|")
    total = sum(counts.values())
    for cls in ERROR_CLASSES:
        if cls == "none":
            continue
        n = counts.get(cls, 0)
        share = _pct(n / total) if total else "0.00"
        lines.append(f"| {cls} | {n} | {share} |")
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Obfuscation comparison
# ---------------------------------------------------------------------------

def obfuscation_markdown(result: ObfuscationResult) -> str:
    bid = result.backend_id
    lines = [f"### Obfuscation robustness: {result.technique} ({bid})", ""]
    lines.append("| Build | " + " | ".join(OPT_LEVELS) + " | AVG |")
    lines.append("|" + "---|" * (len(OPT_LEVELS) + 2))
    for label, table in (("plain", result.base), ("obfuscated", result.obfuscated)):
        cells = [label]
        for level in OPT_LEVELS:
            if level in table.cells.get(bid, {}):
                cells.append(_pct(table.rate(bid, level)))
            else:
                cells.append("--")
        cells.append(_pct(table.avg(bid)) if bid in table.cells else "--")
        lines.append("| " + " | ".join(cells) + " |")
    drops = []
    for level in OPT_LEVELS:
        d = result.drop(level)
        drops.append(round_half_up(d, 3) if d is not None else "--")
    avg_drop = result.drop_avg()
    drops.append(round_half_up(avg_drop, 3) if avg_drop is not None else "--")
    lines.append("| relative drop | " + " | ".join(drops) + " |")
    lines.append("")
    if result.excluded:
        lines.append(
            f"{len(result.excluded)} sample(s) excluded: binary failed its own assertions."
        )
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def render_figures(
    outcomes: Sequence[EvalOutcome],
    buckets: Sequence[LengthBucket] | None,
    out_dir: str | Path,
) -> list[Path]:
    """Save the report figures as PNG files and return their paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if buckets:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        labels = [b.label for b in buckets]
        rates = [float(b.rate) * 100 for b in buckets]
        ax.bar(labels, rates, color="#4878d0")
        for i, b in enumerate(buckets):
            if b.low_confidence:
                ax.text(i, rates[i], "*", ha="center", va="bottom")
        ax.set_xlabel("input length (tokens)")
        ax.set_ylabel("re-executability (%)")
        ax.set_ylim(0, 105)
        ax.set_title("Re-executability vs. input length (* = <5 samples)")
        fig.tight_layout()
        path = out / "length_buckets.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    counts = error_histogram(outcomes)
    if counts:
        classes = [c for c in ERROR_CLASSES if c != "none"]
        values = [counts.get(c, 0) for c in classes]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar(classes, values, color="#d65f5f")
        ax.set_ylabel("failed cases")
        ax.set_title("Error classes")
        plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
        fig.tight_layout()
        path = out / "error_classes.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written


# ---------------------------------------------------------------------------
# Full report
# ---------------------------------------------------------------------------

def write_report(
    outcomes: Sequence[EvalOutcome],
    out_dir: str | Path,
    run_id: str,
    pairs: Sequence[DecompPair] | None = None,
    bucket_edges: Sequence[int] | None = None,
    figures: bool = True,
    obfuscation: ObfuscationResult | None = None,
) -> dict[str, Path]:
    """Write report.md, report.csv, and figures for a set of outcomes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = RateTable.from_outcomes(outcomes)

    buckets = None
    if pairs is not None:
        from .harness import DEFAULT_BUCKET_EDGES

        buckets = length_buckets(outcomes, pairs, bucket_edges or DEFAULT_BUCKET_EDGES)

    sections = [f"# Evaluation report", "", f"Run: `{run_id}`", ""]
    sections.append(rate_table_markdown(table))
    sections.append(edit_table_markdown(table))
    if obfuscation is not None:
        sections.append(obfuscation_markdown(obfuscation))
    if buckets is not None:
        sections.append(buckets_markdown(buckets))
    else:
        sections.append("_Length buckets omitted: no pairs file supplied._\n")
    sections.append(error_histogram_markdown(error_histogram(outcomes)))

    paths: dict[str, Path] = {}
    md_path = out / "report.md"
    md_path.write_text("\n".join(sections))
    paths["markdown"] = md_path

    csv_path = out / "report.csv"
    csv_body = f"# run_id,{run_id}\n" + rate_table_csv(table)
    csv_path.write_text(csv_body)
    paths["csv"] = csv_path

    if buckets is not None:
        bpath = out / "length_buckets.csv"
        bpath.write_text(f"# run_id,{run_id}\n" + buckets_csv(buckets))
        paths["buckets_csv"] = bpath

    if figures:
        for fig_path in render_figures(outcomes, buckets, out / "figures"):
            paths[fig_path.stem] = fig_path

    return paths
