"""Corpus emission: row files, bitext extractions, statistics, splits, sheets.

JSON-lines is the canonical row format (streamable, diff-able, order-stable);
TSV is used only where flat text is the point (bitext, evaluation sheets).
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass

from .model import BookVolume, MultiParallelAlignment, MultiParallelRow, Segment

# Identifies the deterministic generator behind sample_rows in manifests.
SAMPLER_NAME = "mt19937/sample-v1"


class ExportError(Exception):
    pass


def _volume_of(segment_id: str) -> str:
    parts = segment_id.split("/")
    if len(parts) < 4:
        raise ExportError(f"malformed segment id {segment_id!r}")
    return parts[1]


def row_to_dict(row: MultiParallelRow, row_id: str) -> dict:
    return {
        "row_id": row_id,
        "cells": {
            idiom: ({"segment_id": seg.id, "text": seg.text} if seg is not None else None)
            for idiom, seg in sorted(row.cells.items())
        },
        "provenance": row.provenance,
        "flags": sorted(row.flags),
    }


def export_rows(rows: MultiParallelAlignment, out_path) -> int:
    """Write one JSON object per row, deterministic order, UTF-8."""
    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for idx, row in enumerate(rows.rows):
            fh.write(
                json.dumps(row_to_dict(row, f"{row.provenance}/r{idx:05d}"), ensure_ascii=False, sort_keys=True)
            )
            fh.write("\n")
            count += 1
    return count


def load_rows(path, seg_index: dict[str, Segment]) -> MultiParallelAlignment:
    """Re-import a rows.jsonl file; cells resolve through the corpus index."""
    rows: list[MultiParallelRow] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            cells: dict[str, Segment | None] = {}
            for idiom, cell in doc["cells"].items():
                if cell is None:
                    cells[idiom] = None
                else:
                    sid = cell["segment_id"]
                    if sid not in seg_index:
                        raise ExportError(f"row references unknown segment {sid!r}")
                    cells[idiom] = seg_index[sid]
            rows.append(
                MultiParallelRow(
                    cells=cells,
                    provenance=doc["provenance"],
                    flags=frozenset(doc.get("flags", [])),
                )
            )
    return MultiParallelAlignment(rows=rows)


_WS_RE = re.compile(r"[\t\n\r]+")


def export_bitext(rows: MultiParallelAlignment, idiom_a: str, idiom_b: str, out_path) -> int:
    """Two-column TSV of rows where both idioms are present."""
    idioms_seen = {i for row in rows.rows for i in row.cells}
    for idiom in (idiom_a, idiom_b):
        if rows.rows and idiom not in idioms_seen:
            raise ExportError(f"idiom {idiom!r} not present in the corpus rows")
    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for row in rows.rows:
            a = row.cells.get(idiom_a)
            b = row.cells.get(idiom_b)
            if a is None or b is None:
                continue
            fh.write(_WS_RE.sub(" ", a.text) + "\t" + _WS_RE.sub(" ", b.text) + "\n")
            count += 1
    return count


@dataclass
class IdiomStats:
    volumes: int = 0
    segments: int = 0
    aligned_segments: int = 0
    tokens: int = 0
    aligned_tokens: int = 0


@dataclass
class StatsReport:
    per_idiom: dict[str, IdiomStats]
    total: IdiomStats


def stats(corpus: list[BookVolume], rows: MultiParallelAlignment) -> StatsReport:
    """Overall vs aligned segment/token counts per idiom, plus a totals row.

    Aligned = segments appearing in rows with at least two non-null cells.
    """
    per: dict[str, IdiomStats] = {}
    known_ids: set[str] = set()
    for vol in corpus:
        s = per.setdefault(vol.idiom, IdiomStats())
        s.volumes += 1
        for chap in vol.chapters:
            for seg in chap.segments:
                s.segments += 1
                s.tokens += seg.token_count
                known_ids.add(seg.id)

    counted: set[str] = set()
    for row in rows.rows:
        present = row.non_null()
        if len(present) < 2:
            continue
        for seg in present.values():
            if seg.id not in known_ids:
                raise ExportError(f"row references segment {seg.id!r} outside the corpus")
            if seg.id in counted:
                continue
            counted.add(seg.id)
            s = per.setdefault(seg.idiom, IdiomStats())
            s.aligned_segments += 1
            s.aligned_tokens += seg.token_count

    total = IdiomStats()
    for s in per.values():
        total.volumes += s.volumes
        total.segments += s.segments
        total.aligned_segments += s.aligned_segments
        total.tokens += s.tokens
        total.aligned_tokens += s.aligned_tokens
    return StatsReport(per_idiom=per, total=total)


def render_stats(report: StatsReport) -> str:
    """Aligned-column text table: idiom, volumes, overall/aligned counts."""
    header = ["Idiom", "Volumes", "Segments", "Aligned Seg.", "Tokens", "Aligned Tok."]
    body = []
    for idiom in sorted(report.per_idiom):
        s = report.per_idiom[idiom]
        body.append([idiom, s.volumes, s.segments, s.aligned_segments, s.tokens, s.aligned_tokens])
    t = report.total
    body.append(["Total", t.volumes, t.segments, t.aligned_segments, t.tokens, t.aligned_tokens])
    table = [header] + [[str(c) for c in row] for row in body]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for r_idx, r in enumerate(table):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if r_idx == 0 or r_idx == len(table) - 2:
            lines.append("-" * (sum(widths) + 2 * (len(header) - 1)))
    return "\n".join(lines) + "\n"


def stats_to_dict(report: StatsReport) -> dict:
    def conv(s: IdiomStats) -> dict:
        return {
            "volumes": s.volumes,
            "segments": s.segments,
            "aligned_segments": s.aligned_segments,
            "tokens": s.tokens,
            "aligned_tokens": s.aligned_tokens,
        }

    return {
        "per_idiom": {k: conv(v) for k, v in sorted(report.per_idiom.items())},
        "total": conv(report.total),
    }


SPLIT_NAMES = ("train", "validation", "test", "extra")


def split_rows(
    rows: MultiParallelAlignment,
    assignment: dict[str, str],
    conflicts: list[dict] | None = None,
) -> dict[str, MultiParallelAlignment]:
    """Partition rows by the split of their member volumes.

    Rows whose member volumes map to different splits are dropped with a
    logged conflict; an unassigned volume is an error.
    """
    out = {name: MultiParallelAlignment() for name in SPLIT_NAMES}
    for idx, row in enumerate(rows.rows):
        splits = set()
        for seg in row.non_null().values():
            vol = _volume_of(seg.id)
            if vol not in assignment:
                raise ExportError(f"volume {vol!r} has no split assignment")
            splits.add(assignment[vol])
        if len(splits) != 1:
            if conflicts is not None:
                conflicts.append(
                    {"row_index": idx, "provenance": row.provenance, "splits": sorted(splits)}
                )
            continue
        split = splits.pop()
        if split not in out:
            raise ExportError(f"unknown split name {split!r}")
        out[split].rows.append(row)
    return out


def sample_rows(rows: MultiParallelAlignment, n: int, seed: int):
    """Uniform sample without replacement; same (seed, input) -> same sheet.

    Returns (header, sheet rows) where each sheet row is
    [row_id, text per idiom in sorted order].
    """
    if n > len(rows.rows):
        raise ExportError(f"cannot sample {n} of {len(rows.rows)} rows")
    idioms = sorted({i for row in rows.rows for i in row.cells})
    rng = random.Random(seed)
    indices = rng.sample(range(len(rows.rows)), n)
    header = ["row_id"] + idioms
    sheet = []
    for idx in indices:
        row = rows.rows[idx]
        cells = [
            _WS_RE.sub(" ", row.cells[i].text) if row.cells.get(i) is not None else ""
            for i in idioms
        ]
        sheet.append([f"{row.provenance}/r{idx:05d}"] + cells)
    return header, sheet


def write_sheet(header: list[str], sheet: list[list[str]], out_path) -> None:
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in sheet:
            fh.write("\t".join(row) + "\n")
