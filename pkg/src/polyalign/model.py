"""Core data model: idioms, volumes, chapters, segments and multi-parallel rows.

All values are plain frozen dataclasses, immutable after construction and safe
to share across workers. Segment ids encode (idiom, volume, chapter key,
position) so that every downstream artifact is self-describing.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field

VOLUME_KINDS = ("workbook", "commentary")

# The canonical idiom set; other lowercase codes are accepted.
CANONICAL_IDIOMS = ("sursilvan", "sutsilvan", "surmiran", "puter", "vallader")

_IDIOM_RE = re.compile(r"^[a-z][a-z0-9_-]*$")


def check_idiom(code: str) -> str:
    """Validate an idiom code (non-empty, lowercase) and return it."""
    if not code or not _IDIOM_RE.match(code):
        raise ValueError(f"invalid idiom code: {code!r}")
    return code


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def count_tokens(text: str) -> int:
    """Whitespace tokens of the NFC-normalized text."""
    return len(nfc(text).split())


_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_chapter_key(title: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    key = _PUNCT_RE.sub(" ", nfc(title).lower())
    return " ".join(key.split())


def make_segment_id(idiom: str, volume_id: str, chapter_key: str, position: int) -> str:
    return f"{idiom}/{volume_id}/{chapter_key}/{position}"


def chapter_id(idiom: str, volume_id: str, chapter_key: str) -> str:
    return f"{idiom}/{volume_id}/{chapter_key}"


@dataclass(frozen=True)
class Segment:
    """One extracted text unit.

    ``html`` is the original element markup; ``text`` is the plain text with
    only ``<strong>`` tags retained and whitespace collapsed.
    """

    id: str
    idiom: str
    position: int
    html: str
    text: str
    token_count: int

    def length(self, unit: str = "tokens") -> int:
        if unit == "tokens":
            return self.token_count
        if unit == "characters":
            return len(self.text)
        raise ValueError(f"unknown length unit: {unit!r}")


@dataclass(frozen=True)
class Chapter:
    key: str
    title: str
    segments: tuple[Segment, ...]


@dataclass(frozen=True)
class BookVolume:
    idiom: str
    volume_id: str
    grade: int
    kind: str
    chapters: tuple[Chapter, ...]


@dataclass(frozen=True)
class ChapterGroup:
    """2-5 chapters describing the same content across idioms."""

    group_id: str
    members: dict[str, Chapter]

    def idioms(self) -> list[str]:
        return sorted(self.members)


@dataclass(frozen=True)
class MultiParallelRow:
    """One corpus row: at most one segment per idiom, null where absent."""

    cells: dict[str, Segment | None]
    provenance: str
    flags: frozenset[str] = frozenset()

    def non_null(self) -> dict[str, Segment]:
        return {k: v for k, v in self.cells.items() if v is not None}


@dataclass
class MultiParallelAlignment:
    rows: list[MultiParallelRow] = field(default_factory=list)


@dataclass(frozen=True)
class Violation:
    where: str
    message: str


def validate_corpus(volumes: list[BookVolume]) -> list[Violation]:
    """Check every type invariant; one Violation per breach, empty if clean."""
    report: list[Violation] = []
    seen_segment_ids: dict[str, str] = {}
    for vol in volumes:
        vol_ref = f"{vol.idiom}/{vol.volume_id}"
        try:
            check_idiom(vol.idiom)
        except ValueError as exc:
            report.append(Violation(vol_ref, str(exc)))
        if vol.kind not in VOLUME_KINDS:
            report.append(Violation(vol_ref, f"unknown volume kind {vol.kind!r}"))
        for chap in vol.chapters:
            chap_ref = chapter_id(vol.idiom, vol.volume_id, chap.key)
            if not chap.key:
                report.append(Violation(chap_ref, "empty chapter key"))
            for pos, seg in enumerate(chap.segments):
                if seg.position != pos:
                    report.append(
                        Violation(seg.id, f"position {seg.position} != slot {pos}")
                    )
                if not seg.text.strip():
                    report.append(Violation(seg.id, "empty segment text"))
                if seg.token_count < 1:
                    report.append(Violation(seg.id, "token_count < 1"))
                for tag in re.findall(r"</?\s*([a-zA-Z0-9]+)", seg.text):
                    if tag.lower() != "strong":
                        report.append(
                            Violation(seg.id, f"disallowed tag <{tag}> in text")
                        )
                if seg.id in seen_segment_ids:
                    report.append(
                        Violation(seg.id, f"duplicate segment id, first in {seen_segment_ids[seg.id]}")
                    )
                else:
                    seen_segment_ids[seg.id] = chap_ref
    # volume_id unique per idiom
    seen_vols: set[tuple[str, str]] = set()
    for vol in volumes:
        key = (vol.idiom, vol.volume_id)
        if key in seen_vols:
            report.append(Violation(f"{vol.idiom}/{vol.volume_id}", "duplicate volume_id"))
        seen_vols.add(key)
    return report


# ---------------------------------------------------------------------------
# Corpus serialization (corpus.json)


def corpus_to_dict(volumes: list[BookVolume]) -> dict:
    return {
        "format": "polyalign-corpus/1",
        "volumes": [
            {
                "idiom": v.idiom,
                "volume_id": v.volume_id,
                "grade": v.grade,
                "kind": v.kind,
                "chapters": [
                    {
                        "key": c.key,
                        "title": c.title,
                        "segments": [
                            {
                                "id": s.id,
                                "position": s.position,
                                "html": s.html,
                                "text": s.text,
                                "token_count": s.token_count,
                            }
                            for s in c.segments
                        ],
                    }
                    for c in v.chapters
                ],
            }
            for v in volumes
        ],
    }


def corpus_from_dict(doc: dict) -> list[BookVolume]:
    volumes = []
    for v in doc["volumes"]:
        chapters = []
        for c in v["chapters"]:
            segments = tuple(
                Segment(
                    id=s["id"],
                    idiom=v["idiom"],
                    position=s["position"],
                    html=s["html"],
                    text=s["text"],
                    token_count=s["token_count"],
                )
                for s in c["segments"]
            )
            chapters.append(Chapter(key=c["key"], title=c["title"], segments=segments))
        volumes.append(
            BookVolume(
                idiom=v["idiom"],
                volume_id=v["volume_id"],
                grade=v["grade"],
                kind=v["kind"],
                chapters=tuple(chapters),
            )
        )
    return volumes


def save_corpus(volumes: list[BookVolume], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(corpus_to_dict(volumes), fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def load_corpus(path) -> list[BookVolume]:
    with open(path, encoding="utf-8") as fh:
        return corpus_from_dict(json.load(fh))


def segment_index(volumes: list[BookVolume]) -> dict[str, Segment]:
    """Map every segment id in the corpus to its Segment."""
    index: dict[str, Segment] = {}
    for vol in volumes:
        for chap in vol.chapters:
            for seg in chap.segments:
                index[seg.id] = seg
    return index
