"""Parse raw volume documents and segment their HTML content.

Segmentation follows the block structure of the markup: every paragraph,
list item, table cell or heading becomes one candidate segment, with no
sentence splitting. Inline markup is stripped except ``<strong>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from html.parser import HTMLParser

from .model import (
    BookVolume,
    Chapter,
    ChapterGroup,
    Segment,
    check_idiom,
    count_tokens,
    make_segment_id,
    nfc,
    normalize_chapter_key,
)


class IngestError(Exception):
    """Malformed input document or dangling mapping reference."""


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class WarningRecord:
    source: str
    message: str

    def to_json(self) -> str:
        return json.dumps({"source": self.source, "message": self.message}, ensure_ascii=False)


# Block-level node set; div counts only when it has no block children.
BLOCK_TAGS = frozenset(
    {"p", "li", "td", "th", "h1", "h2", "h3", "h4", "h5", "h6"}
)
CONTAINER_TAGS = frozenset(
    {"div", "ul", "ol", "table", "thead", "tbody", "tfoot", "tr", "body", "html",
     "section", "article", "blockquote"}
)
STRUCTURAL_TAGS = BLOCK_TAGS | CONTAINER_TAGS
VOID_TAGS = frozenset({"br", "hr", "img", "input", "meta", "link", "wbr"})

# Tags whose open instance is implicitly closed by a new sibling.
_AUTOCLOSE = {
    "li": ("li",),
    "p": ("p",),
    "td": ("td", "th"),
    "th": ("td", "th"),
    "tr": ("tr", "td", "th"),
}


@dataclass
class _Node:
    tag: str  # "" for text nodes and the root
    attrs: list = field(default_factory=list)
    children: list = field(default_factory=list)
    text: str = ""


class _TreeBuilder(HTMLParser):
    def __init__(self, warnings: list[WarningRecord], source: str):
        super().__init__(convert_charrefs=True)
        self.root = _Node(tag="")
        self.stack = [self.root]
        self.warnings = warnings
        self.source = source

    def handle_starttag(self, tag, attrs):
        tag = tag.lower()
        if tag in _AUTOCLOSE:
            closable = _AUTOCLOSE[tag]
            for node in reversed(self.stack[1:]):
                if node.tag in closable:
                    while self.stack[-1] is not node:
                        self.stack.pop()
                    self.stack.pop()
                    break
                if node.tag in STRUCTURAL_TAGS:
                    break
        node = _Node(tag=tag, attrs=list(attrs))
        self.stack[-1].children.append(node)
        if tag not in VOID_TAGS:
            self.stack.append(node)

    def handle_startendtag(self, tag, attrs):
        node = _Node(tag=tag.lower(), attrs=list(attrs))
        self.stack[-1].children.append(node)

    def handle_endtag(self, tag):
        tag = tag.lower()
        if tag in VOID_TAGS:
            return
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                del self.stack[i:]
                return
        self.warnings.append(
            WarningRecord(self.source, f"unmatched closing tag </{tag}>")
        )

    def handle_data(self, data):
        if data:
            self.stack[-1].children.append(_Node(tag="", text=data))

    def close(self):
        super().close()
        if len(self.stack) > 1:
            open_tags = ", ".join(n.tag for n in self.stack[1:])
            self.warnings.append(
                WarningRecord(self.source, f"unclosed tags at end of element: {open_tags}")
            )
            del self.stack[1:]


def _render_attrs(attrs) -> str:
    parts = []
    for name, value in attrs:
        if value is None:
            parts.append(f" {name}")
        else:
            parts.append(f' {name}="{value}"')
    return "".join(parts)


def _render_html(node: _Node) -> str:
    if node.tag == "" and not node.children:
        return node.text
    inner = "".join(_render_html(c) for c in node.children)
    if node.tag == "":
        return inner
    if node.tag in VOID_TAGS and not node.children:
        return f"<{node.tag}{_render_attrs(node.attrs)}/>"
    return f"<{node.tag}{_render_attrs(node.attrs)}>{inner}</{node.tag}>"


def _render_text(node: _Node) -> str:
    """Inline text with only <strong> retained; <br> becomes a space."""
    if node.tag == "":
        if node.children:
            return "".join(_render_text(c) for c in node.children)
        return node.text
    if node.tag == "br":
        return " "
    inner = "".join(_render_text(c) for c in node.children)
    if node.tag == "strong":
        return f"<strong>{inner}</strong>" if inner.strip() else inner
    return inner


def _collapse(text: str) -> str:
    return " ".join(nfc(text).split())


def _is_structural(node: _Node) -> bool:
    return node.tag in STRUCTURAL_TAGS


def _walk(node: _Node, out: list[tuple[str, str]]) -> None:
    """Emit (text, html) candidates for block nodes and stray inline runs."""
    has_structure = any(_is_structural(c) for c in node.children)

    # Leaf blocks (and leaf divs) become one candidate with their own markup.
    if not has_structure and (node.tag in BLOCK_TAGS or node.tag == "div"):
        text = _collapse("".join(_render_text(c) for c in node.children))
        if text:
            out.append((text, _render_html(node)))
        return

    run: list[_Node] = []

    def flush():
        if not run:
            return
        text = _collapse("".join(_render_text(n) for n in run))
        if text:
            html = "".join(_render_html(n) for n in run).strip()
            out.append((text, html))
        run.clear()

    for child in node.children:
        if _is_structural(child):
            flush()
            _walk(child, out)
        else:
            run.append(child)
    flush()


def segment_html(
    element_html: str, warnings: list[WarningRecord] | None = None, source: str = "<element>"
) -> list[tuple[str, str]]:
    """Split one element's markup into candidate segments.

    Returns (text, html) pairs: text has inline tags stripped except
    ``<strong>`` and whitespace collapsed; html is the candidate's markup.
    Empty candidates are dropped. Unbalanced markup is recovered best-effort
    with a warning record; the call never raises for bad markup.
    """
    if warnings is None:
        warnings = []
    builder = _TreeBuilder(warnings, source)
    builder.feed(element_html)
    builder.close()

    out: list[tuple[str, str]] = []
    root = builder.root
    has_structure = any(_is_structural(c) for c in root.children)
    if has_structure:
        _walk(root, out)
    else:
        text = _collapse(_render_text(root))
        if text:
            out.append((text, element_html.strip()))
        return out

    # A single top-level block keeps its element markup verbatim.
    structural = [c for c in root.children if _is_structural(c)]
    if len(out) == 1 and len(structural) == 1 and not any(
        c.tag == "" and c.text.strip() or (c.tag and not _is_structural(c))
        for c in root.children
    ):
        out[0] = (out[0][0], element_html.strip())
    return out


def parse_volume(raw: bytes | str, warnings: list[WarningRecord] | None = None) -> BookVolume:
    """Parse one raw volume document (ingestion JSON) into a BookVolume."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise IngestError(
            f"malformed volume document at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    try:
        idiom = check_idiom(doc["idiom"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        volume_id = doc["volume_id"]
        grade = int(doc["grade"])
        kind = doc["kind"]
        raw_chapters = doc["chapters"]
    except KeyError as exc:
        raise IngestError(f"volume document missing field {exc.args[0]!r}") from exc

    chapters = []
    for chap in raw_chapters:
        title = chap["title"]
        key = normalize_chapter_key(title)
        if not key:
            raise IngestError(f"chapter title {title!r} normalizes to an empty key")
        segments: list[Segment] = []
        for elem_idx, element in enumerate(chap["elements"]):
            source = f"{idiom}/{volume_id}/{key}#element{elem_idx}"
            for text, html in segment_html(element["html"], warnings, source):
                pos = len(segments)
                segments.append(
                    Segment(
                        id=make_segment_id(idiom, volume_id, key, pos),
                        idiom=idiom,
                        position=pos,
                        html=html,
                        text=text,
                        token_count=count_tokens(text),
                    )
                )
        chapters.append(Chapter(key=key, title=title, segments=tuple(segments)))
    return BookVolume(
        idiom=idiom, volume_id=volume_id, grade=grade, kind=kind, chapters=tuple(chapters)
    )


def parse_mapping(mapping_text: str) -> tuple[list[str], list[list[str]]]:
    """Parse the chapter mapping TSV into (idiom columns, rows of cells)."""
    lines = [ln for ln in mapping_text.splitlines() if ln.strip()]
    if not lines:
        raise IngestError("empty chapter mapping file")
    header = lines[0].rstrip("\n").split("\t")
    idioms = [check_idiom(col.strip()) for col in header]
    rows = []
    for line in lines[1:]:
        cells = line.rstrip("\n").split("\t")
        cells += [""] * (len(idioms) - len(cells))
        rows.append([c.strip() for c in cells[: len(idioms)]])
    return idioms, rows


def build_chapter_groups(
    volumes: list[BookVolume],
    mapping_text: str,
    warnings: list[WarningRecord] | None = None,
) -> list[ChapterGroup]:
    """Assemble cross-idiom ChapterGroups from the mapping TSV.

    Cells are "volume_id#chapter_key"; a dangling reference is an error naming
    the row and cell; rows with fewer than two non-empty cells are skipped
    with a warning (no parallel content).
    """
    if warnings is None:
        warnings = []
    idioms, rows = parse_mapping(mapping_text)
    chapters: dict[tuple[str, str, str], Chapter] = {}
    for vol in volumes:
        for chap in vol.chapters:
            chapters[(vol.idiom, vol.volume_id, chap.key)] = chap

    groups: list[ChapterGroup] = []
    for row_idx, cells in enumerate(rows, start=1):
        members: dict[str, Chapter] = {}
        for idiom, cell in zip(idioms, cells):
            if not cell:
                continue
            if "#" not in cell:
                raise IngestError(
                    f"mapping row {row_idx}, idiom {idiom}: cell {cell!r} is not volume_id#chapter_key"
                )
            volume_id, _, chapter_key = cell.partition("#")
            chap = chapters.get((idiom, volume_id, chapter_key))
            if chap is None:
                raise IngestError(
                    f"mapping row {row_idx}, idiom {idiom}: no chapter {chapter_key!r} in volume {volume_id!r}"
                )
            members[idiom] = chap
        if len(members) < 2:
            warnings.append(
                WarningRecord(
                    f"mapping row {row_idx}",
                    f"skipped: only {len(members)} non-empty cell(s), no parallel content",
                )
            )
            continue
        groups.append(ChapterGroup(group_id=f"g{row_idx:04d}", members=members))
    return groups
