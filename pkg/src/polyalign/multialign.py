"""Lift pairwise alignments to multi-parallel rows.

Pipeline per chapter group: full outer join through each pivot idiom,
strict intersection of the pivot link sets (consensus), connected-component
row assembly, and the length-ratio noise filter. Consensus trades recall
for precision by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .bialign import BilingualAlignment
from .model import ChapterGroup, MultiParallelAlignment, MultiParallelRow, Segment

Pair = tuple[str | None, str | None]


class MultiAlignError(Exception):
    pass


@dataclass(frozen=True)
class PairLinkSet:
    idiom_a: str
    idiom_b: str
    pairs: frozenset[Pair]
    origin: str  # "direct", "pivot:<p>", "consensus"

    def full_pairs(self) -> frozenset[Pair]:
        return frozenset(p for p in self.pairs if p[0] is not None and p[1] is not None)


@dataclass(frozen=True)
class LengthFilterConfig:
    upper_ratio: float = 1.5
    lower_ratio: float = 0.67
    unit: str = "tokens"  # tokens | characters

    def __post_init__(self):
        if not (0 < self.lower_ratio < 1 < self.upper_ratio):
            raise MultiAlignError("require 0 < lower_ratio < 1 < upper_ratio")
        if self.unit not in ("tokens", "characters"):
            raise MultiAlignError(f"unknown length unit {self.unit!r}")


def direct_pairs(a_ij: BilingualAlignment, idiom_a: str, idiom_b: str) -> PairLinkSet:
    """A bilingual alignment's links (deletions included) as a PairLinkSet."""
    return PairLinkSet(
        idiom_a=idiom_a,
        idiom_b=idiom_b,
        pairs=frozenset(a_ij.pairs_by_id()),
        origin="direct",
    )


def pivot_join(
    a_ip: BilingualAlignment,
    a_pj: BilingualAlignment,
    idiom_a: str = "",
    idiom_b: str = "",
    pivot: str = "",
) -> PairLinkSet:
    """Join two bilingual alignments through their shared pivot chapter.

    ``a_ip`` has the pivot on its target side, ``a_pj`` on its source side.
    Segments matched to the pivot on both sides pair up; everything else
    comes out null-paired. Pivot segments never appear in the result.
    """
    if a_ip.tgt_chapter != a_pj.src_chapter:
        raise MultiAlignError(
            f"pivot chapter mismatch: {a_ip.tgt_chapter!r} vs {a_pj.src_chapter!r}"
        )
    i_of_pivot = a_ip.partner_of_tgt()  # pivot seg -> i seg or None
    j_of_pivot = a_pj.partner_of_src()  # pivot seg -> j seg or None

    pairs: set[Pair] = set()
    for p_seg, i_seg in i_of_pivot.items():
        if i_seg is None:
            continue
        j_seg = j_of_pivot.get(p_seg)
        pairs.add((i_seg, j_seg))
    # i-segments deleted against the pivot
    for i_seg, p_seg in a_ip.partner_of_src().items():
        if p_seg is None:
            pairs.add((i_seg, None))
    # j-segments whose pivot partner is null or unmatched in a_ip
    for j_seg, p_seg in a_pj.partner_of_tgt().items():
        if p_seg is None or i_of_pivot.get(p_seg) is None:
            pairs.add((None, j_seg))
    return PairLinkSet(
        idiom_a=idiom_a, idiom_b=idiom_b, pairs=frozenset(pairs), origin=f"pivot:{pivot}"
    )


def pivot_multialign(
    pivot: str,
    alignments: dict[str, BilingualAlignment],
    seg_index: dict[str, Segment],
    provenance: str = "",
) -> MultiParallelAlignment:
    """Full outer join of the bilingual alignments on the pivot idiom.

    Each alignment must have the pivot chapter on its source side. One row
    per pivot segment (cells null where an idiom deleted it), plus one
    singleton-extended row per non-pivot segment unmatched to the pivot.
    """
    pivot_chapters = {a.src_chapter for a in alignments.values()}
    if len(pivot_chapters) > 1:
        raise MultiAlignError(f"inconsistent pivot chapters: {sorted(pivot_chapters)}")
    if pivot in alignments:
        raise MultiAlignError("pivot idiom must not align against itself")

    some = next(iter(alignments.values()), None)
    pivot_ids = some.src_ids if some is not None else ()
    partners = {idiom: a.partner_of_src() for idiom, a in alignments.items()}

    rows: list[MultiParallelRow] = []
    for p_seg in pivot_ids:
        cells: dict[str, Segment | None] = {pivot: seg_index[p_seg]}
        for idiom, partner in partners.items():
            other = partner.get(p_seg)
            cells[idiom] = seg_index[other] if other is not None else None
        rows.append(MultiParallelRow(cells=cells, provenance=provenance))

    idioms = sorted(alignments)
    all_idioms = sorted([pivot] + idioms)
    for idiom in idioms:
        for t_seg, p_seg in alignments[idiom].partner_of_tgt().items():
            if p_seg is None:
                cells = {k: None for k in all_idioms}
                cells[idiom] = seg_index[t_seg]
                rows.append(MultiParallelRow(cells=cells, provenance=provenance))
    return MultiParallelAlignment(rows=rows)


def consensus(
    pair_sets: dict[str, PairLinkSet],
    required_pivots: list[str] | None = None,
) -> PairLinkSet:
    """Strict intersection of the pivot link sets for one chapter pair.

    Only full (non-null, non-null) pairs participate. ``required_pivots``
    makes a missing pivot an error listing the absentees.
    """
    if required_pivots is not None:
        missing = sorted(set(required_pivots) - set(pair_sets))
        if missing:
            raise MultiAlignError(f"missing pivot inputs: {', '.join(missing)}")
    if not pair_sets:
        raise MultiAlignError("consensus needs at least one pivot input")
    sets = list(pair_sets.values())
    idiom_pair = (sets[0].idiom_a, sets[0].idiom_b)
    for s in sets[1:]:
        if (s.idiom_a, s.idiom_b) != idiom_pair:
            raise MultiAlignError(
                f"pivot sets mix chapter pairs: {idiom_pair} vs {(s.idiom_a, s.idiom_b)}"
            )
    result = sets[0].full_pairs()
    for s in sets[1:]:
        result &= s.full_pairs()
    return PairLinkSet(
        idiom_a=idiom_pair[0], idiom_b=idiom_pair[1], pairs=result, origin="consensus"
    )


@dataclass
class DroppedComponent:
    group_id: str
    segment_ids: list[str]
    reason: str


def assemble_rows(
    consensus_sets: list[PairLinkSet],
    group: ChapterGroup,
    seg_index: dict[str, Segment],
    dropped: list[DroppedComponent] | None = None,
) -> MultiParallelAlignment:
    """Connected components of the consensus pairs become corpus rows.

    Components holding two segments of the same idiom are contradictory and
    are dropped whole (precision over recall), with a log entry.
    """
    for s in consensus_sets:
        if s.origin != "consensus":
            raise MultiAlignError(f"assemble_rows expects consensus sets, got {s.origin!r}")
    adj: dict[str, set[str]] = {}
    for s in consensus_sets:
        for a, b in s.full_pairs():
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)

    seen: set[str] = set()
    rows: list[MultiParallelRow] = []
    for start in sorted(adj):
        if start in seen:
            continue
        stack, component = [start], []
        seen.add(start)
        while stack:
            node = stack.pop()
            component.append(node)
            for nxt in adj[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        segments = [seg_index[sid] for sid in component]
        by_idiom: dict[str, list[Segment]] = {}
        for seg in segments:
            by_idiom.setdefault(seg.idiom, []).append(seg)
        if any(len(v) > 1 for v in by_idiom.values()):
            if dropped is not None:
                dropped.append(
                    DroppedComponent(
                        group_id=group.group_id,
                        segment_ids=sorted(component),
                        reason="multiple segments from one idiom in a consensus component",
                    )
                )
            continue
        cells: dict[str, Segment | None] = {idiom: None for idiom in group.idioms()}
        for idiom, segs in by_idiom.items():
            cells[idiom] = segs[0]
        rows.append(MultiParallelRow(cells=cells, provenance=group.group_id))

    rows.sort(key=lambda r: min((s.position, s.id) for s in r.non_null().values()))
    return MultiParallelAlignment(rows=rows)


def length_filter(row: MultiParallelRow, config: LengthFilterConfig | None = None) -> MultiParallelRow:
    """Null out cells whose length strays beyond the ratio bounds.

    The average is computed once over the original row; removal needs a
    strict inequality, so cells exactly at a bound are kept. Removed cells
    are recorded in the row flags.
    """
    if config is None:
        config = LengthFilterConfig()
    present = row.non_null()
    if len(present) < 2:
        return row
    avg = sum(seg.length(config.unit) for seg in present.values()) / len(present)
    cells: dict[str, Segment | None] = dict(row.cells)
    flags = set(row.flags)
    for idiom, seg in present.items():
        ln = seg.length(config.unit)
        if ln > config.upper_ratio * avg or ln < config.lower_ratio * avg:
            cells[idiom] = None
            flags.add(f"noise-filtered:{idiom}")
    return MultiParallelRow(cells=cells, provenance=row.provenance, flags=frozenset(flags))


def align_group_consensus(
    group: ChapterGroup,
    pair_alignments: dict[tuple[str, str], BilingualAlignment],
    seg_index: dict[str, Segment],
    dropped: list[DroppedComponent] | None = None,
) -> MultiParallelAlignment:
    """Consensus rows for one chapter group from its pairwise alignments.

    ``pair_alignments`` maps every ordered idiom pair of the group to the
    bilingual alignment of the corresponding chapters (both directions, one
    the transpose of the other).
    """
    idioms = group.idioms()
    consensus_sets: list[PairLinkSet] = []
    for ai, i in enumerate(idioms):
        for j in idioms[ai + 1 :]:
            per_pivot: dict[str, PairLinkSet] = {}
            for p in idioms:
                if p == i or p == j:
                    per_pivot[p] = PairLinkSet(
                        idiom_a=i,
                        idiom_b=j,
                        pairs=direct_pairs(pair_alignments[(i, j)], i, j).pairs,
                        origin="direct",
                    )
                else:
                    joined = pivot_join(
                        pair_alignments[(i, p)], pair_alignments[(p, j)], i, j, pivot=p
                    )
                    per_pivot[p] = joined
            consensus_sets.append(consensus(per_pivot, required_pivots=idioms))
    return assemble_rows(consensus_sets, group, seg_index, dropped)
