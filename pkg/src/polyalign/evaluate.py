"""Alignment-quality evaluation.

Strict precision/recall/F1 against gold rows (a hypothesis link counts only
on exact match of its full source/target sets, deletions excluded), and the
greedy 1-NN harness for comparing embedding inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .embedding import EmbeddingMatrix
from .model import MultiParallelAlignment

logger = logging.getLogger(__name__)


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, correct: int, n_hyp: int, n_gold: int) -> "PRF":
        if n_hyp == 0 or n_gold == 0:
            logger.warning(
                "empty denominator in strict PRF (hyp=%d, gold=%d)", n_hyp, n_gold
            )
        p = correct / n_hyp if n_hyp else 0.0
        r = correct / n_gold if n_gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(precision=p, recall=r, f1=f1)


# A gold row: idiom -> ordered tuple of segment ids (empty = deletion).
@dataclass
class GoldAlignment:
    idioms: list[str]
    rows: list[dict[str, tuple[str, ...]]]


GoldLink = tuple[tuple[str, ...], tuple[str, ...]]


def _as_links(hypothesis) -> set[GoldLink]:
    """Normalize a PairLinkSet, link-pair iterable, or gold link set.

    Each element becomes (source id tuple, target id tuple); null-sided
    entries (deletions) are dropped.
    """
    pairs = getattr(hypothesis, "pairs", hypothesis)
    links: set[GoldLink] = set()
    for item in pairs:
        a, b = item
        a_set = tuple(a) if isinstance(a, (tuple, list, set, frozenset)) else (a,)
        b_set = tuple(b) if isinstance(b, (tuple, list, set, frozenset)) else (b,)
        a_set = tuple(sorted(x for x in a_set if x is not None))
        b_set = tuple(sorted(x for x in b_set if x is not None))
        if a_set and b_set:
            links.add((a_set, b_set))
    return links


def strict_prf(hypothesis, gold) -> PRF:
    """Strict precision/recall/F1 of hypothesis links against gold links.

    A hypothesis link is correct iff its (source-set, target-set) exactly
    equals a gold link's sets. Deletions count in neither numerator nor
    denominator.
    """
    hyp = _as_links(hypothesis)
    gld = _as_links(gold)
    correct = len(hyp & gld)
    return PRF.from_counts(correct, len(hyp), len(gld))


def _project_rows(alignment: MultiParallelAlignment, idiom_a: str, idiom_b: str):
    pairs = []
    for row in alignment.rows:
        a = row.cells.get(idiom_a)
        b = row.cells.get(idiom_b)
        if a is not None and b is not None:
            pairs.append(((a.id,), (b.id,)))
    return pairs


def _project_gold(gold: GoldAlignment, idiom_a: str, idiom_b: str):
    pairs = []
    for row in gold.rows:
        a = row.get(idiom_a, ())
        b = row.get(idiom_b, ())
        if a and b:
            pairs.append((tuple(sorted(a)), tuple(sorted(b))))
    return pairs


def multi_prf(
    hypothesis: MultiParallelAlignment, gold: GoldAlignment
) -> tuple[dict[tuple[str, str], PRF], PRF]:
    """Per-idiom-pair strict PRF plus the unweighted macro average."""
    table: dict[tuple[str, str], PRF] = {}
    for idiom_a, idiom_b in combinations(sorted(gold.idioms), 2):
        table[(idiom_a, idiom_b)] = strict_prf(
            _project_rows(hypothesis, idiom_a, idiom_b),
            _project_gold(gold, idiom_a, idiom_b),
        )
    if table:
        scores = list(table.values())
        macro = PRF(
            precision=sum(s.precision for s in scores) / len(scores),
            recall=sum(s.recall for s in scores) / len(scores),
            f1=sum(s.f1 for s in scores) / len(scores),
        )
    else:
        macro = PRF(0.0, 0.0, 0.0)
    return table, macro


def greedy_accuracy(
    src: EmbeddingMatrix, tgt: EmbeddingMatrix, gold_pairs: list[tuple[int, int]]
) -> float:
    """Fraction of gold 1-1 pairs whose argmax-cosine target is the gold one.

    Ties go to the lowest target index.
    """
    if not gold_pairs:
        raise EvalError("greedy_accuracy requires at least one gold pair")
    sims = src.vectors.astype(np.float64) @ tgt.vectors.astype(np.float64).T
    correct = 0
    for s, t in gold_pairs:
        if not (0 <= s < sims.shape[0] and 0 <= t < sims.shape[1]):
            raise EvalError(f"gold pair ({s}, {t}) out of range for {sims.shape}")
        if int(np.argmax(sims[s])) == t:  # np.argmax returns the first maximum
            correct += 1
    return correct / len(gold_pairs)


def load_gold(path) -> GoldAlignment:
    """Parse the gold TSV: header = idiom codes, cells = ';'-separated ids."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise EvalError("empty gold file")
    idioms = [c.strip() for c in lines[0].split("\t")]
    rows: list[dict[str, tuple[str, ...]]] = []
    seen: dict[str, int] = {}
    for row_no, line in enumerate(lines[1:], start=1):
        cells = line.split("\t")
        cells += [""] * (len(idioms) - len(cells))
        row: dict[str, tuple[str, ...]] = {}
        for idiom, cell in zip(idioms, cells):
            ids = tuple(s.strip() for s in cell.split(";") if s.strip())
            row[idiom] = ids
            for sid in ids:
                if sid in seen:
                    raise EvalError(
                        f"segment {sid!r} appears in gold rows {seen[sid]} and {row_no}"
                    )
                seen[sid] = row_no
        if not any(row.values()):
            raise EvalError(f"gold row {row_no} has no non-empty cell")
        rows.append(row)
    return GoldAlignment(idioms=idioms, rows=rows)
