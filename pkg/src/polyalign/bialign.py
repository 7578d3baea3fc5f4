"""Optimal monotonic bilingual alignment restricted to 1-1 links and deletions.

The restriction collapses the alignment problem to an O(nm) edit-distance
style dynamic program over embedding costs: moves are substitute (1-1 at the
cell cost), skip-source (1-0) and skip-target (0-1), both at a flat penalty.
A brute-force enumerator over all monotone covers serves as the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingMatrix

# Backtrace preference on exact ties.
TIE_ORDER = ("substitute", "skip-source", "skip-target")

BRUTE_FORCE_BOUND = 8


class AlignmentError(Exception):
    pass


@dataclass(frozen=True)
class AlignConfig:
    skip_cost: float = 0.15
    normalization: str = "raw"  # raw | sampled-mean

    def __post_init__(self):
        if self.skip_cost < 0:
            raise AlignmentError("skip_cost must be non-negative")
        if self.normalization not in ("raw", "sampled-mean"):
            raise AlignmentError(f"unknown normalization {self.normalization!r}")


@dataclass(frozen=True)
class Link:
    src: int | None
    tgt: int | None
    cost: float

    def __post_init__(self):
        if self.src is None and self.tgt is None:
            raise AlignmentError("link must touch at least one side")

    @property
    def is_substitution(self) -> bool:
        return self.src is not None and self.tgt is not None


@dataclass
class BilingualAlignment:
    src_chapter: str
    tgt_chapter: str
    src_ids: tuple[str, ...]
    tgt_ids: tuple[str, ...]
    links: list[Link] = field(default_factory=list)
    total_cost: float = 0.0

    def transpose(self) -> "BilingualAlignment":
        return BilingualAlignment(
            src_chapter=self.tgt_chapter,
            tgt_chapter=self.src_chapter,
            src_ids=self.tgt_ids,
            tgt_ids=self.src_ids,
            links=[Link(src=l.tgt, tgt=l.src, cost=l.cost) for l in self.links],
            total_cost=self.total_cost,
        )

    def pairs_by_id(self) -> list[tuple[str | None, str | None]]:
        """Links as (src id, tgt id) pairs, None on the deleted side."""
        return [
            (
                self.src_ids[l.src] if l.src is not None else None,
                self.tgt_ids[l.tgt] if l.tgt is not None else None,
            )
            for l in self.links
        ]

    def partner_of_src(self) -> dict[str, str | None]:
        return {
            self.src_ids[l.src]: (self.tgt_ids[l.tgt] if l.tgt is not None else None)
            for l in self.links
            if l.src is not None
        }

    def partner_of_tgt(self) -> dict[str, str | None]:
        return {
            self.tgt_ids[l.tgt]: (self.src_ids[l.src] if l.src is not None else None)
            for l in self.links
            if l.tgt is not None
        }


def _default_ids(prefix: str, n: int) -> tuple[str, ...]:
    return tuple(f"{prefix}:{i}" for i in range(n))


_SAMPLE_SEED = 20240917


def cost_matrix(src: EmbeddingMatrix, tgt: EmbeddingMatrix, config: AlignConfig | None = None) -> np.ndarray:
    """Pairwise dissimilarity 1 - cosine between the two chapters' rows."""
    if config is None:
        config = AlignConfig()
    if src.dim != tgt.dim:
        raise AlignmentError(f"dimension mismatch: {src.dim} vs {tgt.dim}")
    if (src.provider, src.mode) != (tgt.provider, tgt.mode):
        raise AlignmentError(
            f"provider/mode mismatch: {(src.provider, src.mode)} vs {(tgt.provider, tgt.mode)}"
        )
    a = src.vectors.astype(np.float64)
    b = tgt.vectors.astype(np.float64)
    costs = 1.0 - np.clip(a @ b.T, -1.0, 1.0)
    if config.normalization == "sampled-mean":
        n, m = costs.shape
        if n and m:
            rng = np.random.default_rng(_SAMPLE_SEED)
            k = min(128, n * m)
            flat = rng.choice(n * m, size=k, replace=False)
            costs = costs / (float(costs.ravel()[flat].mean()) + 1e-6)
    return costs


def _backtrace(dp: np.ndarray, costs: np.ndarray, lam: float) -> list[tuple[int | None, int | None, float]]:
    moves: list[tuple[int | None, int | None, float]] = []
    i, j = costs.shape
    while i > 0 or j > 0:
        # Exact equality holds: dp[i][j] was computed from these expressions.
        if i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + costs[i - 1][j - 1]:
            moves.append((i - 1, j - 1, float(costs[i - 1][j - 1])))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + lam:
            moves.append((i - 1, None, lam))
            i -= 1
        else:
            moves.append((None, j - 1, lam))
            j -= 1
    moves.reverse()
    return moves


def align_chapter(
    costs: np.ndarray,
    config: AlignConfig | None = None,
    src_chapter: str = "src",
    tgt_chapter: str = "tgt",
    src_ids: tuple[str, ...] | None = None,
    tgt_ids: tuple[str, ...] | None = None,
) -> BilingualAlignment:
    """Minimum-cost monotone full cover of the two segment sequences.

    Ties resolve deterministically: substitute, then skip-source, then
    skip-target. Links come out ordered by (src, tgt).
    """
    if config is None:
        config = AlignConfig()
    costs = np.asarray(costs, dtype=np.float64)
    if costs.size and not np.all(np.isfinite(costs)):
        raise AlignmentError("cost matrix contains non-finite entries")
    n, m = costs.shape if costs.ndim == 2 else (len(costs), 0)
    if costs.ndim != 2:
        costs = costs.reshape(n, m)
    lam = config.skip_cost

    dp = np.empty((n + 1, m + 1), dtype=np.float64)
    dp[0, 0] = 0.0
    for i in range(1, n + 1):
        dp[i, 0] = dp[i - 1, 0] + lam
    for j in range(1, m + 1):
        dp[0, j] = dp[0, j - 1] + lam
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dp[i, j] = min(
                dp[i - 1, j - 1] + costs[i - 1, j - 1],
                dp[i - 1, j] + lam,
                dp[i, j - 1] + lam,
            )

    links = [Link(src=s, tgt=t, cost=c) for s, t, c in _backtrace(dp, costs, lam)]
    total = 0.0
    for link in links:
        total += link.cost
    return BilingualAlignment(
        src_chapter=src_chapter,
        tgt_chapter=tgt_chapter,
        src_ids=src_ids if src_ids is not None else _default_ids(src_chapter, n),
        tgt_ids=tgt_ids if tgt_ids is not None else _default_ids(tgt_chapter, m),
        links=links,
        total_cost=total,
    )


_MOVE_RANK = {"substitute": 0, "skip-source": 1, "skip-target": 2}


def _enumerate_covers(n: int, m: int):
    """All monotone full covers as forward move lists (src, tgt, kind)."""
    if n == 0 and m == 0:
        yield []
        return
    if n > 0 and m > 0:
        for rest in _enumerate_covers(n - 1, m - 1):
            yield rest + [(n - 1, m - 1, "substitute")]
    if n > 0:
        for rest in _enumerate_covers(n - 1, m):
            yield rest + [(n - 1, None, "skip-source")]
    if m > 0:
        for rest in _enumerate_covers(n, m - 1):
            yield rest + [(None, m - 1, "skip-target")]


def brute_force_align(
    costs: np.ndarray,
    config: AlignConfig | None = None,
    src_chapter: str = "src",
    tgt_chapter: str = "tgt",
    src_ids: tuple[str, ...] | None = None,
    tgt_ids: tuple[str, ...] | None = None,
) -> BilingualAlignment:
    """Exhaustive oracle: enumerate every monotone full cover, take the best.

    Tie-breaking matches the DP backtrace: among equal-cost covers, the one
    whose reversed move-kind sequence (substitute < skip-source < skip-target)
    is lexicographically smallest wins. Bounded to n, m <= 8.
    """
    if config is None:
        config = AlignConfig()
    costs = np.asarray(costs, dtype=np.float64)
    n, m = costs.shape
    if n > BRUTE_FORCE_BOUND or m > BRUTE_FORCE_BOUND:
        raise AlignmentError(f"brute force bounded to {BRUTE_FORCE_BOUND}x{BRUTE_FORCE_BOUND}")
    lam = config.skip_cost

    best = None
    best_key = None
    for cover in _enumerate_covers(n, m):
        total = 0.0
        for s, t, kind in cover:
            total += costs[s, t] if kind == "substitute" else lam
        key = (total, tuple(_MOVE_RANK[kind] for _, _, kind in reversed(cover)))
        if best_key is None or key < best_key:
            best, best_key = cover, key

    links = [
        Link(src=s, tgt=t, cost=float(costs[s, t]) if kind == "substitute" else lam)
        for s, t, kind in best
    ]
    total = 0.0
    for link in links:
        total += link.cost
    return BilingualAlignment(
        src_chapter=src_chapter,
        tgt_chapter=tgt_chapter,
        src_ids=src_ids if src_ids is not None else _default_ids(src_chapter, n),
        tgt_ids=tgt_ids if tgt_ids is not None else _default_ids(tgt_chapter, m),
        links=links,
        total_cost=total,
    )


def check_full_cover(alignment: BilingualAlignment) -> None:
    """Raise if the alignment is not a monotone full cover."""
    n, m = len(alignment.src_ids), len(alignment.tgt_ids)
    srcs = [l.src for l in alignment.links if l.src is not None]
    tgts = [l.tgt for l in alignment.links if l.tgt is not None]
    if sorted(srcs) != list(range(n)) or sorted(tgts) != list(range(m)):
        raise AlignmentError("alignment does not cover all segments exactly once")
    subs = [(l.src, l.tgt) for l in alignment.links if l.is_substitution]
    for (i, j), (i2, j2) in zip(subs, subs[1:]):
        if not (i < i2 and j < j2):
            raise AlignmentError("1-1 links are not monotone")
