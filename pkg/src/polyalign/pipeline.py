"""End-to-end pipeline: ingest, embed, bialign, multialign, export.

Each stage reads only prior-stage artifacts; every run writes a manifest
with the resolved config, content hashes of all artifacts, and per-stage
counts, so a build can be audited and reproduced bit-for-bit (with a warm
embedding cache).
"""

from __future__ import annotations

import glob
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import export as export_mod
from .bialign import AlignConfig, BilingualAlignment, Link, align_chapter, cost_matrix
from .embedding import EmbeddingCache, ProviderConfig, embed_segments
from .ingest import build_chapter_groups, parse_volume
from .model import (
    BookVolume,
    ChapterGroup,
    MultiParallelAlignment,
    chapter_id,
    load_corpus,
    save_corpus,
    segment_index,
    validate_corpus,
)
from .multialign import DroppedComponent, LengthFilterConfig, align_group_consensus, length_filter

logger = logging.getLogger(__name__)

STAGES = ("ingest", "embed", "bialign", "multialign", "export")


class PipelineError(Exception):
    pass


@dataclass
class PipelineConfig:
    raw_dir: str = ""
    mapping: str = ""
    cache_dir: str = ""
    out_dir: str = ""
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    mode: str = "text"
    dim: int = 256
    align: AlignConfig = field(default_factory=AlignConfig)
    length_filter: LengthFilterConfig = field(default_factory=LengthFilterConfig)
    pivots: str | list[str] = "all"
    stages: dict[str, bool] = field(default_factory=lambda: {s: True for s in STAGES})
    workers: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        cfg = cls(
            raw_dir=doc.get("raw_dir", ""),
            mapping=doc.get("mapping", ""),
            cache_dir=doc.get("cache_dir", ""),
            out_dir=doc.get("out_dir", ""),
            mode=doc.get("mode", "text"),
            dim=int(doc.get("dim", 256)),
            pivots=doc.get("pivots", "all"),
            workers=int(doc.get("workers", 1)),
        )
        if "provider" in doc:
            cfg.provider = ProviderConfig(**doc["provider"])
        if "align" in doc:
            cfg.align = AlignConfig(**doc["align"])
        if "length_filter" in doc:
            cfg.length_filter = LengthFilterConfig(**doc["length_filter"])
        if "stages" in doc:
            cfg.stages = {s: bool(doc["stages"].get(s, True)) for s in STAGES}
        return cfg

    def to_dict(self) -> dict:
        return {
            "raw_dir": self.raw_dir,
            "mapping": self.mapping,
            "cache_dir": self.cache_dir,
            "out_dir": self.out_dir,
            "provider": {
                "name": self.provider.name,
                "endpoint": self.provider.endpoint,
                "model": self.provider.model,
                "batch_size": self.provider.batch_size,
                "auth": self.provider.auth,
            },
            "mode": self.mode,
            "dim": self.dim,
            "align": {
                "skip_cost": self.align.skip_cost,
                "normalization": self.align.normalization,
            },
            "length_filter": {
                "upper_ratio": self.length_filter.upper_ratio,
                "lower_ratio": self.length_filter.lower_ratio,
                "unit": self.length_filter.unit,
            },
            "pivots": self.pivots,
            "stages": dict(self.stages),
            "workers": self.workers,
        }


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return PipelineConfig.from_dict(json.load(fh))


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class _StageWriter:
    """Write stage outputs atomically; failures leave a quarantine file."""

    def __init__(self):
        self.pending: list[tuple[str, str]] = []

    def path_for(self, final_path: str) -> str:
        tmp = final_path + ".tmp"
        self.pending.append((tmp, final_path))
        return tmp

    def commit(self):
        for tmp, final in self.pending:
            os.replace(tmp, final)
        self.pending.clear()

    def quarantine(self):
        for tmp, final in self.pending:
            if os.path.exists(tmp):
                os.replace(tmp, final + ".quarantine")
        self.pending.clear()


# ---------------------------------------------------------------------------
# Stages


def stage_ingest(config: PipelineConfig, writer: _StageWriter) -> dict:
    raw_paths = sorted(glob.glob(os.path.join(config.raw_dir, "*.json")))
    if not raw_paths:
        raise PipelineError(f"no raw volume documents in {config.raw_dir!r}")
    warnings = []
    volumes: list[BookVolume] = []
    for path in raw_paths:
        with open(path, "rb") as fh:
            volumes.append(parse_volume(fh.read(), warnings))
    volumes.sort(key=lambda v: (v.idiom, v.volume_id))
    violations = validate_corpus(volumes)
    if violations:
        raise PipelineError(
            "corpus validation failed: "
            + "; ".join(f"{v.where}: {v.message}" for v in violations[:5])
        )
    with open(config.mapping, encoding="utf-8") as fh:
        groups = build_chapter_groups(volumes, fh.read(), warnings)

    save_corpus(volumes, writer.path_for(os.path.join(config.out_dir, "corpus.json")))
    with open(writer.path_for(os.path.join(config.out_dir, "groups.json")), "w", encoding="utf-8") as fh:
        json.dump(
            {
                g.group_id: {
                    idiom: {
                        "chapter_key": chap.key,
                        "segment_ids": [s.id for s in chap.segments],
                    }
                    for idiom, chap in sorted(g.members.items())
                }
                for g in groups
            },
            fh,
            sort_keys=True,
        )
    with open(writer.path_for(os.path.join(config.out_dir, "warnings.jsonl")), "w", encoding="utf-8") as fh:
        for w in warnings:
            fh.write(w.to_json() + "\n")
    return {
        "volumes": len(volumes),
        "chapter_groups": len(groups),
        "segments": sum(len(c.segments) for v in volumes for c in v.chapters),
        "warnings": len(warnings),
    }


def _load_groups(config: PipelineConfig, volumes: list[BookVolume]) -> list[ChapterGroup]:
    chapters = {}
    for vol in volumes:
        for chap in vol.chapters:
            chapters[chapter_id(vol.idiom, vol.volume_id, chap.key)] = (vol, chap)
    with open(os.path.join(config.out_dir, "groups.json"), encoding="utf-8") as fh:
        doc = json.load(fh)
    groups = []
    for gid in sorted(doc):
        members = {}
        for idiom, info in doc[gid].items():
            seg_ids = info["segment_ids"]
            if not seg_ids:
                continue
            cid = "/".join(seg_ids[0].split("/")[:3])
            members[idiom] = chapters[cid][1]
        groups.append(ChapterGroup(group_id=gid, members=members))
    return groups


def _chapter_matrix(chapter, config: PipelineConfig, cache: EmbeddingCache):
    return embed_segments(
        list(chapter.segments),
        provider_config=config.provider,
        mode=config.mode,
        cache=cache,
        dim=config.dim,
    )


def stage_embed(config: PipelineConfig, writer: _StageWriter) -> dict:
    volumes = load_corpus(os.path.join(config.out_dir, "corpus.json"))
    groups = _load_groups(config, volumes)
    cache = EmbeddingCache(config.cache_dir)
    embedded = 0
    for group in groups:
        for chap in group.members.values():
            _chapter_matrix(chap, config, cache)
            embedded += len(chap.segments)
    return {"segments_embedded": embedded, "chapter_groups": len(groups)}


def _align_pair(args):
    gid, i, j, chap_i, chap_j, config, cache = args
    mat_i = _chapter_matrix(chap_i, config, cache)
    mat_j = _chapter_matrix(chap_j, config, cache)
    costs = cost_matrix(mat_i, mat_j, config.align)
    alignment = align_chapter(
        costs,
        config.align,
        src_chapter=f"{gid}/{i}",
        tgt_chapter=f"{gid}/{j}",
        src_ids=tuple(s.id for s in chap_i.segments),
        tgt_ids=tuple(s.id for s in chap_j.segments),
    )
    return gid, i, j, alignment


def stage_bialign(config: PipelineConfig, writer: _StageWriter) -> dict:
    volumes = load_corpus(os.path.join(config.out_dir, "corpus.json"))
    groups = _load_groups(config, volumes)
    cache = EmbeddingCache(config.cache_dir)

    tasks = []
    for group in groups:
        idioms = group.idioms()
        for a, i in enumerate(idioms):
            for j in idioms[a + 1 :]:
                tasks.append((group.group_id, i, j, group.members[i], group.members[j], config, cache))

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_align_pair, tasks))
    else:
        results = [_align_pair(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1], r[2]))

    out_path = writer.path_for(os.path.join(config.out_dir, "alignments.jsonl"))
    with open(out_path, "w", encoding="utf-8") as fh:
        for gid, i, j, alignment in results:
            fh.write(
                json.dumps(
                    {
                        "group": gid,
                        "src_idiom": i,
                        "tgt_idiom": j,
                        "src_chapter": alignment.src_chapter,
                        "tgt_chapter": alignment.tgt_chapter,
                        "src_ids": list(alignment.src_ids),
                        "tgt_ids": list(alignment.tgt_ids),
                        "links": [
                            {"src": l.src, "tgt": l.tgt, "cost": l.cost}
                            for l in alignment.links
                        ],
                        "total_cost": alignment.total_cost,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return {"chapter_pairs": len(results)}


def load_alignments(path) -> list[tuple[str, str, str, BilingualAlignment]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            alignment = BilingualAlignment(
                src_chapter=doc["src_chapter"],
                tgt_chapter=doc["tgt_chapter"],
                src_ids=tuple(doc["src_ids"]),
                tgt_ids=tuple(doc["tgt_ids"]),
                links=[Link(src=l["src"], tgt=l["tgt"], cost=l["cost"]) for l in doc["links"]],
                total_cost=doc["total_cost"],
            )
            out.append((doc["group"], doc["src_idiom"], doc["tgt_idiom"], alignment))
    return out


def stage_multialign(config: PipelineConfig, writer: _StageWriter) -> dict:
    volumes = load_corpus(os.path.join(config.out_dir, "corpus.json"))
    groups = _load_groups(config, volumes)
    seg_index = segment_index(volumes)
    records = load_alignments(os.path.join(config.out_dir, "alignments.jsonl"))

    by_group: dict[str, dict[tuple[str, str], BilingualAlignment]] = {}
    for gid, i, j, alignment in records:
        pairs = by_group.setdefault(gid, {})
        pairs[(i, j)] = alignment
        pairs[(j, i)] = alignment.transpose()

    all_rows = []
    dropped: list[DroppedComponent] = []
    demoted = 0
    for group in groups:
        pair_alignments = by_group.get(group.group_id, {})
        aligned = align_group_consensus(group, pair_alignments, seg_index, dropped)
        for row in aligned.rows:
            filtered = length_filter(row, config.length_filter)
            if len(filtered.non_null()) >= 2:
                all_rows.append(filtered)
            else:
                demoted += 1

    rows = MultiParallelAlignment(rows=all_rows)
    export_mod.export_rows(rows, writer.path_for(os.path.join(config.out_dir, "rows.jsonl")))
    with open(writer.path_for(os.path.join(config.out_dir, "dropped.jsonl")), "w", encoding="utf-8") as fh:
        for d in dropped:
            fh.write(
                json.dumps(
                    {"group": d.group_id, "segment_ids": d.segment_ids, "reason": d.reason}
                )
                + "\n"
            )
    return {"rows": len(all_rows), "dropped_components": len(dropped), "demoted_rows": demoted}


def stage_export(config: PipelineConfig, writer: _StageWriter) -> dict:
    volumes = load_corpus(os.path.join(config.out_dir, "corpus.json"))
    seg_index = segment_index(volumes)
    rows = export_mod.load_rows(os.path.join(config.out_dir, "rows.jsonl"), seg_index)
    report = export_mod.stats(volumes, rows)
    with open(writer.path_for(os.path.join(config.out_dir, "stats.json")), "w", encoding="utf-8") as fh:
        json.dump(export_mod.stats_to_dict(report), fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(writer.path_for(os.path.join(config.out_dir, "stats.txt")), "w", encoding="utf-8") as fh:
        fh.write(export_mod.render_stats(report))
    return {"aligned_rows": len(rows.rows), "total_aligned_segments": report.total.aligned_segments}


_STAGE_FNS = {
    "ingest": stage_ingest,
    "embed": stage_embed,
    "bialign": stage_bialign,
    "multialign": stage_multialign,
    "export": stage_export,
}

ARTIFACTS = (
    "corpus.json",
    "groups.json",
    "warnings.jsonl",
    "alignments.jsonl",
    "rows.jsonl",
    "dropped.jsonl",
    "stats.json",
    "stats.txt",
)


def run_pipeline(config: PipelineConfig) -> dict:
    """Run all enabled stages in order and write the run manifest."""
    os.makedirs(config.out_dir, exist_ok=True)
    config_json = json.dumps(config.to_dict(), sort_keys=True)
    manifest = {
        "toolkit": "polyalign",
        "config": config.to_dict(),
        "config_hash": hashlib.sha256(config_json.encode()).hexdigest(),
        "sampler": export_mod.SAMPLER_NAME,
        "stages": {},
        "artifacts": {},
    }
    start = time.monotonic()
    for stage in STAGES:
        if not config.stages.get(stage, True):
            continue
        writer = _StageWriter()
        t0 = time.monotonic()
        try:
            counts = _STAGE_FNS[stage](config, writer)
        except Exception as exc:
            writer.quarantine()
            raise PipelineError(f"stage {stage!r} failed: {exc}") from exc
        writer.commit()
        counts["seconds"] = round(time.monotonic() - t0, 3)
        manifest["stages"][stage] = counts
        logger.info("stage %s: %s", stage, counts)
    manifest["wall_seconds"] = round(time.monotonic() - start, 3)
    for name in ARTIFACTS:
        path = os.path.join(config.out_dir, name)
        if os.path.exists(path):
            manifest["artifacts"][name] = _sha256_file(path)
    with open(os.path.join(config.out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest
