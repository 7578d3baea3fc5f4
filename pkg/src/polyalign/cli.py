"""Command-line interface: the full pipeline plus one subcommand per stage."""

from __future__ import annotations

import json
import os
import sys

import click

from . import __version__
from .bialign import AlignConfig, align_chapter, cost_matrix
from .embedding import EmbeddingCache, ProviderConfig, embed_segments
from .evaluate import load_gold, multi_prf
from .export import (
    export_bitext,
    export_rows,
    load_rows,
    render_stats,
    sample_rows,
    split_rows,
    stats,
    stats_to_dict,
    write_sheet,
)
from .ingest import build_chapter_groups, parse_volume
from .model import (
    MultiParallelAlignment,
    load_corpus,
    save_corpus,
    segment_index,
    validate_corpus,
)
from .multialign import (
    DroppedComponent,
    LengthFilterConfig,
    align_group_consensus,
    length_filter,
    pivot_multialign,
)
from .pipeline import (
    PipelineConfig,
    load_alignments,
    load_config,
    run_pipeline,
)

FORMAT_VERSION = "polyalign-corpus/1"


@click.group()
@click.version_option(__version__, message=f"polyalign %(version)s ({FORMAT_VERSION})")
def main():
    """Multi-parallel segment alignment toolkit."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def run(config_path):
    """Run the whole pipeline from a config file."""
    config = load_config(config_path)
    manifest = run_pipeline(config)
    click.echo(json.dumps({s: c for s, c in manifest["stages"].items()}, indent=1))


@main.command()
@click.option("--raw-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--mapping", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--groups", "groups_path", default=None, type=click.Path())
def ingest(raw_dir, mapping, out_path, report_path, groups_path):
    """Parse raw volumes, segment HTML, build chapter groups."""
    import glob

    warnings = []
    volumes = []
    for path in sorted(glob.glob(os.path.join(raw_dir, "*.json"))):
        with open(path, "rb") as fh:
            volumes.append(parse_volume(fh.read(), warnings))
    volumes.sort(key=lambda v: (v.idiom, v.volume_id))
    violations = validate_corpus(volumes)
    if violations:
        for v in violations:
            click.echo(f"violation: {v.where}: {v.message}", err=True)
        sys.exit(1)
    with open(mapping, encoding="utf-8") as fh:
        groups = build_chapter_groups(volumes, fh.read(), warnings)
    save_corpus(volumes, out_path)
    if groups_path is None:
        groups_path = out_path + ".groups.json"
    with open(groups_path, "w", encoding="utf-8") as fh:
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
    with open(report_path, "w", encoding="utf-8") as fh:
        for w in warnings:
            fh.write(w.to_json() + "\n")
    click.echo(f"{len(volumes)} volumes, {len(groups)} chapter groups, {len(warnings)} warnings")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--provider", default="hash")
@click.option("--mode", type=click.Choice(["text", "html", "concat"]), default="text")
@click.option("--cache", "cache_dir", required=True, type=click.Path())
@click.option("--model", default="ngram3-v1")
@click.option("--endpoint", default="")
@click.option("--auth", default="", help="Env var holding the API secret.")
@click.option("--batch-size", default=64)
@click.option("--dim", default=256)
def embed(corpus_path, provider, mode, cache_dir, model, endpoint, auth, batch_size, dim):
    """Embed every corpus segment through the on-disk cache."""
    volumes = load_corpus(corpus_path)
    config = ProviderConfig(
        name=provider, endpoint=endpoint, model=model, batch_size=batch_size, auth=auth
    )
    cache = EmbeddingCache(cache_dir)
    total = 0
    for vol in volumes:
        for chap in vol.chapters:
            embed_segments(list(chap.segments), config, mode, cache, dim=dim)
            total += len(chap.segments)
    click.echo(f"embedded {total} segments into {cache_dir}")


def _load_groups_file(groups_path, volumes):
    from .model import ChapterGroup, chapter_id

    chapters = {}
    for vol in volumes:
        for chap in vol.chapters:
            chapters[chapter_id(vol.idiom, vol.volume_id, chap.key)] = chap
    with open(groups_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    groups = []
    for gid in sorted(doc):
        members = {}
        for idiom, info in doc[gid].items():
            seg_ids = info["segment_ids"]
            if seg_ids:
                members[idiom] = chapters["/".join(seg_ids[0].split("/")[:3])]
        groups.append(ChapterGroup(group_id=gid, members=members))
    return groups


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--groups", "groups_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "cache_dir", required=True, type=click.Path())
@click.option("--pair", default="all", help="SRC:TGT idiom pair, or 'all'.")
@click.option("--lambda", "skip_cost", default=0.15)
@click.option("--provider", default="hash")
@click.option("--mode", type=click.Choice(["text", "html", "concat"]), default="text")
@click.option("--dim", default=256)
@click.option("--out", "out_path", required=True, type=click.Path())
def bialign(corpus_path, groups_path, cache_dir, pair, skip_cost, provider, mode, dim, out_path):
    """Align chapter pairs with the monotone 1-1/deletion DP."""
    volumes = load_corpus(corpus_path)
    groups = _load_groups_file(groups_path, volumes)
    cache = EmbeddingCache(cache_dir)
    pconfig = ProviderConfig(name=provider)
    aconfig = AlignConfig(skip_cost=skip_cost)
    wanted = None if pair == "all" else tuple(pair.split(":"))
    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for group in groups:
            idioms = group.idioms()
            for a, i in enumerate(idioms):
                for j in idioms[a + 1 :]:
                    if wanted is not None and (i, j) != wanted and (j, i) != wanted:
                        continue
                    mat_i = embed_segments(list(group.members[i].segments), pconfig, mode, cache, dim=dim)
                    mat_j = embed_segments(list(group.members[j].segments), pconfig, mode, cache, dim=dim)
                    alignment = align_chapter(
                        cost_matrix(mat_i, mat_j, aconfig),
                        aconfig,
                        src_chapter=f"{group.group_id}/{i}",
                        tgt_chapter=f"{group.group_id}/{j}",
                        src_ids=tuple(s.id for s in group.members[i].segments),
                        tgt_ids=tuple(s.id for s in group.members[j].segments),
                    )
                    fh.write(
                        json.dumps(
                            {
                                "group": group.group_id,
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
                    count += 1
    click.echo(f"aligned {count} chapter pairs -> {out_path}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--groups", "groups_path", required=True, type=click.Path(exists=True))
@click.option("--alignments", "alignments_path", required=True, type=click.Path(exists=True))
@click.option("--pivot", default="all", help="'all' for consensus, or one pivot idiom.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--dropped", "dropped_path", required=True, type=click.Path())
@click.option("--length-unit", type=click.Choice(["tokens", "characters"]), default="tokens")
@click.option("--no-length-filter", is_flag=True, default=False)
def multialign(corpus_path, groups_path, alignments_path, pivot, out_path, dropped_path,
               length_unit, no_length_filter):
    """Build multi-parallel rows by consensus (or one pivot's outer join)."""
    volumes = load_corpus(corpus_path)
    groups = _load_groups_file(groups_path, volumes)
    seg_index = segment_index(volumes)
    records = load_alignments(alignments_path)
    by_group = {}
    for gid, i, j, alignment in records:
        pairs = by_group.setdefault(gid, {})
        pairs[(i, j)] = alignment
        pairs[(j, i)] = alignment.transpose()

    fconfig = LengthFilterConfig(unit=length_unit)
    all_rows = []
    dropped: list[DroppedComponent] = []
    for group in groups:
        pair_alignments = by_group.get(group.group_id, {})
        if pivot == "all":
            aligned = align_group_consensus(group, pair_alignments, seg_index, dropped)
        else:
            if pivot not in group.members:
                continue
            per_idiom = {
                j: pair_alignments[(pivot, j)] for j in group.idioms() if j != pivot
            }
            aligned = pivot_multialign(pivot, per_idiom, seg_index, provenance=group.group_id)
        for row in aligned.rows:
            if not no_length_filter:
                row = length_filter(row, fconfig)
            if len(row.non_null()) >= 2:
                all_rows.append(row)
    export_rows(MultiParallelAlignment(rows=all_rows), out_path)
    with open(dropped_path, "w", encoding="utf-8") as fh:
        for d in dropped:
            fh.write(json.dumps({"group": d.group_id, "segment_ids": d.segment_ids, "reason": d.reason}) + "\n")
    click.echo(f"{len(all_rows)} aligned rows, {len(dropped)} dropped components")


@main.command()
@click.option("--hyp", "hyp_path", required=True, type=click.Path(exists=True))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
def evaluate(hyp_path, gold_path, corpus_path, report_path):
    """Strict precision/recall/F1 of hypothesis rows against gold rows."""
    volumes = load_corpus(corpus_path)
    seg_index = segment_index(volumes)
    rows = load_rows(hyp_path, seg_index)
    gold = load_gold(gold_path)
    table, macro = multi_prf(rows, gold)
    report = {
        "pairs": {
            f"{a}-{b}": {"precision": s.precision, "recall": s.recall, "f1": s.f1}
            for (a, b), s in sorted(table.items())
        },
        "macro": {"precision": macro.precision, "recall": macro.recall, "f1": macro.f1},
    }
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    click.echo(
        f"macro P/R/F1 = {macro.precision:.3f}/{macro.recall:.3f}/{macro.f1:.3f}"
    )


@main.group()
def export():
    """Emit row files, bitext, statistics, splits, sample sheets."""


def _read_rows(rows_path, corpus_path):
    volumes = load_corpus(corpus_path)
    seg_index = segment_index(volumes)
    return volumes, load_rows(rows_path, seg_index)


@export.command("rows")
@click.option("--rows", "rows_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def export_rows_cmd(rows_path, corpus_path, out_path):
    """Re-emit rows in canonical order after validating references."""
    _, rows = _read_rows(rows_path, corpus_path)
    n = export_rows(rows, out_path)
    click.echo(f"wrote {n} rows")


@export.command("bitext")
@click.option("--rows", "rows_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--pair", required=True, help="SRC:TGT idiom pair.")
@click.option("--out", "out_path", required=True, type=click.Path())
def export_bitext_cmd(rows_path, corpus_path, pair, out_path):
    """Two-column TSV for one idiom pair."""
    idiom_a, _, idiom_b = pair.partition(":")
    _, rows = _read_rows(rows_path, corpus_path)
    n = export_bitext(rows, idiom_a, idiom_b, out_path)
    click.echo(f"wrote {n} bitext lines")


@export.command("stats")
@click.option("--rows", "rows_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def export_stats_cmd(rows_path, corpus_path, out_path):
    """Corpus statistics table (overall vs aligned)."""
    volumes, rows = _read_rows(rows_path, corpus_path)
    report = stats(volumes, rows)
    text = render_stats(report)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(stats_to_dict(report), fh, indent=1, sort_keys=True)
            fh.write("\n")
    click.echo(text, nl=False)


@export.command("split")
@click.option("--rows", "rows_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--splits", "splits_path", required=True, type=click.Path(exists=True),
              help="JSON file mapping volume_id to train/validation/test/extra.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def export_split_cmd(rows_path, corpus_path, splits_path, out_dir):
    """Partition rows into per-split files by volume assignment."""
    _, rows = _read_rows(rows_path, corpus_path)
    with open(splits_path, encoding="utf-8") as fh:
        assignment = json.load(fh)
    os.makedirs(out_dir, exist_ok=True)
    conflicts = []
    parts = split_rows(rows, assignment, conflicts)
    for name, part in parts.items():
        export_rows(part, os.path.join(out_dir, f"{name}.jsonl"))
    with open(os.path.join(out_dir, "conflicts.jsonl"), "w", encoding="utf-8") as fh:
        for c in conflicts:
            fh.write(json.dumps(c) + "\n")
    click.echo(
        ", ".join(f"{name}: {len(part.rows)}" for name, part in parts.items())
        + f", conflicts: {len(conflicts)}"
    )


@export.command("sample")
@click.option("--rows", "rows_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--n", "n", required=True, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def export_sample_cmd(rows_path, corpus_path, n, seed, out_path):
    """Random evaluation sheet of n rows (seeded, reproducible)."""
    _, rows = _read_rows(rows_path, corpus_path)
    header, sheet = sample_rows(rows, n, seed)
    write_sheet(header, sheet, out_path)
    click.echo(f"wrote sheet with {len(sheet)} rows")


if __name__ == "__main__":
    main()
