import json

import pytest

from polyalign.model import (
    BookVolume,
    Chapter,
    Segment,
    check_idiom,
    corpus_from_dict,
    corpus_to_dict,
    count_tokens,
    load_corpus,
    make_segment_id,
    normalize_chapter_key,
    save_corpus,
    segment_index,
    validate_corpus,
)


def make_segment(idiom="puter", volume="v1", chapter="intro", pos=0, text="hello world"):
    return Segment(
        id=make_segment_id(idiom, volume, chapter, pos),
        idiom=idiom,
        position=pos,
        html=f"<p>{text}</p>",
        text=text,
        token_count=count_tokens(text),
    )


def make_volume(idiom="puter", volume_id="v1", n_segments=3):
    segs = tuple(
        make_segment(idiom, volume_id, "intro", i, f"segment number {i}")
        for i in range(n_segments)
    )
    chapter = Chapter(key="intro", title="Intro", segments=segs)
    return BookVolume(idiom=idiom, volume_id=volume_id, grade=1, kind="workbook", chapters=(chapter,))


class TestValidateCorpus:
    def test_well_formed_volume_gives_empty_report(self):
        assert validate_corpus([make_volume()]) == []

    def test_empty_text_segment_is_one_violation(self):
        bad = Segment(id="puter/v1/intro/0", idiom="puter", position=0, html="<p> </p>", text="  ", token_count=1)
        vol = BookVolume(
            idiom="puter", volume_id="v1", grade=1, kind="workbook",
            chapters=(Chapter(key="intro", title="Intro", segments=(bad,)),),
        )
        report = validate_corpus([vol])
        assert len(report) == 1
        assert report[0].where == "puter/v1/intro/0"

    def test_duplicate_position_is_reported(self):
        seg0 = make_segment(pos=0)
        seg_wrong = make_segment(pos=0)  # occupies slot 1 but claims position 0
        vol = BookVolume(
            idiom="puter", volume_id="v1", grade=1, kind="workbook",
            chapters=(Chapter(key="intro", title="Intro", segments=(seg0, seg_wrong)),),
        )
        report = validate_corpus([vol])
        assert any("position" in v.message for v in report)

    def test_disallowed_tag_in_text(self):
        seg = Segment(id="puter/v1/intro/0", idiom="puter", position=0,
                      html="<p><em>x</em></p>", text="<em>x</em>", token_count=1)
        vol = BookVolume(
            idiom="puter", volume_id="v1", grade=1, kind="workbook",
            chapters=(Chapter(key="intro", title="Intro", segments=(seg,)),),
        )
        assert any("disallowed tag" in v.message for v in validate_corpus([vol]))

    def test_strong_tag_is_allowed(self):
        seg = Segment(id="puter/v1/intro/0", idiom="puter", position=0,
                      html="<p><strong>x</strong></p>", text="<strong>x</strong>", token_count=1)
        vol = BookVolume(
            idiom="puter", volume_id="v1", grade=1, kind="workbook",
            chapters=(Chapter(key="intro", title="Intro", segments=(seg,)),),
        )
        assert validate_corpus([vol]) == []


def test_check_idiom_rejects_bad_codes():
    for bad in ("", "Sursilvan", "with space", "über"):
        with pytest.raises(ValueError):
            check_idiom(bad)
    assert check_idiom("sursilvan") == "sursilvan"


def test_count_tokens_whitespace_and_nfc():
    assert count_tokens("la polizia ha controllà") == 4
    assert count_tokens("  a\t b\nc ") == 3
    # composed and decomposed forms agree after NFC
    assert count_tokens("é x") == count_tokens("é x")


def test_normalize_chapter_key():
    assert normalize_chapter_key("  L'alfabet, per plaschair!  ") == "l alfabet per plaschair"
    assert normalize_chapter_key("Chapter 003") == "chapter 003"


def test_corpus_round_trip(tmp_path, small_corpus):
    path = tmp_path / "corpus.json"
    save_corpus(small_corpus.volumes, path)
    reloaded = load_corpus(path)
    assert reloaded == small_corpus.volumes
    # dict-level round trip too
    assert corpus_from_dict(corpus_to_dict(small_corpus.volumes)) == small_corpus.volumes


def test_segment_ids_injective(small_corpus):
    ids = [s.id for v in small_corpus.volumes for c in v.chapters for s in c.segments]
    assert len(ids) == len(set(ids))
    index = segment_index(small_corpus.volumes)
    assert len(index) == len(ids)


def test_segment_length_units():
    seg = make_segment(text="ab cd")
    assert seg.length("tokens") == 2
    assert seg.length("characters") == 5
    with pytest.raises(ValueError):
        seg.length("bytes")
