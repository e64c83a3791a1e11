import json

import numpy as np
import pytest

from kwspot.datamodel import (ImageSample, KeywordAnno, KeywordVocab, TextLineAnno, canonical_json,
                              load_dataset, make_vocab, retag_synthetic, sample_to_record, save_dataset,
                              strip_keywords)
from kwspot.errors import InvariantError, IoError, SchemaError, VocabError
from kwspot.geometry import QuadPolygon
from kwspot.synthgen import SynthConfig, synthesize


def box(x1, y1, x2, y2):
    return QuadPolygon([[x1, y1], [x2, y1], [x2, y2], [x1, y2]])


def two_line_sample(origin="synthetic"):
    img = np.full((40, 60, 3), 128 / 255, dtype=np.float32)
    lines = [TextLineAnno(box(2, 2, 50, 14), "ab12"), TextLineAnno(box(2, 20, 40, 32), "xyz")]
    kws = [KeywordAnno(box(2, 2, 26, 14), 1, 0)] if origin == "synthetic" else None
    return ImageSample("s0", img, lines, kws, origin)


def test_vocab_invariants(tmp_path):
    v = KeywordVocab(("ab", "xyz"))
    assert v.K == 2 and v.keyword(1) == "ab" and v.class_id("xyz") == 2
    with pytest.raises(VocabError):
        v.keyword(0)
    for bad in [(), ("ab", "ab"), ("a",), ("abcde",), ("a!",)]:
        with pytest.raises(VocabError):
            KeywordVocab(bad)
    v.save(tmp_path / "v.json")
    assert json.loads((tmp_path / "v.json").read_text()) == {"keywords": ["ab", "xyz"]}
    assert KeywordVocab.load(tmp_path / "v.json") == v


def test_make_vocab_no_nesting():
    v = make_vocab(30, 1)
    assert v.K == 30
    for a in v.entries:
        for b in v.entries:
            assert a == b or a not in b


def test_origin_invariants():
    s = two_line_sample()
    with pytest.raises(InvariantError):
        ImageSample("r", s.image, s.lines, s.keywords, "real")
    with pytest.raises(InvariantError):
        ImageSample("r", s.image, s.lines, None, "synthetic")
    with pytest.raises(InvariantError):
        ImageSample("r", s.image, s.lines, [KeywordAnno(box(30, 20, 58, 38), 1, 0)], "synthetic")


def test_empty_manifest(tmp_path):
    (tmp_path / "manifest.jsonl").write_text("")
    assert load_dataset(tmp_path) == []
    save_dataset([], tmp_path / "out")
    assert (tmp_path / "out" / "manifest.jsonl").read_text() == ""


def test_one_sample_round_trip(tmp_path):
    s = two_line_sample()
    save_dataset([s], tmp_path)
    assert len(list((tmp_path / "images").iterdir())) == 1
    assert len((tmp_path / "manifest.jsonl").read_text().splitlines()) == 1
    (back,) = load_dataset(tmp_path)
    assert len(back.lines) == 2 and len(back.keywords) == 1
    assert back.lines[0].poly == s.lines[0].poly
    np.testing.assert_array_equal(back.image, s.image)


def test_round_trip_50_generated(tmp_path, vocab3):
    samples = synthesize(SynthConfig(image_height=96, image_width=96, lines_per_image=(1, 2),
                                     glyph_size=(12, 16), seed=11), vocab3, 50)
    samples = [strip_keywords(s) if i % 3 == 0 else s for i, s in enumerate(samples)]
    m1 = save_dataset(samples, tmp_path / "a")
    loaded = load_dataset(m1, vocab3)
    for a, b in zip(samples, loaded):
        assert sample_to_record(a) == sample_to_record(b)
        np.testing.assert_array_equal(a.image, b.image)
    m2 = save_dataset(loaded, tmp_path / "b")
    assert m1.read_bytes() == m2.read_bytes()
    canon = "".join(canonical_json(json.loads(r)) + "\n" for r in m1.read_text().splitlines())
    assert m2.read_text() == canon


def test_schema_error_carries_index(tmp_path):
    save_dataset([two_line_sample()], tmp_path)
    good = (tmp_path / "manifest.jsonl").read_text()
    rec = json.loads(good)
    rec["extra"] = 1
    (tmp_path / "manifest.jsonl").write_text(good + json.dumps(rec) + "\n")
    with pytest.raises(SchemaError) as err:
        load_dataset(tmp_path)
    assert err.value.index == 1


def test_real_with_keywords_rejected(tmp_path):
    save_dataset([two_line_sample()], tmp_path)
    rec = json.loads((tmp_path / "manifest.jsonl").read_text())
    rec["origin"] = "real"
    (tmp_path / "manifest.jsonl").write_text(json.dumps(rec) + "\n")
    with pytest.raises(InvariantError) as err:
        load_dataset(tmp_path)
    assert err.value.index == 0


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoError):
        save_dataset([two_line_sample()], blocker / "sub")


def test_strip_keywords():
    s = two_line_sample()
    r = strip_keywords(s)
    assert r.origin == "real" and r.keywords is None and r.lines == s.lines
    empty = retag_synthetic(r)
    assert empty.keywords == [] and empty.origin == "synthetic"
    again = strip_keywords(empty)
    assert again.origin == "real" and again.keywords is None and again.lines == s.lines


def test_loaded_keywords_inside_parent(tmp_path, small_samples):
    from kwspot.geometry import point_polygon_distance

    save_dataset(small_samples, tmp_path)
    for s in load_dataset(tmp_path):
        for kw in s.keywords:
            parent = s.lines[kw.parent_line].poly
            assert all(point_polygon_distance(v, parent) <= 2.0 for v in kw.poly.vertices)
