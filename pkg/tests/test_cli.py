import json
import logging
import math

import numpy as np
import pytest
from PIL import Image

from oracles import ncc
from textforge import __version__
from textforge.cli import main
from textforge.dataio import CurveSpec, Manifest, SampleRecord, crop
from textforge.geometry import ControlPolygon
from textforge.preprocess import fixed_resize, squarize
from textforge.synth import render_block_glyphs


def read_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_manifest(root, items):
    """items: (id, image array, text, polygon or None, curve)."""
    (root / "images").mkdir(parents=True, exist_ok=True)
    recs = []
    for rid, img, text, poly, curve in items:
        Image.fromarray(img).save(root / "images" / f"{rid}.png")
        recs.append(SampleRecord(rid, f"images/{rid}.png", text, poly, None, curve,
                                 curve is not None and curve.is_curved))
    path = root / "manifest.jsonl"
    Manifest(recs).save(path)
    return path


def word_pair(text="ABCDEFGHIJKL", h=24):
    adv = [h] * len(text)
    straight = render_block_glyphs(text, adv, CurveSpec.straight(), h, pad=6)
    curved = render_block_glyphs(text, adv, CurveSpec.circle(math.pi, "down"), h)
    return straight, curved


@pytest.fixture
def pair_manifest(tmp_path):
    (s_img, s_rec), (c_img, c_rec) = word_pair()
    items = [("straight", s_img, "ABCDEFGHIJKL", s_rec.polygon, s_rec.curve),
             ("circle", c_img, "ABCDEFGHIJKL", c_rec.polygon, c_rec.curve),
             ("nopoly", s_img, "ABCDEFGHIJKL", None, None)]
    return write_manifest(tmp_path / "in", items)


def synth_args(corpus, backgrounds, fonts, out, *extra):
    return ["synth", "--fonts", str(fonts), "--backgrounds", str(backgrounds),
            "--corpus", str(corpus), "--glyphs", "block", "--out", str(out), *extra]


# ---------------------------------------------------------------- synth


def test_synth_is_byte_identical_across_runs_and_job_counts(tmp_path, corpus_path, backgrounds_dir,
                                                            empty_fonts_dir):
    outs = []
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
        out = tmp_path / name
        assert main(synth_args(corpus_path, backgrounds_dir, empty_fonts_dir, out,
                               "--count", "40", "--seed", "5", "--jobs", jobs)) == 0
        outs.append(out)
    ref = (outs[0] / "manifest.jsonl").read_bytes()
    assert len(ref.splitlines()) == 40
    for out in outs[1:]:
        assert (out / "manifest.jsonl").read_bytes() == ref
        for png in sorted((outs[0] / "images").iterdir()):
            assert (out / "images" / png.name).read_bytes() == png.read_bytes()


def test_synth_writes_metadata_and_relative_paths(tmp_path, corpus_path, backgrounds_dir,
                                                  empty_fonts_dir):
    out = tmp_path / "o"
    assert main(synth_args(corpus_path, backgrounds_dir, empty_fonts_dir, out,
                           "--count", "12", "--jobs", "1")) == 0
    meta = json.loads((out / "run_metadata.json").read_text())
    assert meta["seed"] == 0 and meta["jobs"] == 1 and meta["version"] == __version__
    assert meta["counts"]["records"] == 12
    assert meta["flags"]["count"] == 12
    m = Manifest.load(out / "manifest.jsonl", validate=True)
    assert all(not r.image_path.startswith("/") for r in m)


def test_seed_environment_variable_sets_default(tmp_path, monkeypatch, corpus_path,
                                                backgrounds_dir, empty_fonts_dir):
    monkeypatch.setenv("TEXTFORGE_SEED", "11")
    out = tmp_path / "o"
    assert main(synth_args(corpus_path, backgrounds_dir, empty_fonts_dir, out,
                           "--count", "3", "--jobs", "1")) == 0
    assert json.loads((out / "run_metadata.json").read_text())["seed"] == 11
    assert main(synth_args(corpus_path, backgrounds_dir, empty_fonts_dir, out,
                           "--count", "3", "--jobs", "1", "--seed", "2")) == 0
    assert json.loads((out / "run_metadata.json").read_text())["seed"] == 2
    monkeypatch.setenv("TEXTFORGE_SEED", "abc")
    assert main(["report"]) == 1


def test_synth_with_missing_fonts_is_a_data_error(tmp_path, corpus_path, backgrounds_dir, caplog):
    missing = tmp_path / "no_such_fonts"
    args = ["synth", "--fonts", str(missing), "--backgrounds", str(backgrounds_dir),
            "--corpus", str(corpus_path), "--count", "2", "--out", str(tmp_path / "o")]
    with caplog.at_level(logging.ERROR):
        assert main(args) == 2
    assert str(missing) in caplog.text


def test_usage_errors_exit_with_one(tmp_path):
    assert main([]) == 1
    assert main(["synth", "--count", "3"]) == 1
    assert main(["report", "--bogus"]) == 1
    assert main(["rectify", "affine", "--manifest", "m", "--out", "o"]) == 1


def test_font_synth(tmp_path, corpus_path, backgrounds_dir, fonts_dir):
    out = tmp_path / "o"
    args = ["synth", "--fonts", str(fonts_dir), "--backgrounds", str(backgrounds_dir),
            "--corpus", str(corpus_path), "--count", "8", "--out", str(out), "--jobs", "1"]
    assert main(args) == 0
    assert len(list((out / "images").glob("*.png"))) == 8


# ---------------------------------------------------------------- rectify


def test_rectify_tps_straight_matches_resized_crop(tmp_path, pair_manifest):
    out = tmp_path / "r"
    assert main(["rectify", "tps", "--manifest", str(pair_manifest), "--out", str(out),
                 "--margin", "0", "--jobs", "1"]) == 0
    src = read_png(pair_manifest.parent / "images" / "straight.png")
    poly = Manifest.load(pair_manifest).records[0].polygon
    want = fixed_resize(crop(src, poly)[0])
    got = read_png(out / "images" / "straight.png")
    assert got.shape == (64, 256, 3)
    assert np.abs(got.astype(float) - want).mean() / 255 <= 2 / 255


def test_rectify_tps_circle_correlates_with_straight(tmp_path, pair_manifest):
    out = tmp_path / "r"
    assert main(["rectify", "tps", "--manifest", str(pair_manifest), "--out", str(out),
                 "--jobs", "1"]) == 0
    a = read_png(out / "images" / "straight.png")
    b = read_png(out / "images" / "circle.png")
    assert ncc(a, b) >= 0.85


def test_rectify_skips_records_without_polygon(tmp_path, pair_manifest, caplog):
    out = tmp_path / "r"
    with caplog.at_level(logging.WARNING):
        assert main(["rectify", "snake", "--manifest", str(pair_manifest), "--out", str(out),
                     "--jobs", "1"]) == 0
    assert "nopoly" in caplog.text
    m = Manifest.load(out / "manifest.jsonl", validate=True)
    assert [r.id for r in m] == ["straight", "circle"]
    meta = json.loads((out / "run_metadata.json").read_text())
    assert meta["counts"] == {"input": 3, "written": 2, "skipped": 1, "failed": 0}
    for r in m:
        img = read_png(out / r.image_path)
        assert img.shape[0] == 64
        assert r.polygon.bbox() == (0, 0, img.shape[1], 64)


def test_rectify_collects_failures(tmp_path):
    img = np.zeros((40, 40, 3), np.uint8)
    good = ControlPolygon(np.stack([np.linspace(2, 38, 10), np.full(10, 5)], 1),
                          np.stack([np.linspace(2, 38, 10), np.full(10, 30)], 1))
    flat = ControlPolygon(good.top, good.top)
    path = write_manifest(tmp_path / "in", [("ok", img, "x", good, None),
                                            ("bad", img, "y", flat, None)])
    for method in ("tps", "snake"):
        out = tmp_path / method
        assert main(["rectify", method, "--manifest", str(path), "--out", str(out),
                     "--jobs", "1"]) == 0
        meta = json.loads((out / "run_metadata.json").read_text())
        assert meta["counts"]["failed"] == 1 and meta["counts"]["written"] == 1
    only_bad = write_manifest(tmp_path / "bad", [("bad", img, "y", flat, None)])
    assert main(["rectify", "tps", "--manifest", str(only_bad), "--out", str(tmp_path / "x"),
                 "--jobs", "1"]) == 2


def test_rectify_missing_manifest_is_data_error(tmp_path):
    assert main(["rectify", "tps", "--manifest", str(tmp_path / "none.jsonl"),
                 "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------- preprocess


def test_preprocess_fixed_outputs(tmp_path, pair_manifest):
    out = tmp_path / "p"
    assert main(["preprocess", "--mode", "fixed", "--manifest", str(pair_manifest),
                 "--out", str(out), "--jobs", "1"]) == 0
    m = Manifest.load(out / "manifest.jsonl")
    assert len(m) == 3
    for r in m:
        assert read_png(out / r.image_path).shape == (64, 256, 3)
    xmin, ymin, xmax, ymax = m.records[0].polygon.bbox()
    assert 0 <= xmin and xmax <= 256 and 0 <= ymin and ymax <= 64


def test_preprocess_squarize_without_rotation_is_plain_squarize(tmp_path, pair_manifest):
    out = tmp_path / "p"
    assert main(["preprocess", "--mode", "squarize", "--rotate-prob", "0",
                 "--manifest", str(pair_manifest), "--out", str(out), "--jobs", "1"]) == 0
    src = Manifest.load(pair_manifest)
    m = Manifest.load(out / "manifest.jsonl")
    for a, b in zip(src, m):
        want, place = squarize(read_png(src.image_file(a)))
        np.testing.assert_array_equal(read_png(out / b.image_path), want)
        if a.polygon is not None:
            np.testing.assert_allclose(b.polygon.points, place.apply(a.polygon.points))


def test_preprocess_squarize_with_rotation(tmp_path, pair_manifest):
    out = tmp_path / "p"
    assert main(["preprocess", "--mode", "squarize", "--rotate-prob", "0.33",
                 "--manifest", str(pair_manifest), "--out", str(out), "--seed", "4",
                 "--jobs", "1"]) == 0
    for r in Manifest.load(out / "manifest.jsonl"):
        img = read_png(out / r.image_path)
        assert img.shape == (256, 256, 3)
        if r.polygon is not None:
            # the polygon still frames dark glyph pixels wherever the image went
            x0, y0, x1, y1 = (int(round(v)) for v in r.polygon.bbox())
            assert img[y0:y1, x0:x1].min() < 50


def test_preprocess_rejects_rotation_in_fixed_mode(tmp_path, pair_manifest):
    assert main(["preprocess", "--mode", "fixed", "--rotate-prob", "0.05",
                 "--manifest", str(pair_manifest), "--out", str(tmp_path / "p")]) == 1


# ---------------------------------------------------------------- mix


def test_mix_extremes_and_paths(tmp_path, pair_manifest):
    (s_img, s_rec), _ = word_pair("HELLO")
    other = write_manifest(tmp_path / "synth", [(f"s{i}", s_img, "HELLO", s_rec.polygon,
                                                s_rec.curve) for i in range(3)])
    for ratio, want in (("0", "synth"), ("1", "real")):
        out = tmp_path / f"mix{ratio}"
        assert main(["mix", "--real", str(pair_manifest), "--synth", str(other), "--ratio", ratio,
                     "--count", "50", "--out", str(out), "--seed", "1"]) == 0
        m = Manifest.load(out / "manifest.jsonl", validate=True)
        assert len(m) == 50
        assert all(f"-{want}-" in r.id for r in m)


def test_mix_is_reproducible(tmp_path, pair_manifest):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["mix", "--real", str(pair_manifest), "--synth", str(pair_manifest),
                     "--count", "200", "--out", str(out), "--seed", "9"]) == 0
        outs.append(out)
    assert (outs[0] / "manifest.jsonl").read_bytes() == (outs[1] / "manifest.jsonl").read_bytes()
    counts = json.loads((outs[0] / "run_metadata.json").read_text())["counts"]
    assert 0 < counts["real"] < 200


def test_mix_with_empty_pool_is_data_error(tmp_path, pair_manifest):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["mix", "--real", str(empty), "--synth", str(pair_manifest),
                 "--count", "5", "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------- evaluation


def test_evaluate_reports_both_case_modes(tmp_path, pair_manifest, capsys):
    preds = tmp_path / "p.tsv"
    preds.write_text("straight\tabcdefghijkl\ncircle\tABCDEFGHIJKL\nnopoly\twrong\n")
    out = tmp_path / "e"
    assert main(["evaluate", "--manifest", str(pair_manifest), "--predictions", str(preds),
                 "--out", str(out)]) == 0
    result = json.loads((out / "evaluation.json").read_text())
    assert result["accuracy"] == pytest.approx(2 / 3)
    assert result["accuracy_case_sensitive"] == pytest.approx(1 / 3)
    assert "accuracy\t0.6667" in capsys.readouterr().out


def test_report_bundled_table(capsys, tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 0
    lines = dict(line.split("\t") for line in capsys.readouterr().out.strip().splitlines())
    assert lines["ratio_00"] == "0.8341"
    assert lines["ratio_15"] == "0.8690"
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["ratio_15"]["samples"] == 13467


def test_report_custom_table_and_missing_file(tmp_path, capsys):
    table = tmp_path / "t.csv"
    table.write_text("dataset,size,accuracy\nA,1,1.0\nB,3,0.0\n")
    assert main(["report", str(table)]) == 0
    assert capsys.readouterr().out.strip() == "all\t0.2500"
    assert main(["report", str(tmp_path / "missing.csv")]) == 2


def test_vote_files(tmp_path):
    files = []
    for i, rows in enumerate([("cat", "x"), ("dog", "y"), ("dog", "x"), ("cat", "z")]):
        p = tmp_path / f"p{i}.tsv"
        p.write_text(f"a\t{rows[0]}\nb\t{rows[1]}\n")
        files.append(str(p))
    out = tmp_path / "v"
    assert main(["vote", *files, "--out", str(out)]) == 0
    assert (out / "predictions.tsv").read_text() == "a\tcat\nb\tx\n"
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tcat\n")
    assert main(["vote", files[0], str(bad), "--out", str(out)]) == 2
