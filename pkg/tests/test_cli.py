import csv
import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from octchoroid import augment as aug
from octchoroid import cli, pipeline, stats
from octchoroid.imageio import read_grayscale, read_pmap


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(root):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run("phantom", "--out", out, "--n", 4, "--seed", 11) == 0
    return out


def test_phantom_flat_single(tmp_path):
    assert run("phantom", "--out", tmp_path, "--n", 1, "--flat", "--thickness", 300) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["phantom_000.json", "phantom_000.pmap", "phantom_000.png",
                     "phantom_000.truth.json"]
    truth = json.loads((tmp_path / "phantom_000.truth.json").read_text())
    assert truth["measurements"]["mean_thickness_um"] == 300.0
    assert truth["measurements"]["area_mm2"] == pytest.approx(1.8)
    raw, maxval = read_grayscale(tmp_path / "phantom_000.png")
    assert maxval == 65535


def test_phantom_same_seed_identical(tmp_path):
    run("phantom", "--out", tmp_path / "a", "--n", 3, "--seed", 5)
    run("phantom", "--out", tmp_path / "b", "--n", 3, "--seed", 5)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    run("phantom", "--out", tmp_path / "c", "--n", 3, "--seed", 6)
    assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "c")


def test_segment_empty_dir(tmp_path, caplog):
    (tmp_path / "in").mkdir()
    with caplog.at_level("WARNING"):
        assert run("segment", tmp_path / "in", "--out", tmp_path / "out") == 0
    assert "no PNG/PGM images" in caplog.text
    assert read_csv(tmp_path / "out" / "failures.csv") == []
    assert json.loads((tmp_path / "out" / "timing_summary.json").read_text())["n_images"] == 0


def test_segment_missing_input_is_fatal(tmp_path, capsys):
    assert run("segment", tmp_path / "nope", "--out", tmp_path / "out") == 1
    assert "not found" in capsys.readouterr().err


def test_segment_fault_isolation(tmp_path, capsys):
    src = tmp_path / "in"
    run("phantom", "--out", src, "--n", 9, "--seed", 2)
    (src / "phantom_zzz.png").write_bytes(b"\x89PNG broken")
    assert run("segment", src, "--out", tmp_path / "seg", "--backend", "oracle") == 0
    assert "1 image(s) failed" in capsys.readouterr().err
    assert len(list((tmp_path / "seg").glob("*.mask.png"))) == 9
    assert len(list((tmp_path / "seg").glob("*.pmap"))) == 9
    failures = read_csv(tmp_path / "seg" / "failures.csv")
    assert [f["file"] for f in failures] == ["phantom_zzz.png"]
    timing = read_csv(tmp_path / "seg" / "timing.csv")
    assert len(timing) == 10


def test_segment_cnn_outputs(corpus, tmp_path):
    assert run("segment", corpus, "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "timing_summary.json").read_text())
    assert summary["n_ok"] == 4 and summary["mean_s"] > 0 and summary["sd_s"] is not None
    pm = read_pmap(tmp_path / "phantom_000.pmap")
    assert pm.shape == (768, 768)
    raw, maxval = read_grayscale(tmp_path / "phantom_000.mask.png")
    assert set(np.unique(raw)) <= {0.0, 255.0}


def test_segment_external_backend(corpus, tmp_path):
    pattern = str(corpus / "{stem}.pmap")
    assert run("segment", corpus, "--out", tmp_path, "--backend", "external",
               "--external", pattern) == 0
    np.testing.assert_array_equal(read_pmap(tmp_path / "phantom_001.pmap"),
                                  read_pmap(corpus / "phantom_001.pmap"))


def test_measure_flat_corpus(tmp_path):
    # 297.99 um = 77 axial pixels of 3.87 um with the band top on a row centre
    run("phantom", "--out", tmp_path / "c", "--n", 3, "--flat", "--thickness", 297.99)
    assert run("measure", tmp_path / "c", "--out", tmp_path / "m") == 0
    rows = read_csv(tmp_path / "m" / "measurements.csv")
    assert list(rows[0].keys()) == list(pipeline.MEASURE_COLUMNS)
    for row in rows:
        assert float(row["ct_mean_um"]) == pytest.approx(297.99, abs=1e-3)
        for key in ("ct_m2000", "ct_0", "ct_p2000"):
            assert float(row[key]) == pytest.approx(297.99, abs=1e-3)
    run("phantom", "--out", tmp_path / "d", "--n", 2, "--flat", "--thickness", 300)
    run("measure", tmp_path / "d", "--out", tmp_path / "n")
    for row in read_csv(tmp_path / "n" / "measurements.csv"):
        assert abs(float(row["ct_mean_um"]) - 300.0) <= 3.87


def test_measure_roi_truncated_warning(tmp_path):
    run("phantom", "--out", tmp_path / "c", "--n", 1, "--flat")
    assert run("measure", tmp_path / "c", "--out", tmp_path / "m", "--fovea-col", 200) == 0
    row = read_csv(tmp_path / "m" / "measurements.csv")[0]
    assert "RoiTruncated" in row["warnings"]
    assert row["fovea_col"] == "200"


def test_measure_missing_fovea_row_error(tmp_path):
    run("phantom", "--out", tmp_path / "c", "--n", 2, "--flat")
    sidecar = tmp_path / "c" / "phantom_001.json"
    doc = json.loads(sidecar.read_text())
    doc["fovea_col"] = None
    sidecar.write_text(json.dumps(doc))
    assert run("measure", tmp_path / "c", "--out", tmp_path / "m") == 0
    rows = read_csv(tmp_path / "m" / "measurements.csv")
    assert rows[0]["ct_mean_um"] != ""
    assert rows[1]["ct_mean_um"] == "" and "fovea" in rows[1]["warnings"]
    records = json.loads((tmp_path / "m" / "measurements.json").read_text())
    assert "error" in records[1]


def test_measure_fovea_csv(tmp_path):
    run("phantom", "--out", tmp_path / "c", "--n", 2, "--flat")
    (tmp_path / "f.csv").write_text("file,fovea_col\nphantom_000.png,380\nphantom_001.png,390\n")
    run("measure", tmp_path / "c", "--out", tmp_path / "m", "--fovea-csv", tmp_path / "f.csv")
    rows = read_csv(tmp_path / "m" / "measurements.csv")
    assert [r["fovea_col"] for r in rows] == ["380", "390"]


def _write_series(path, rows):
    path.write_text(pipeline.rows_to_csv(rows, pipeline.MEASURE_COLUMNS))


def _series(rng, n, noise=0.0, names=None):
    ct = rng.normal(280, 50, size=n)
    area = rng.normal(1.7, 0.3, size=n)
    rows = []
    for i in range(n):
        rows.append({"file": (names or [f"s{i:02d}.png" for i in range(n)])[i],
                     "ct_mean_um": f"{ct[i] + noise * rng.normal():.4f}",
                     "area_mm2": f"{area[i]:.6f}"})
    return rows


def test_compare_self(tmp_path, rng):
    _write_series(tmp_path / "a.csv", _series(rng, 12))
    assert run("compare", "--a", tmp_path / "a.csv", "--b", tmp_path / "a.csv",
               "--out", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    for m in ("ct_mean_um", "area_mm2"):
        r = rep["measures"][m]
        assert "dice" not in r and "auc" not in r
        assert r["pearson_r"] == 1.0 and r["mae"] == 0.0
        assert r["bland_altman"]["loa_low"] == 0.0 and r["bland_altman"]["loa_high"] == 0.0
    for name in ("correlation_ct_mean_um.svg", "bland_altman_ct_mean_um.svg",
                 "correlation_area_mm2.svg", "bland_altman_area_mm2.svg"):
        assert (tmp_path / "o" / name).read_text().lstrip().startswith("<?xml")


def test_compare_matches_direct_stats(tmp_path, rng):
    a = _series(rng, 30)
    b = [dict(r, ct_mean_um=f"{float(r['ct_mean_um']) + rng.normal(0, 9):.4f}",
              area_mm2=f"{float(r['area_mm2']) + rng.normal(0, 0.05):.6f}") for r in a]
    _write_series(tmp_path / "a.csv", a)
    _write_series(tmp_path / "b.csv", list(reversed(b)))
    run("compare", "--a", tmp_path / "a.csv", "--b", tmp_path / "b.csv", "--out", tmp_path / "o")
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    for m in ("ct_mean_um", "area_mm2"):
        xs = np.array([float(r[m]) for r in a])
        ys = np.array([float(r[m]) for r in b])
        direct = json.loads(json.dumps(stats.agreement_report(xs, ys).to_json()))
        got = {k: v for k, v in rep["measures"][m].items() if k != "excluded"}
        assert got == direct


def test_compare_with_maps(corpus, tmp_path):
    run("segment", corpus, "--out", tmp_path / "seg", "--backend", "oracle")
    run("measure", corpus, "--maps", tmp_path / "seg", "--out", tmp_path / "m")
    cli.truth_csv(corpus, tmp_path / "truth.csv")
    assert run("compare", "--a", tmp_path / "truth.csv", "--b", tmp_path / "m/measurements.csv",
               "--a-maps", corpus, "--b-maps", tmp_path / "seg", "--out", tmp_path / "o") == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["measures"]["ct_mean_um"]["dice"] == 1.0
    assert rep["measures"]["ct_mean_um"]["auc"] == 1.0
    assert rep["measures"]["ct_mean_um"]["mae"] < 5.0
    assert len(read_csv(tmp_path / "o" / "segmentation.csv")) == 4


def test_compare_unpaired(tmp_path, rng, capsys):
    _write_series(tmp_path / "a.csv", _series(rng, 5))
    _write_series(tmp_path / "b.csv", _series(rng, 5, names=[f"t{i}.png" for i in range(5)]))
    assert run("compare", "--a", tmp_path / "a.csv", "--b", tmp_path / "b.csv",
               "--out", tmp_path / "o") == 1
    assert "unpaired" in capsys.readouterr().err


def test_compare_pair_manifest(tmp_path, rng):
    a = _series(rng, 5)
    b = [dict(r, file=f"t{i}.png") for i, r in enumerate(a)]
    _write_series(tmp_path / "a.csv", a)
    _write_series(tmp_path / "b.csv", b)
    (tmp_path / "pairs.csv").write_text(
        "a,b\n" + "".join(f"s{i:02d}.png,t{i}.png\n" for i in range(5)))
    assert run("compare", "--a", tmp_path / "a.csv", "--b", tmp_path / "b.csv", "--pairs",
               tmp_path / "pairs.csv", "--out", tmp_path / "o", "--no-plots") == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["measures"]["ct_mean_um"]["mae"] == 0.0


def test_compare_baseline_ratio(tmp_path, rng):
    a = _series(rng, 20)
    near = [dict(r, ct_mean_um=f"{float(r['ct_mean_um']) + 10:.4f}") for r in a]
    far = [dict(r, ct_mean_um=f"{float(r['ct_mean_um']) + 20:.4f}") for r in a]
    for name, rows in (("a", a), ("near", near), ("far", far)):
        _write_series(tmp_path / f"{name}.csv", rows)
    run("compare", "--a", tmp_path / "a.csv", "--b", tmp_path / "near.csv", "--out",
        tmp_path / "base", "--no-plots")
    run("compare", "--a", tmp_path / "a.csv", "--b", tmp_path / "far.csv", "--out",
        tmp_path / "o", "--no-plots", "--baseline", tmp_path / "base" / "report.json")
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["baseline"]["ct_mean_um"]["mae_ratio"] == pytest.approx(0.5, abs=1e-6)
    assert rep["baseline"]["ct_mean_um"]["baseline_lower_by"] == pytest.approx(0.5, abs=1e-6)


def test_config_file_and_flag_override(tmp_path):
    cfg = {"n": 2, "seed": 4, "flat": True, "thickness": 250.0, "measure": {"area_halfwidth": 2000}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run("phantom", "--config", tmp_path / "cfg.json", "--out", tmp_path / "a",
               "--n", 1) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(files) == 4
    truth = json.loads((tmp_path / "a" / "phantom_000.truth.json").read_text())
    assert truth["measurements"]["mean_thickness_um"] == 250.0
    assert truth["measurements"]["area_mm2"] == pytest.approx(1.0)
    (tmp_path / "bad.json").write_text(json.dumps({"colour": "red"}))
    assert run("phantom", "--config", tmp_path / "bad.json", "--out", tmp_path / "b") == 1


def test_workers_byte_identical(corpus, tmp_path):
    run("segment", corpus, "--out", tmp_path / "w1", "--backend", "oracle")
    run("segment", corpus, "--out", tmp_path / "w2", "--backend", "oracle", "--workers", 2)
    for p in (tmp_path / "w1").glob("*"):
        if p.name.startswith("timing"):
            continue
        assert filecmp.cmp(p, tmp_path / "w2" / p.name, shallow=False), p.name
    run("measure", corpus, "--maps", tmp_path / "w1", "--out", tmp_path / "m1")
    run("measure", corpus, "--maps", tmp_path / "w1", "--out", tmp_path / "m2", "--workers", 2)
    assert tree_bytes(tmp_path / "m1") == tree_bytes(tmp_path / "m2")


def test_augment_outputs_replay(corpus, tmp_path):
    assert run("augment", corpus, "--out", tmp_path / "a", "--seed", 3) == 0
    stems = sorted(p.name for p in (tmp_path / "a").glob("*.augment.jsonl"))
    assert len(stems) == 4
    for i, src in enumerate(pipeline.list_images(corpus)):
        stem = pipeline.stem_of(src)
        log = aug.log_from_jsonl((tmp_path / "a" / f"{stem}.augment.jsonl").read_text())
        cfg = aug.AugmentConfig(seed=aug.derive_seed(3, i))
        raw, maxval = read_grayscale(src)
        expected, expected_log = aug.apply_pipeline(raw / maxval, cfg)
        assert log == json.loads(json.dumps(expected_log))
        np.testing.assert_array_equal(aug.replay(raw / maxval, log), expected)
        out_raw, _ = read_grayscale(tmp_path / "a" / f"{stem}.png")
        np.testing.assert_array_equal(out_raw, np.rint(np.clip(expected, 0, 1) * 65535))
        side = json.loads((tmp_path / "a" / f"{stem}.json").read_text())
        orig = json.loads((corpus / f"{stem}.json").read_text())
        flipped = any(e["name"] == "flip" for e in log)
        assert side["fovea_col"] == (767 - orig["fovea_col"] if flipped else orig["fovea_col"])


def test_rejects_even_window(corpus, tmp_path, capsys):
    assert run("measure", corpus, "--out", tmp_path, "--window", 4) == 1
    assert "odd" in capsys.readouterr().err
