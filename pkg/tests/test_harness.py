import csv
import json
import re
from pathlib import Path

import numpy as np
import pytest

from signlab import harness
from signlab.dataset import ClipRecord, FrameRecord, Manifest, load_manifest, save_manifest
from signlab.errors import ConfigError
from signlab.harness import (ComparisonReport, RunResult, TooFewRuns, cell_seed, compare,
                             comparisons_for, confusion_heatmap, emit_report, load_config,
                             prepare_backgrounds, run_experiment)
from signlab.imagecore import Image, load_pgm, load_ppm, save_pgm, save_ppm
from signlab.stats import one_way_anova, read_groups_csv, compare_groups

TINY_TRAIN = {"baseline_epochs": 2, "baseline_lr": 0.05, "batch_size": 16}


def write_config(path: Path, manifest: Path, conditions, repeats=2, **extra):
    doc = {"manifest_path": str(manifest), "seed": 11, "repeats": repeats,
           "model": {"kind": "single-stream", "resolutions": [16, 16], "channels": [4], "hidden": 8},
           "train": TINY_TRAIN, "conditions": conditions, **extra}
    path.write_text(json.dumps(doc))
    return path


def result(cond, run, test, val=None):
    return RunResult(cond, run, cell_seed(0, cond, run), test_accuracy=test, validation_accuracy=val,
                     confusion=np.eye(15, dtype=int).tolist())


def test_cell_seeds_are_distinct_and_stable():
    seeds = {cell_seed(5, c, r) for c in ("a", "b") for r in range(3)}
    assert len(seeds) == 6
    assert cell_seed(5, "a", 0) == cell_seed(5, "a", 0)
    assert cell_seed(5, "a", 0) ^ cell_seed(6, "a", 0) == 5 ^ 6


def test_config_parsing(tmp_path):
    p = write_config(tmp_path / "c.json", Path("data/m.json"),
                     [{"name": "a", "fps": 30, "policy": "default"},
                      {"name": "b", "fps": 20, "policy": {"enabled": ["rotation"]},
                       "background": "bg/manifest.json"},
                      {"name": "c", "fps": 60}])
    cfg = load_config(p)
    assert cfg.manifest_path == (tmp_path / "data" / "m.json").resolve()
    a, b, c = cfg.conditions
    assert a.policy is not None and c.policy is None
    assert b.policy.enabled == {"rotation"} and Path(b.background) == (tmp_path / "bg" / "manifest.json").resolve()
    assert cfg.repeats == 2 and cfg.split_fraction == 0.8
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path / "d.json", Path("m.json"), [{"name": "a", "fps": 1}] * 2))
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path / "e.json", Path("m.json"), [{"name": "a", "fps": 1}], repeats=0))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_single_cell_smoke(tmp_path, solid_manifest):
    cfg = load_config(write_config(tmp_path / "c.json", solid_manifest,
                                   [{"name": "only", "fps": 30}], repeats=1))
    results = run_experiment(cfg, tmp_path / "out")
    assert len(results) == 1 and results[0].ok
    r = results[0]
    assert 0 <= r.test_accuracy <= 1 and r.validation_accuracy is None
    hist = (tmp_path / "out" / r.history_path).read_text().splitlines()
    assert hist[0] == "epoch,phase,train_loss,train_acc,test_acc" and len(hist) == 3
    assert np.array(r.confusion).shape == (15, 15)


def test_matrix_resume_and_failures(tmp_path, hands_manifest, monkeypatch):
    cfg = load_config(write_config(tmp_path / "c.json", hands_manifest,
                                   [{"name": "fps60", "fps": 60}, {"name": "bad", "fps": 120}],
                                   repeats=2))
    out = tmp_path / "out"
    results = run_experiment(cfg, out)
    assert [(r.condition, r.status) for r in results] == [
        ("fps60", "ok"), ("fps60", "ok"), ("bad", "failed"), ("bad", "failed")]
    assert "InvalidRate" in results[2].error
    assert all(r.validation_accuracy is not None for r in results[:2])
    emit_report(results, comparisons_for(results), out)
    first = (out / "results.csv").read_bytes()
    assert len(first.splitlines()) == 3

    calls = []
    real = harness.run_cell
    monkeypatch.setattr(harness, "run_cell", lambda *a, **k: calls.append(a[1].name) or real(*a, **k))
    (out / "runs" / "fps60__run1.json").unlink()
    again = run_experiment(cfg, out)
    assert calls == ["fps60", "bad", "bad"]  # completed cells are not recomputed
    emit_report(again, comparisons_for(again), out)
    assert (out / "results.csv").read_bytes() == first


def test_compare_rules():
    same = [result(c, r, v) for c in "abc" for r, v in enumerate([0.5, 0.6, 0.7])]
    rep = compare(same)
    assert rep.report.kind == "anova" and rep.report.statistic == 0 and rep.report.p_value == 1
    assert [s["condition"] for s in rep.summary] == ["a", "b", "c"]
    two = [result(c, r, v) for c in "ab" for r, v in enumerate([0.5, 0.6])]
    assert compare(two).report.kind == "t-test"
    gap = [result("lo", r, v) for r, v in enumerate([0.10, 0.11, 0.12])] + \
          [result("hi", r, v) for r, v in enumerate([0.90, 0.91, 0.92])]
    assert compare(gap).report.p_value < 0.01
    with pytest.raises(TooFewRuns):
        compare([result("a", 0, 0.5), result("b", 0, 0.4), result("b", 1, 0.4)])
    with pytest.raises(TooFewRuns):
        compare(two, "validation")


def test_empty_report(tmp_path):
    emit_report([], {}, tmp_path)
    assert (tmp_path / "results.csv").read_text() == "condition,run,test_accuracy,validation_accuracy\n"
    assert not (tmp_path / "comparison.json").exists()


def test_perfect_run_heatmap(tmp_path):
    emit_report([result("p", 0, 1.0)], {"test": None}, tmp_path)
    hm = load_pgm(tmp_path / "confusion" / "p__run0_test.pgm").alpha8
    cells = hm[::8, ::8]
    assert np.array_equal(cells, 255 * np.eye(15, dtype=np.uint8))
    assert confusion_heatmap(np.zeros((15, 15))).max() == 0
    rows = list(csv.reader(open(tmp_path / "confusion" / "p__run0_test.csv")))
    assert len(rows) == 15 and rows[0][0] == "1"


def test_report_round_trip_and_integrity(tmp_path):
    vals = {"a": [0.81, 0.84, 0.8], "b": [0.7, 0.755, 0.71], "c": [0.9, 0.88, 0.93]}
    results = [result(c, r, v, v - 0.1) for c, vs in vals.items() for r, v in enumerate(vs)]
    cmps = comparisons_for(results)
    emit_report(results, cmps, tmp_path)
    groups = read_groups_csv(tmp_path / "results.csv", "test_accuracy")
    assert compare_groups(groups).p_value == cmps["test"].report.p_value
    doc = json.loads((tmp_path / "comparison.json").read_text())
    assert doc["test"]["report"]["p_value"] == cmps["test"].report.p_value
    assert doc["validation"]["report"]["kind"] == "anova"
    summary = (tmp_path / "summary.md").read_text()
    for cond, vs in vals.items():
        row = next(l for l in summary.splitlines() if l.startswith(f"| {cond} |"))
        test_mean = float(re.findall(r"([\d.]+) ±", row)[0])
        assert test_mean == round(100 * np.mean(vs), 2)


def _masked_manifest(tmp_path, n_frames=4, size=6, mask_value=None):
    g = np.random.default_rng(0)
    frames = []
    for i in range(n_frames):
        img = tmp_path / f"f{i}.ppm"
        save_ppm(Image(g.integers(0, 256, (size, size, 3)).astype(np.uint8)), img)
        m = tmp_path / f"f{i}.pgm"
        alpha = g.choice([0, 255], (size, size)) if mask_value is None else np.full((size, size), mask_value)
        save_pgm(alpha.astype(np.uint8), m)
        frames.append(FrameRecord(img, i % 15, m))
    return Manifest((ClipRecord("c", "i", 30, tuple(frames)),))


def test_prepare_backgrounds(tmp_path):
    pool = tmp_path / "pool"
    pool.mkdir()
    save_ppm(Image.filled(3, 3, (255, 255, 255)), pool / "white.ppm")
    m = _masked_manifest(tmp_path)
    out = prepare_backgrounds(m, pool, seed=4, out_dir=tmp_path / "bg")
    assert load_manifest(tmp_path / "bg" / "manifest.json") == out
    for fr_in, fr_out in zip(m.clips[0].frames, out.clips[0].frames):
        a, b = load_ppm(fr_in.image_path).pixels, load_ppm(fr_out.image_path).pixels
        person = load_pgm(fr_in.mask_path).alpha8 == 255
        assert np.array_equal(a[person], b[person])
        assert np.all(b[~person] == 255)
    first = [load_ppm(f.image_path) for f in out.clips[0].frames]
    again = prepare_backgrounds(m, pool, seed=4, out_dir=tmp_path / "bg2")
    assert first == [load_ppm(f.image_path) for f in again.clips[0].frames]
    rows = list(csv.reader(open(tmp_path / "bg" / "backgrounds.csv")))
    assert rows[0] == ["frame", "background"] and {r[1] for r in rows[1:]} == {"white.ppm"}
    bare = Manifest((ClipRecord("x", "i", 30, (FrameRecord(m.clips[0].frames[0].image_path, 0),)),))
    with pytest.raises(harness.MissingMask):
        prepare_backgrounds(bare, pool, 0, tmp_path / "bg3")
