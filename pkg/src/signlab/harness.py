"""Experiment matrices: conditions x seeded repeats, comparisons and reports.

Every (condition, run) cell derives its own seed from the base seed and a
stable hash of the cell coordinates, trains and evaluates independently and
persists its result as ``runs/<condition>__run<k>.json``.  Re-running an
experiment skips cells that already completed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import re
import traceback
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .augment import AugmentationPolicy, choose_background_index, composite
from .dataset import (SPLIT_MODES, Manifest, load_manifest, save_manifest, split_frames,
                      subsample_manifest, validate_manifest)
from .errors import ConfigError, IoFailure, SignLabError
from .imagecore import Image, load_pgm, load_ppm, resize_bilinear, save_pgm, save_ppm
from .nn.data import FrameSet
from .nn.model import build_model
from .nn.train import TrainConfig, evaluate, train, write_history_csv
from .rng import SplitMix64
from .stats import RunGroup, TestReport, compare_groups, mean_and_sd

log = logging.getLogger(__name__)

RESULT_FIELDS = ("condition", "run", "test_accuracy", "validation_accuracy")


class TooFewRuns(ConfigError):
    pass


class MissingMask(ConfigError):
    pass


# Configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    name: str
    fps: float
    policy: Optional[AugmentationPolicy] = None
    background: Union[str, Path] = "original"  # or a composited manifest path


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "multi-stream"
    resolutions: tuple[int, int] = (64, 32)
    channels: tuple[int, ...] = (8, 16, 32)
    hidden: int = 64


@dataclass(frozen=True)
class ExperimentConfig:
    manifest_path: Path
    conditions: tuple[Condition, ...]
    repeats: int = 3
    seed: int = 0
    train: TrainConfig = TrainConfig()
    split_fraction: float = 0.8
    split_mode: str = "frame-level-stratified"
    model: ModelConfig = ModelConfig()

    def __post_init__(self):
        names = [c.name for c in self.conditions]
        if not names:
            raise ConfigError("an experiment needs at least one condition")
        if len(set(names)) != len(names):
            raise ConfigError("condition names must be unique")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.split_mode not in SPLIT_MODES:
            raise ConfigError(f"unknown split mode {self.split_mode!r}")


def _policy_from_json(value) -> Optional[AugmentationPolicy]:
    if value is None or value == "none":
        return None
    if value == "default":
        return AugmentationPolicy()
    if isinstance(value, dict):
        return AugmentationPolicy.from_dict(value)
    raise ConfigError(f"bad policy entry {value!r}")


def config_from_dict(doc: dict, base_dir: Path) -> ExperimentConfig:
    try:
        conditions = []
        for c in doc["conditions"]:
            bg = c.get("background", "original")
            if bg != "original":
                bg = (base_dir / bg).resolve()
            conditions.append(Condition(str(c["name"]), float(c["fps"]),
                                        _policy_from_json(c.get("policy")), bg))
        split = doc.get("split", {})
        model = doc.get("model", {})
        mc = ModelConfig(model.get("kind", "multi-stream"),
                         tuple(model.get("resolutions", (64, 32))),
                         tuple(model.get("channels", (8, 16, 32))),
                         int(model.get("hidden", 64)))
        return ExperimentConfig(
            manifest_path=(base_dir / doc["manifest_path"]).resolve(),
            conditions=tuple(conditions),
            repeats=int(doc.get("repeats", 3)),
            seed=int(doc.get("seed", 0)),
            train=TrainConfig.from_dict(doc.get("train", {})),
            split_fraction=float(split.get("fraction", 0.8)),
            split_mode=split.get("mode", "frame-level-stratified"),
            model=mc,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed experiment config: {exc!r}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"no such config: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(doc, path.resolve().parent)


# Seeds and results ---------------------------------------------------------------


def stable_hash(condition: str, run: int) -> int:
    digest = hashlib.blake2b(f"{condition}\x00{run}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def cell_seed(base: int, condition: str, run: int) -> int:
    return (int(base) ^ stable_hash(condition, run)) & 0xFFFFFFFFFFFFFFFF


@dataclass
class RunResult:
    condition: str
    run_index: int
    seed: int
    status: str = "ok"
    test_accuracy: Optional[float] = None
    validation_accuracy: Optional[float] = None
    history_path: Optional[str] = None
    confusion: Optional[list] = None
    validation_confusion: Optional[list] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(**d)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def run_file(out_dir: Path, condition: str, run: int) -> Path:
    return out_dir / "runs" / f"{_slug(condition)}__run{run}.json"


def _write_json(path: Path, doc) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        tmp.replace(path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# Running ---------------------------------------------------------------------


def run_cell(config: ExperimentConfig, cond: Condition, run: int, out_dir: Path,
             manifests: Optional[dict] = None, images: Optional[dict] = None) -> RunResult:
    """Subsample, split, train and evaluate one (condition, run) cell."""
    seed = cell_seed(config.seed, cond.name, run)
    manifests = manifests if manifests is not None else {}
    images = images if images is not None else {}
    src = config.manifest_path if cond.background == "original" else Path(cond.background)
    if src not in manifests:
        manifests[src] = load_manifest(src)
    m = subsample_manifest(manifests[src], cond.fps)
    m = split_frames(m, config.split_fraction, seed, config.split_mode)
    train_set = FrameSet.from_manifest(m, "train", images)
    test_set = FrameSet.from_manifest(m, "test", images)
    val_set = FrameSet.from_manifest(m, "validation", images)
    mc = config.model
    model = build_model(mc.kind, mc.resolutions, seed, mc.channels, mc.hidden)
    history = train(model, train_set, replace(config.train, seed=seed), cond.policy, test_set)
    hist_rel = Path("runs") / f"{_slug(cond.name)}__run{run}_history.csv"
    (out_dir / "runs").mkdir(parents=True, exist_ok=True)
    write_history_csv(history, out_dir / hist_rel)
    test_eval = evaluate(model, test_set)
    val_eval = evaluate(model, val_set) if len(val_set) else None
    return RunResult(
        condition=cond.name, run_index=run, seed=seed,
        test_accuracy=test_eval.accuracy,
        validation_accuracy=val_eval.accuracy if val_eval else None,
        history_path=hist_rel.as_posix(),
        confusion=test_eval.confusion.tolist(),
        validation_confusion=val_eval.confusion.tolist() if val_eval else None,
    )


def run_experiment(config: ExperimentConfig, out_dir) -> list[RunResult]:
    """Run (or resume) the full matrix; failed cells are recorded, not raised."""
    out_dir = Path(out_dir)
    base = load_manifest(config.manifest_path)
    problems = validate_manifest(base)
    if problems:
        raise ConfigError("manifest failed validation:\n" + "\n".join(map(str, problems[:20])))
    manifests = {config.manifest_path: base}
    images: dict = {}
    results = []
    # report rebuilds keep the config's condition order
    _write_json(out_dir / "runs" / "conditions.json", [c.name for c in config.conditions])
    for cond in config.conditions:
        for run in range(config.repeats):
            path = run_file(out_dir, cond.name, run)
            if path.exists():
                prev = RunResult.from_dict(json.loads(path.read_text()))
                if prev.ok:
                    results.append(prev)
                    continue
            log.info("running %s run %d", cond.name, run)
            try:
                res = run_cell(config, cond, run, out_dir, manifests, images)
            except (SignLabError, ArithmeticError, ValueError) as exc:
                log.warning("%s run %d failed: %s", cond.name, run, exc)
                res = RunResult(cond.name, run, cell_seed(config.seed, cond.name, run),
                                status="failed", error="".join(
                                    traceback.format_exception_only(type(exc), exc)).strip())
            _write_json(path, res.to_dict())
            results.append(res)
    return results


def load_results(out_dir) -> list[RunResult]:
    runs = Path(out_dir) / "runs"
    files = sorted(runs.glob("*__run*.json"))
    results = [RunResult.from_dict(json.loads(p.read_text())) for p in files]
    order_file = runs / "conditions.json"
    order = json.loads(order_file.read_text()) if order_file.exists() else []
    rank = {name: i for i, name in enumerate(order)}
    return sorted(results, key=lambda r: (rank.get(r.condition, len(rank)), r.condition, r.run_index))


# Comparison --------------------------------------------------------------------


@dataclass
class ComparisonReport:
    column: str
    summary: list  # [{condition, n, mean, sd}]
    report: Optional[TestReport]

    def to_dict(self) -> dict:
        return {"column": self.column, "summary": self.summary,
                "report": self.report.to_dict() if self.report else None}


def _column_value(r: RunResult, column: str) -> Optional[float]:
    return r.test_accuracy if column == "test" else r.validation_accuracy


def _condition_order(results: Sequence[RunResult]) -> list[str]:
    seen: list[str] = []
    for r in results:
        if r.condition not in seen:
            seen.append(r.condition)
    return seen


def compare(results: Sequence[RunResult], column: str = "test") -> ComparisonReport:
    """Per-condition mean/sd and the ANOVA (>= 3 conditions) or pooled t-test (2)."""
    if column not in ("test", "validation"):
        raise ConfigError(f"column must be 'test' or 'validation', got {column!r}")
    groups = []
    for name in _condition_order(results):
        vals = [(r.run_index, _column_value(r, column)) for r in results
                if r.condition == name and r.ok and _column_value(r, column) is not None]
        if len(vals) < 2:
            raise TooFewRuns(f"condition {name!r} has {len(vals)} completed {column} runs; need 2")
        groups.append(RunGroup(name, tuple(v for _, v in sorted(vals))))
    summary = []
    for g in groups:
        mean, sd = mean_and_sd(g)
        summary.append({"condition": g.name, "n": len(g.accuracies), "mean": mean, "sd": sd})
    report = compare_groups(groups) if len(groups) >= 2 else None
    return ComparisonReport(column, summary, report)


# Reports -----------------------------------------------------------------------


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def confusion_heatmap(confusion, cell: int = 8) -> np.ndarray:
    """Row-normalised confusion as 8-bit gray: 0 -> black, max -> white."""
    conf = np.asarray(confusion, dtype=np.float64)
    rows = conf.sum(axis=1, keepdims=True)
    norm = np.divide(conf, rows, out=np.zeros_like(conf), where=rows > 0)
    peak = norm.max()
    gray = np.zeros_like(norm) if peak == 0 else norm / peak * 255.0
    gray = np.floor(gray + 0.5).astype(np.uint8)
    return np.kron(gray, np.ones((cell, cell), dtype=np.uint8))


def _pct(mean: float, sd: float) -> str:
    return f"{100 * mean:.2f} ± {100 * sd:.2f}"


def emit_report(results: Sequence[RunResult], comparisons: dict, out_dir) -> list[Path]:
    """Write results.csv, comparison.json, confusion CSV/PGM files and summary.md."""
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        done = [r for r in results if r.ok]
        with open(out_dir / "results.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_FIELDS)
            for r in done:
                w.writerow([r.condition, r.run_index, _fmt(r.test_accuracy),
                            _fmt(r.validation_accuracy)])
        written.append(out_dir / "results.csv")
        if not results:
            return written
        doc = {col: cmp.to_dict() if cmp is not None else None for col, cmp in comparisons.items()}
        _write_json(out_dir / "comparison.json", doc)
        written.append(out_dir / "comparison.json")
        cdir = out_dir / "confusion"
        cdir.mkdir(exist_ok=True)
        for r in done:
            for tag, conf in (("test", r.confusion), ("validation", r.validation_confusion)):
                if conf is None:
                    continue
                stem = cdir / f"{_slug(r.condition)}__run{r.run_index}_{tag}"
                with open(stem.with_suffix(".csv"), "w", newline="") as fh:
                    csv.writer(fh, lineterminator="\n").writerows(conf)
                save_pgm(confusion_heatmap(conf), stem.with_suffix(".pgm"))
                written += [stem.with_suffix(".csv"), stem.with_suffix(".pgm")]
        (out_dir / "summary.md").write_text(_summary_md(results, comparisons))
        written.append(out_dir / "summary.md")
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out_dir}: {exc}") from exc
    return written


def _summary_md(results: Sequence[RunResult], comparisons: dict) -> str:
    lines = ["# Experiment summary", "",
             "Mean ± sample sd of accuracy (%) over completed runs.", "",
             "| Condition | Runs | Test set | Validation set |", "|---|---|---|---|"]
    for name in _condition_order(results):
        cells = []
        runs = [r for r in results if r.condition == name and r.ok]
        for col in ("test", "validation"):
            vals = [v for v in (_column_value(r, col) for r in runs) if v is not None]
            if len(vals) >= 2:
                cells.append(_pct(*mean_and_sd(vals)))
            elif vals:
                cells.append(f"{100 * vals[0]:.2f}")
            else:
                cells.append("n/a")
        lines.append(f"| {name} | {len(runs)} | {cells[0]} | {cells[1]} |")
    failed = [r for r in results if not r.ok]
    lines.append("")
    for col in ("test", "validation"):
        cmp = comparisons.get(col)
        if cmp is None or cmp.report is None:
            lines.append(f"- {col}: no statistical comparison")
            continue
        rep = cmp.report
        df = f"{rep.df:.4g}" if isinstance(rep.df, (int, float)) else f"({rep.df[0]:g}, {rep.df[1]:g})"
        name = "ANOVA F" if rep.kind == "anova" else "t"
        flag = " (degenerate)" if rep.degenerate else ""
        lines.append(f"- {col}: {name} = {rep.statistic:.4f}, df = {df}, "
                     f"p = {rep.p_value:.5g}{flag}")
    if failed:
        lines += ["", "Failed runs:"] + [f"- {r.condition} run {r.run_index}: {r.error}"
                                          for r in failed]
    return "\n".join(lines) + "\n"


def comparisons_for(results: Sequence[RunResult]) -> dict:
    """Both columns, each ``None`` when it cannot be compared."""
    out = {}
    for col in ("test", "validation"):
        try:
            out[col] = compare(results, col)
        except (TooFewRuns, ConfigError) as exc:
            log.info("no %s comparison: %s", col, exc)
            out[col] = None
    return out


# Background preparation -----------------------------------------------------


def load_background_pool(pool_dir) -> list[Image]:
    files = sorted(Path(pool_dir).glob("*.ppm"))
    return [load_ppm(p) for p in files]


def prepare_backgrounds(m: Manifest, background_pool_dir, seed: int, out_dir) -> Manifest:
    """Composite every frame onto a seeded random pool scene.

    Writes composited PPMs under ``out_dir/frames``, the new manifest as
    ``out_dir/manifest.json`` and the per-frame scene choices as
    ``out_dir/backgrounds.csv``.
    """
    out_dir = Path(out_dir)
    pool = load_background_pool(background_pool_dir)
    pool_names = [p.name for p in sorted(Path(background_pool_dir).glob("*.ppm"))]
    for clip, i, fr in m.frames():
        if fr.mask_path is None:
            raise MissingMask(f"{clip.clip_id}[{i}] has no mask")
    rng = SplitMix64(seed)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    resized: dict = {}
    clips, choices = [], []
    for clip in m.clips:
        frames = []
        for i, fr in enumerate(clip.frames):
            k = choose_background_index(len(pool), rng)
            img = load_ppm(fr.image_path)
            mask = load_pgm(fr.mask_path)
            key = (k, img.size)
            if key not in resized:
                resized[key] = resize_bilinear(pool[k], img.width, img.height)
            out_path = (out_dir / "frames" / f"{_slug(clip.clip_id)}_{i:05d}.ppm").resolve()
            save_ppm(composite(img, mask, resized[key]), out_path)
            frames.append(replace(fr, image_path=out_path))
            choices.append((out_path.name, pool_names[k]))
        clips.append(replace(clip, frames=tuple(frames)))
    note = (m.source_note + "; " if m.source_note else "") + f"backgrounds from {Path(background_pool_dir).name} seed {seed}"
    out = replace(m, clips=tuple(clips), source_note=note)
    save_manifest(out, out_dir / "manifest.json")
    with open(out_dir / "backgrounds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "background"])
        w.writerows(choices)
    return out
