"""Command-line entry point: ``signlab <subcommand> ...``.

Exit codes: 0 success, 1 validation or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import augment, dataset, explain as explain_mod, harness, stats, synthetic
from .errors import ConfigError, SignLabError
from .imagecore import Box, load_ppm, save_ppm
from .rng import SplitMix64, derive_seed

log = logging.getLogger("signlab")


def _dump(doc, path=None) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _grid(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 8x8, got {text!r}") from None


def _boxes(text: str) -> list[Box]:
    """``x0,y0,x1,y1;x0,y0,x1,y1`` -> boxes."""
    out = []
    for part in filter(None, text.split(";")):
        vals = [int(v) for v in part.split(",")]
        if len(vals) != 4:
            raise argparse.ArgumentTypeError(f"box needs 4 integers, got {part!r}")
        out.append(Box(*vals))
    return out


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v)


def _policy(path) -> augment.AugmentationPolicy:
    return augment.load_policy(path) if path else augment.AugmentationPolicy()


# Subcommands -------------------------------------------------------------------


def cmd_validate(args) -> int:
    m = dataset.load_manifest(args.manifest)
    problems = dataset.validate_manifest(m)
    for v in problems:
        print(v)
    print(f"{m.n_frames} frames in {len(m.clips)} clips; {len(problems)} violations")
    return 1 if problems else 0


def cmd_subsample(args) -> int:
    m = dataset.subsample_manifest(dataset.load_manifest(args.manifest), args.fps)
    dataset.save_manifest(m, args.out)
    print(f"{m.n_frames} frames at {args.fps:g} fps -> {args.out}")
    return 0


def cmd_split(args) -> int:
    m = dataset.split_frames(dataset.load_manifest(args.manifest), args.fraction, args.seed, args.mode)
    dataset.save_manifest(m, args.out)
    print(json.dumps(m.split_counts(), sort_keys=True))
    return 0


def cmd_augment_preview(args) -> int:
    img = load_ppm(args.image)
    policy = _policy(args.policy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for k in range(args.count):
        rng = SplitMix64(derive_seed(args.seed, k))
        aug = augment.sample_policy(policy, rng, img.size)
        path = out / f"preview_{k:03d}.ppm"
        save_ppm(augment.apply(img, aug), path)
        records.append({"file": path.name, "params": aug.params,
                        "applied": list(aug.applied_kinds)})
    _dump(records, out / "preview.json")
    print(f"wrote {args.count} previews to {out}")
    return 0


def cmd_prepare_backgrounds(args) -> int:
    m = dataset.load_manifest(args.manifest)
    harness.prepare_backgrounds(m, args.pool, args.seed, args.out)
    print(f"composited {m.n_frames} frames -> {Path(args.out) / 'manifest.json'}")
    return 0


def _train_config(args):
    from .nn.train import TrainConfig
    doc = json.loads(Path(args.train_config).read_text()) if args.train_config else {}
    doc.setdefault("seed", args.seed)
    return TrainConfig.from_dict(doc)


def cmd_train(args) -> int:
    from .nn import FrameSet, build_model, evaluate, train, write_history_csv
    from .nn.checkpoint import save_checkpoint
    m = dataset.load_manifest(args.manifest)
    if args.split is not None:
        m = dataset.split_frames(m, args.split, args.seed, args.split_mode)
    images: dict = {}
    train_set = FrameSet.from_manifest(m, "train", images)
    test_set = FrameSet.from_manifest(m, "test", images)
    model = build_model(args.kind, _ints(args.resolutions), args.seed, _ints(args.channels),
                        args.hidden)
    policy = augment.load_policy(args.policy) if args.policy else None
    history = train(model, train_set, _train_config(args), policy, test_set)
    save_checkpoint(model, args.checkpoint)
    if args.history:
        write_history_csv(history, args.history)
    last = history[-1]
    print(f"trained {len(history)} epochs: train_acc={last['train_acc']:.4f} "
          f"test_acc={last['test_acc'] if last['test_acc'] is not None else 'n/a'}")
    return 0


def cmd_evaluate(args) -> int:
    from .nn import FrameSet, evaluate
    from .nn.checkpoint import load_checkpoint
    model = load_checkpoint(args.checkpoint)
    m = dataset.load_manifest(args.manifest)
    result = evaluate(model, FrameSet.from_manifest(m, None if args.tag == "all" else args.tag))
    _dump(result.to_dict(), args.out)
    if args.out:
        print(f"accuracy {result.accuracy:.4f} -> {args.out}")
    return 0


def cmd_explain(args) -> int:
    from .nn import frame_inputs, softmax
    from .nn.checkpoint import load_checkpoint
    model = load_checkpoint(args.checkpoint)
    img = load_ppm(args.image)
    boxes = _boxes(args.boxes) if args.boxes else []

    def predict(im):
        batch = {k: v[None] for k, v in frame_inputs(im, boxes, model.spec).items()}
        return softmax(model.forward(batch).astype(np.float64))[0]

    rows, cols = args.grid
    grid = explain_mod.grid_segments(img, rows, cols)
    class_id = int(args.class_id) if args.class_id.isdigit() else args.class_id
    expl = explain_mod.explain(predict, img, grid, dataset.label_id(class_id),
                               args.samples, args.kernel_width, args.ridge, args.seed,
                               args.baseline)
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    _dump(expl.to_dict(), stem.with_suffix(".json"))
    save_ppm(explain_mod.heat_overlay(img, grid, expl, args.top_k), stem.with_suffix(".ppm"))
    print(f"top patches {expl.top_k[:args.top_k]} -> {stem.with_suffix('.json')}")
    return 0


def _report(out_dir: Path) -> list[harness.RunResult]:
    results = harness.load_results(out_dir)
    harness.emit_report(results, harness.comparisons_for(results), out_dir)
    return results


def cmd_experiment(args) -> int:
    config = harness.load_config(args.config)
    out = Path(args.out) if args.out else Path(args.config).resolve().parent / "results"
    results = harness.run_experiment(config, out)
    harness.emit_report(results, harness.comparisons_for(results), out)
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)} runs completed, {len(failed)} failed -> {out}")
    return 2 if failed else 0


def cmd_report(args) -> int:
    results = _report(Path(args.out))
    print(f"report over {len(results)} runs -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    groups = stats.read_groups_csv(args.csv, args.column)
    report = stats.compare_groups(groups, args.variant)
    doc = report.to_dict()
    doc["summary"] = [dict(zip(("condition", "mean", "sd"), (g.name, *stats.mean_and_sd(g))))
                      for g in groups]
    _dump(doc, args.out)
    return 0


def cmd_make_synthetic(args) -> int:
    out = Path(args.out)
    if args.kind == "solid":
        path = synthetic.solid_color_dataset(out, args.per_class, args.size)
    else:
        path = synthetic.hand_dataset(out, args.per_class, args.frames, args.size,
                                      validation_clips_per_class=args.validation_clips,
                                      seed=args.seed)
        synthetic.write_background_pool(out / "backgrounds", 5, args.size, args.seed)
        bundled = resources.files("signlab") / "data" / "synthetic_experiment.json"
        with resources.as_file(bundled) as src:
            shutil.copyfile(src, out / "experiment.json")
    print(f"wrote {path}")
    return 0


# Parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="signlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a manifest for missing or inconsistent data")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("subsample", help="reduce every clip to a lower frame rate")
    s.add_argument("manifest")
    s.add_argument("--fps", type=float, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_subsample)

    s = sub.add_parser("split", help="assign train/test tags")
    s.add_argument("manifest")
    s.add_argument("--fraction", type=float, default=0.8)
    s.add_argument("--mode", choices=dataset.SPLIT_MODES, default="frame-level-stratified")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("augment-preview", help="write seeded augmentations of one image")
    s.add_argument("--image", required=True)
    s.add_argument("--policy", help="policy JSON (default ranges if omitted)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment_preview)

    s = sub.add_parser("prepare-backgrounds", help="composite frames onto pool scenes")
    s.add_argument("manifest")
    s.add_argument("--pool", required=True, help="directory of background PPMs")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare_backgrounds)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    s.add_argument("manifest")
    s.add_argument("--kind", choices=("single-stream", "multi-stream"), default="multi-stream")
    s.add_argument("--resolutions", default="64,32", help="global,hand")
    s.add_argument("--channels", default="8,16,32")
    s.add_argument("--hidden", type=int, default=64)
    s.add_argument("--train-config", help="TrainConfig JSON")
    s.add_argument("--policy", help="augmentation policy JSON")
    s.add_argument("--split", type=float, help="split with this train fraction first")
    s.add_argument("--split-mode", choices=dataset.SPLIT_MODES, default="frame-level-stratified")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--history", help="write per-epoch history CSV here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="accuracy and confusion on tagged frames")
    s.add_argument("manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--tag", default="test", choices=(*dataset.SPLIT_TAGS, "all"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("explain", help="patch-importance explanation of one prediction")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--class", dest="class_id", required=True)
    s.add_argument("--grid", type=_grid, default=(8, 8))
    s.add_argument("--samples", type=int, default=512)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--kernel-width", type=float, default=0.25)
    s.add_argument("--ridge", type=float, default=1e-3)
    s.add_argument("--baseline", choices=("gray", "mean"), default="gray")
    s.add_argument("--boxes", help="hand boxes as x0,y0,x1,y1;x0,y0,x1,y1")
    s.add_argument("--top-k", type=int, default=5)
    s.add_argument("--out", required=True, help="output stem for .json and .ppm")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("experiment", help="run a condition x repeat matrix")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (default: results/ beside the config)")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="rebuild reports from persisted runs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("stats", help="ANOVA or t-test over a condition/run CSV")
    s.add_argument("csv")
    s.add_argument("--column", default="accuracy")
    s.add_argument("--variant", choices=("pooled", "welch"), default="pooled")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("make-synthetic", help="write a synthetic dataset")
    s.add_argument("--kind", choices=("hands", "solid"), default="hands")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=2, help="clips (hands) or frames (solid)")
    s.add_argument("--frames", type=int, default=6, help="frames per clip (hands)")
    s.add_argument("--validation-clips", type=int, default=1)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SignLabError, OSError, ArithmeticError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
