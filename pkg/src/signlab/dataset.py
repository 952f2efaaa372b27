"""Dataset manifests, the sign taxonomy, frame-rate subsampling and splits.

A manifest is a JSON document listing clips and their frames.  Paths in the
JSON are relative to the manifest's directory; in memory they are held as
absolute :class:`~pathlib.Path` objects so manifests can be moved between
directories and rewritten.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import ConfigError, IoFailure
from .imagecore import Box, PNMError, read_pnm_size
from .rng import SplitMix64

CLASS_NAMES: tuple[str, ...] = (
    "I", "my", "you", "we", "you-plural", "your",
    "woman", "man", "car", "motorcycle", "bus", "supermarket", "hospital", "bank",
    "formation",
)
N_CLASSES = len(CLASS_NAMES)
FORMATION = CLASS_NAMES.index("formation")

SPLIT_TAGS = ("train", "test", "validation", "unassigned")
SPLIT_MODES = ("frame-level-stratified", "clip-level")


class InvalidRate(ConfigError):
    pass


class EmptyClass(ConfigError):
    pass


class ManifestError(ConfigError):
    pass


def label_id(label) -> int:
    """Accept a class id or class name and return the id."""
    if isinstance(label, bool):
        raise ManifestError(f"bad label {label!r}")
    if isinstance(label, int):
        if 0 <= label < N_CLASSES:
            return label
        raise ManifestError(f"label id {label} out of range")
    try:
        return CLASS_NAMES.index(str(label))
    except ValueError:
        raise ManifestError(f"unknown label {label!r}") from None


@dataclass(frozen=True)
class FrameRecord:
    image_path: Path
    label: int
    mask_path: Optional[Path] = None
    hand_boxes: tuple[Box, ...] = ()
    split_tag: str = "unassigned"

    def __post_init__(self):
        if len(self.hand_boxes) > 2:
            raise ManifestError("a frame carries at most two hand boxes")
        if self.split_tag not in SPLIT_TAGS:
            raise ManifestError(f"unknown split tag {self.split_tag!r}")


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    interpreter: str
    capture_fps: float
    frames: tuple[FrameRecord, ...]

    def __post_init__(self):
        if not self.capture_fps > 0:
            raise ManifestError(f"clip {self.clip_id}: capture_fps must be positive")
        if not self.frames:
            raise ManifestError(f"clip {self.clip_id}: no frames")


@dataclass(frozen=True)
class Manifest:
    clips: tuple[ClipRecord, ...]
    class_names: tuple[str, ...] = CLASS_NAMES
    source_note: str = ""

    def frames(self) -> Iterator[tuple[ClipRecord, int, FrameRecord]]:
        for clip in self.clips:
            for i, fr in enumerate(clip.frames):
                yield clip, i, fr

    @property
    def n_frames(self) -> int:
        return sum(len(c.frames) for c in self.clips)

    def frames_tagged(self, tag: str) -> list[FrameRecord]:
        return [fr for _, _, fr in self.frames() if fr.split_tag == tag]

    def split_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(SPLIT_TAGS, 0)
        for _, _, fr in self.frames():
            counts[fr.split_tag] += 1
        return counts


# JSON ----------------------------------------------------------------------


def _resolve(base: Path, p: str) -> Path:
    return (base / p).resolve() if not os.path.isabs(p) else Path(p)


def _relative(base: Path, p: Path) -> str:
    return Path(os.path.relpath(p, base)).as_posix()


def manifest_from_dict(doc: dict, base_dir: Path) -> Manifest:
    try:
        class_names = tuple(doc.get("class_names", CLASS_NAMES))
        if class_names != CLASS_NAMES:
            raise ManifestError("class_names must list the 15 sign labels in canonical order")
        clips = []
        for c in doc["clips"]:
            frames = []
            for f in c["frames"]:
                boxes = tuple(Box(*map(int, b)) for b in f.get("hand_boxes", []) or [])
                frames.append(FrameRecord(
                    image_path=_resolve(base_dir, f["image"]),
                    label=label_id(f["label"]),
                    mask_path=_resolve(base_dir, f["mask"]) if f.get("mask") else None,
                    hand_boxes=boxes,
                    split_tag=f.get("split", "unassigned") or "unassigned",
                ))
            clips.append(ClipRecord(str(c["clip_id"]), str(c.get("interpreter", "")),
                                    float(c["capture_fps"]), tuple(frames)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ManifestError(f"malformed manifest: {exc!r}") from exc
    return Manifest(tuple(clips), class_names, str(doc.get("source_note", "")))


def _fps_json(fps: float):
    return int(fps) if float(fps).is_integer() else fps


def manifest_to_dict(m: Manifest, base_dir: Path) -> dict:
    clips = []
    for c in m.clips:
        frames = []
        for f in c.frames:
            d = {"image": _relative(base_dir, f.image_path), "label": m.class_names[f.label]}
            if f.mask_path is not None:
                d["mask"] = _relative(base_dir, f.mask_path)
            if f.hand_boxes:
                d["hand_boxes"] = [b.as_list() for b in f.hand_boxes]
            if f.split_tag != "unassigned":
                d["split"] = f.split_tag
            frames.append(d)
        clips.append({"clip_id": c.clip_id, "interpreter": c.interpreter,
                      "capture_fps": _fps_json(c.capture_fps), "frames": frames})
    return {"class_names": list(m.class_names), "source_note": m.source_note, "clips": clips}


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"no such manifest: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    return manifest_from_dict(doc, path.resolve().parent)


def save_manifest(m: Manifest, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest_to_dict(m, path.resolve().parent), indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# Subsampling -----------------------------------------------------------------


def subsample_indices(n_frames: int, src_fps: float, dst_fps: float) -> list[int]:
    """Indices ``floor(k * src/dst)`` for k = 0, 1, ... that fall below ``n_frames``.

    >>> subsample_indices(10, 60, 20)
    [0, 3, 6, 9]
    """
    if not (dst_fps > 0 and src_fps > 0) or dst_fps > src_fps:
        raise InvalidRate(f"cannot subsample {src_fps} fps to {dst_fps} fps")
    if n_frames < 0:
        raise InvalidRate("n_frames must be non-negative")
    if dst_fps == src_fps:
        return list(range(n_frames))
    from fractions import Fraction

    # exact rational stride so 60/20 gives 3, not 2.9999...
    stride = Fraction(src_fps).limit_denominator(10**6) / Fraction(dst_fps).limit_denominator(10**6)
    out: list[int] = []
    k = 0
    while True:
        idx = math.floor(k * stride)
        if idx >= n_frames:
            break
        if not out or idx > out[-1]:
            out.append(idx)
        k += 1
    return out


def subsample_manifest(m: Manifest, dst_fps: float) -> Manifest:
    clips = []
    for c in m.clips:
        if c.capture_fps < dst_fps:
            raise InvalidRate(f"clip {c.clip_id} captured at {c.capture_fps} fps < {dst_fps}")
        keep = subsample_indices(len(c.frames), c.capture_fps, dst_fps)
        clips.append(replace(c, capture_fps=float(dst_fps),
                             frames=tuple(c.frames[i] for i in keep)))
    return replace(m, clips=tuple(clips))


# Splitting -------------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _clip_majority_label(clip: ClipRecord) -> int:
    counts = [0] * N_CLASSES
    for fr in clip.frames:
        if fr.split_tag != "validation":
            counts[fr.label] += 1
    return max(range(N_CLASSES), key=lambda c: (counts[c], -c))


def split_frames(m: Manifest, train_fraction: float = 0.8, seed: int = 0,
                 mode: str = "frame-level-stratified") -> Manifest:
    """Tag every non-validation frame ``train`` or ``test``.

    Frame mode shuffles each class's frames with a seeded SplitMix64 stream
    and sends ``round(n_c * fraction)`` of them to train.  Clip mode keeps
    clips whole: clips are grouped by majority label, shuffled, and each is
    sent to train while that moves the class's train share towards the
    target.
    """
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    if mode not in SPLIT_MODES:
        raise ConfigError(f"unknown split mode {mode!r}")
    rng = SplitMix64(seed)
    tags: dict[tuple[int, int], str] = {}

    if mode == "frame-level-stratified":
        per_class: list[list[tuple[int, int]]] = [[] for _ in range(N_CLASSES)]
        for ci, clip in enumerate(m.clips):
            for fi, fr in enumerate(clip.frames):
                if fr.split_tag != "validation":
                    per_class[fr.label].append((ci, fi))
        for cls, keys in enumerate(per_class):
            if not keys:
                raise EmptyClass(f"class {m.class_names[cls]!r} has no frames to split")
            rng.shuffle(keys)
            n_train = _round_half_up(len(keys) * train_fraction)
            for i, key in enumerate(keys):
                tags[key] = "train" if i < n_train else "test"
    else:
        by_class: list[list[int]] = [[] for _ in range(N_CLASSES)]
        for ci, clip in enumerate(m.clips):
            if any(fr.split_tag != "validation" for fr in clip.frames):
                by_class[_clip_majority_label(clip)].append(ci)
        for cls_clips in by_class:
            rng.shuffle(cls_clips)
            sizes = {ci: sum(fr.split_tag != "validation" for fr in m.clips[ci].frames)
                     for ci in cls_clips}
            target = train_fraction * sum(sizes.values())
            n_train = 0
            for ci in cls_clips:
                # prefer train on ties so tiny classes still get training data
                to_train = abs(n_train + sizes[ci] - target) <= abs(n_train - target)
                if to_train:
                    n_train += sizes[ci]
                for fi, fr in enumerate(m.clips[ci].frames):
                    if fr.split_tag != "validation":
                        tags[(ci, fi)] = "train" if to_train else "test"

    clips = []
    for ci, clip in enumerate(m.clips):
        frames = tuple(fr if fr.split_tag == "validation" else replace(fr, split_tag=tags[(ci, fi)])
                       for fi, fr in enumerate(clip.frames))
        clips.append(replace(clip, frames=frames))
    return replace(m, clips=tuple(clips))


# Validation ------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    clip_id: str
    frame_index: Optional[int]
    detail: str

    def __str__(self):
        where = self.clip_id if self.frame_index is None else f"{self.clip_id}[{self.frame_index}]"
        return f"{self.kind}: {where}: {self.detail}"


def validate_manifest(m: Manifest) -> list[Violation]:
    """Collect every problem found in ``m``; an empty list means valid."""
    out: list[Violation] = []
    seen: set[str] = set()
    for clip in m.clips:
        if clip.clip_id in seen:
            out.append(Violation("DuplicateClipId", clip.clip_id, None, "clip id used more than once"))
        seen.add(clip.clip_id)
        for i, fr in enumerate(clip.frames):
            size = None
            try:
                size = read_pnm_size(fr.image_path)
            except (PNMError, OSError, ValueError, IndexError) as exc:
                kind = "MissingFile" if not fr.image_path.exists() else "BadImage"
                out.append(Violation(kind, clip.clip_id, i, f"{fr.image_path}: {exc}"))
            if fr.mask_path is not None:
                try:
                    msize = read_pnm_size(fr.mask_path)
                    if size is not None and msize != size:
                        out.append(Violation(
                            "DimensionMismatch", clip.clip_id, i,
                            f"mask {msize[0]}x{msize[1]} vs frame {size[0]}x{size[1]}"))
                except (PNMError, OSError, ValueError, IndexError) as exc:
                    kind = "MissingFile" if not fr.mask_path.exists() else "BadImage"
                    out.append(Violation(kind, clip.clip_id, i, f"{fr.mask_path}: {exc}"))
            for b in fr.hand_boxes:
                ok = b.x0 < b.x1 and b.y0 < b.y1 and b.x0 >= 0 and b.y0 >= 0
                if ok and size is not None:
                    ok = b.is_valid_for(*size)
                if not ok:
                    out.append(Violation("MalformedBox", clip.clip_id, i, f"box {b.as_list()}"))
    return out


def count_by_class(frames: Iterable[FrameRecord]) -> list[int]:
    counts = [0] * N_CLASSES
    for fr in frames:
        counts[fr.label] += 1
    return counts
