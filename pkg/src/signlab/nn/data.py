"""Turning manifest frames into model input tensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..augment import AugmentationPolicy, ConcreteAugmentation, apply, sample_policy
from ..dataset import FrameRecord, Manifest
from ..errors import ConfigError
from ..imagecore import Box, Image, crop, load_ppm, resize_bilinear
from ..rng import SplitMix64, derive_seed
from .model import ModelSpec

PLACEHOLDER_GRAY = 128


class EmptySplit(ConfigError):
    pass


def _to_chw(img: Image, dtype) -> np.ndarray:
    return (img.pixels.transpose(2, 0, 1).astype(dtype) / dtype(255.0))


def _forward_box(box: Box, aug: ConcreteAugmentation, width: int, height: int) -> Optional[Box]:
    """Where a source box lands after the augmentation's warp, clipped to the frame."""
    inv = aug.affine.inverse()
    xs = np.array([box.x0, box.x1, box.x0, box.x1], dtype=np.float64)
    ys = np.array([box.y0, box.y0, box.y1, box.y1], dtype=np.float64)
    ox, oy = inv(xs, ys)
    x0 = int(np.clip(np.floor(ox.min()), 0, width))
    x1 = int(np.clip(np.ceil(ox.max()), 0, width))
    y0 = int(np.clip(np.floor(oy.min()), 0, height))
    y1 = int(np.clip(np.ceil(oy.max()), 0, height))
    if x1 <= x0 or y1 <= y0:
        return None
    return Box(x0, y0, x1, y1)


def frame_inputs(img: Image, boxes: Sequence[Box], spec: ModelSpec,
                 aug: Optional[ConcreteAugmentation] = None, dtype=np.float32) -> dict:
    """Per-stream CHW arrays in [0, 1] for one frame.

    The augmentation (if any) is applied to the full frame and hand boxes
    are carried through the same warp.  Missing boxes feed a mid-gray
    placeholder to the hand streams.
    """
    dtype = np.dtype(dtype).type
    if aug is not None and not aug.is_identity:
        boxes = [_forward_box(b, aug, img.width, img.height) for b in boxes]
        img = apply(img, aug)
    g = spec.global_resolution
    out = {"global": _to_chw(resize_bilinear(img, g, g), dtype)}
    if spec.kind == "multi-stream":
        h = spec.hand_resolution
        for i, name in enumerate(("hand_a", "hand_b")):
            box = boxes[i] if i < len(boxes) else None
            if box is not None and box.is_valid_for(img.width, img.height):
                out[name] = _to_chw(resize_bilinear(crop(img, box), h, h), dtype)
            else:
                out[name] = np.full((3, h, h), PLACEHOLDER_GRAY / 255.0, dtype=dtype)
    return out


class FrameSet:
    """A list of labelled frames with an in-memory image cache."""

    def __init__(self, frames: Sequence[FrameRecord], images: Optional[dict] = None):
        self.frames = list(frames)
        self.labels = np.array([f.label for f in self.frames], dtype=np.int64)
        self._images = images if images is not None else {}
        self._static: dict = {}

    @classmethod
    def from_manifest(cls, m: Manifest, tag: Optional[str] = None, images=None) -> "FrameSet":
        frames = [f for _, _, f in m.frames() if tag is None or f.split_tag == tag]
        return cls(frames, images)

    def __len__(self):
        return len(self.frames)

    def image(self, i: int) -> Image:
        path = self.frames[i].image_path
        img = self._images.get(path)
        if img is None:
            img = self._images[path] = load_ppm(path)
        return img

    def inputs(self, indices: Sequence[int], spec: ModelSpec, dtype=np.float32,
               policy: Optional[AugmentationPolicy] = None, seed: int = 0,
               epoch: int = 0) -> dict:
        """Stacked batch arrays for ``indices``.

        Un-augmented inputs are cached per (spec, dtype); augmented inputs
        use a per-item stream seeded from (seed, epoch, item index).
        """
        items = []
        for i in indices:
            if policy is None:
                key = (spec, np.dtype(dtype).str, i)
                item = self._static.get(key)
                if item is None:
                    item = self._static[key] = frame_inputs(
                        self.image(i), self.frames[i].hand_boxes, spec, None, dtype)
            else:
                img = self.image(i)
                rng = SplitMix64(derive_seed(seed, epoch, i))
                aug = sample_policy(policy, rng, img.size)
                item = frame_inputs(img, self.frames[i].hand_boxes, spec, aug, dtype)
            items.append(item)
        return {k: np.stack([it[k] for it in items]) for k in items[0]}
