"""Synthetic sign datasets with known structure, for tests and demos.

``solid_color_dataset`` is separable by construction: every frame of class
``c`` is filled with ``PALETTE[c]``.

``hand_dataset`` hides the class inside two annotated hand boxes drawn on a
noise background next to decoy patch pairs of other class colours, so the
whole frame alone does not reveal which patches matter.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .dataset import N_CLASSES, ClipRecord, FrameRecord, Manifest, save_manifest
from .imagecore import Box, Image, save_pgm, save_ppm

PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
    (0, 128, 128), (220, 190, 255), (170, 110, 40), (128, 0, 0), (255, 255, 255),
)


def solid_color_dataset(out_dir, per_class: int = 4, size: int = 16,
                        fps: int = 30) -> Path:
    """One clip per class of ``per_class`` solid frames; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    clips = []
    for c in range(N_CLASSES):
        frames = []
        for i in range(per_class):
            path = out_dir / "frames" / f"c{c:02d}_{i:03d}.ppm"
            save_ppm(Image.filled(size, size, PALETTE[c]), path)
            frames.append(FrameRecord(path.resolve(), c))
        clips.append(ClipRecord(f"solid-{c:02d}", "synthetic", fps, tuple(frames)))
    m = Manifest(tuple(clips), source_note="solid colour classes")
    save_manifest(m, out_dir / "manifest.json")
    return out_dir / "manifest.json"


def _place(rng, size: int, patch: int, taken: list[Box]) -> Box:
    for _ in range(1000):
        x0 = int(rng.integers(0, size - patch + 1))
        y0 = int(rng.integers(0, size - patch + 1))
        b = Box(x0, y0, x0 + patch, y0 + patch)
        if all(b.x1 + 1 <= t.x0 or t.x1 + 1 <= b.x0 or b.y1 + 1 <= t.y0 or t.y1 + 1 <= b.y0
               for t in taken):
            return b
    raise ConfigError(f"cannot place {patch}px patches without overlap in a {size}px frame")


def hand_frame(rng, label: int, size: int = 32, patch: int = 6, decoy_pairs: int = 2,
               noise: int = 12) -> tuple[np.ndarray, np.ndarray, list[Box]]:
    """(pixels, mask, hand boxes) for one synthetic frame of class ``label``."""
    pixels = rng.integers(0, 256, size=(size, size, 3)).astype(np.int64)
    mask = np.zeros((size, size), dtype=np.uint8)
    taken: list[Box] = []
    colours = [label]
    others = [c for c in range(N_CLASSES) if c != label]
    colours += list(rng.choice(others, size=decoy_pairs, replace=False))
    hands = []
    for k, colour in enumerate(colours):
        for _ in range(2):
            b = _place(rng, size, patch, taken)
            taken.append(b)
            jitter = rng.integers(-noise, noise + 1, size=(patch, patch, 3))
            pixels[b.y0:b.y1, b.x0:b.x1] = np.asarray(PALETTE[colour]) + jitter
            mask[b.y0:b.y1, b.x0:b.x1] = 255
            if k == 0:
                hands.append(b)
    return np.clip(pixels, 0, 255).astype(np.uint8), mask, hands


def hand_dataset(out_dir, clips_per_class: int = 2, frames_per_clip: int = 6,
                 size: int = 32, patch: int = 6, decoy_pairs: int = 2, fps: int = 60,
                 validation_clips_per_class: int = 0, seed: int = 0) -> Path:
    """Write a hand-box dataset with masks; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    clips = []
    for c in range(N_CLASSES):
        for k in range(clips_per_class + validation_clips_per_class):
            validation = k >= clips_per_class
            cid = f"{'val' if validation else 'sign'}-{c:02d}-{k}"
            frames = []
            for i in range(frames_per_clip):
                pixels, mask, hands = hand_frame(rng, c, size, patch, decoy_pairs)
                ip = out_dir / "frames" / f"{cid}_{i:03d}.ppm"
                mp = out_dir / "frames" / f"{cid}_{i:03d}_mask.pgm"
                save_ppm(Image(pixels), ip)
                save_pgm(mask, mp)
                frames.append(FrameRecord(ip.resolve(), c, mp.resolve(), tuple(hands),
                                          "validation" if validation else "unassigned"))
            clips.append(ClipRecord(cid, f"interp-{k % 2}", fps, tuple(frames)))
    m = Manifest(tuple(clips), source_note="synthetic hand-box classes")
    save_manifest(m, out_dir / "manifest.json")
    return out_dir / "manifest.json"


def write_background_pool(out_dir, n: int = 5, size: int = 32, seed: int = 0) -> Path:
    """``n`` smooth random gradient scenes written as PPMs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    for i in range(n):
        c0, c1 = rng.integers(0, 256, size=(2, 3))
        t = (xs + ys)[..., None] / 2
        save_ppm(Image((c0 * (1 - t) + c1 * t).round().astype(np.uint8)), out_dir / f"scene{i}.ppm")
    return out_dir
