"""Geometric and intensity augmentation plus mask-based background compositing.

Affine maps are stored in the output-to-source direction: for an output
pixel ``(x, y)`` the sampled source location is
``(a*x + b*y + c, d*x + e*y + f)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .imagecore import BLACK, FillMode, Image, Mask, bilinear_map, quantize
from .rng import SplitMix64

TRANSFORM_KINDS = (
    "zoom", "rotation", "shear", "translation", "height_shift", "brightness", "channel_scale",
)
GEOMETRIC_KINDS = ("zoom", "rotation", "shear", "translation", "height_shift")


class DegenerateScale(ConfigError):
    pass


class DegeneratePhi(ConfigError):
    pass


class NonpositiveFactor(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class EmptyPool(ConfigError):
    pass


# Affine maps -----------------------------------------------------------------


@dataclass(frozen=True)
class AffineParams:
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 1.0
    f: float = 0.0

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "AffineParams":
        m = np.asarray(m, dtype=np.float64)
        return cls(*(float(v) for v in m[:2, :3].ravel()))

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous form."""
        return np.array([[self.a, self.b, self.c], [self.d, self.e, self.f], [0.0, 0.0, 1.0]])

    @property
    def det(self) -> float:
        return self.a * self.e - self.b * self.d

    def inverse(self) -> "AffineParams":
        if self.det == 0:
            raise DegenerateScale("affine map is not invertible")
        return AffineParams.from_matrix(np.linalg.inv(self.matrix()))

    def __call__(self, x, y):
        return self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f

    def allclose(self, other: "AffineParams", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol))


def compose_affine(a: AffineParams, b: AffineParams) -> AffineParams:
    """The map ``p -> a(b(p))``.

    Warping with the result is warping by ``a`` and then warping that
    output by ``b`` (one resampling pass instead of two).
    """
    return AffineParams.from_matrix(a.matrix() @ b.matrix())


def _about(center, lin: np.ndarray) -> AffineParams:
    cx, cy = center
    m = np.eye(3)
    m[:2, :2] = lin
    m[0, 2] = cx - lin[0, 0] * cx - lin[0, 1] * cy
    m[1, 2] = cy - lin[1, 0] * cx - lin[1, 1] * cy
    return AffineParams.from_matrix(m)


def make_rotation(theta_deg: float, center=(0.0, 0.0)) -> AffineParams:
    """Rotate image content by ``theta_deg`` about ``center``."""
    if not math.isfinite(theta_deg):
        raise ConfigError("rotation angle must be finite")
    if theta_deg % 90 == 0:
        # exact values on the quarter turns keep group identities exact
        cos_t, sin_t = ((1, 0), (0, 1), (-1, 0), (0, -1))[int(theta_deg // 90) % 4]
    else:
        t = math.radians(theta_deg)
        cos_t, sin_t = math.cos(t), math.sin(t)
    return _about(center, np.array([[cos_t, sin_t], [-sin_t, cos_t]], dtype=np.float64))


def make_shear(phi_deg: float, center=(0.0, 0.0)) -> AffineParams:
    """Horizontal shear: ``xs = x + tan(phi) * (y - cy)``."""
    if not abs(phi_deg) < 90:
        raise DegeneratePhi(f"shear angle {phi_deg} must satisfy |phi| < 90")
    t = 1.0 if phi_deg == 45 else (-1.0 if phi_deg == -45 else math.tan(math.radians(phi_deg)))
    return _about(center, np.array([[1.0, t], [0.0, 1.0]]))


def make_zoom(s: float, center=(0.0, 0.0)) -> AffineParams:
    """Magnify content by ``1 + s`` about ``center``."""
    if not 1 + s > 0:
        raise DegenerateScale(f"zoom factor 1 + {s} must be positive")
    k = 1.0 / (1.0 + s)
    return _about(center, np.array([[k, 0.0], [0.0, k]]))


def make_translation(dx: float, dy: float) -> AffineParams:
    """Move content by ``(dx, dy)`` pixels."""
    return AffineParams(1.0, 0.0, -float(dx), 0.0, 1.0, -float(dy))


def image_center(width: int, height: int) -> tuple[float, float]:
    return (width - 1) / 2.0, (height - 1) / 2.0


def warp_affine(img: Image, p: AffineParams, fill: FillMode = BLACK) -> Image:
    if not all(math.isfinite(v) for v in (p.a, p.b, p.c, p.d, p.e, p.f)):
        raise ConfigError("affine parameters must be finite")
    if p == AffineParams.identity():
        return img
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    sx, sy = p(xs, ys)
    return Image(quantize(bilinear_map(img.pixels, sx, sy, fill)))


# Intensity -------------------------------------------------------------------


def scale_channels(img: Image, f: Sequence[float]) -> Image:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (3,) or np.any(f <= 0):
        raise NonpositiveFactor(f"channel factors must be three positive numbers, got {f}")
    if np.all(f == 1.0):
        return img
    return Image(quantize(img.pixels * f))


def adjust_brightness(img: Image, factor: float) -> Image:
    if not factor > 0:
        raise NonpositiveFactor(f"brightness factor must be positive, got {factor}")
    return scale_channels(img, (factor, factor, factor))


# Policies ----------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentationPolicy:
    """Sampling ranges for random augmentation; defaults are the catalogue ranges used in experiments.

    Zoom and both shifts are fractions of the image size, brightness and
    channel scales are multiplicative factors, rotation and shear are in
    degrees.  ``height_shift_range`` is a magnitude range; the sign is drawn
    separately.
    """

    zoom_range: tuple[float, float] = (-0.2, 0.2)
    rotation_range_deg: tuple[float, float] = (-30.0, 30.0)
    shear_range_deg: tuple[float, float] = (0.0, 10.0)
    translation_enabled: bool = True
    translation_fraction: float = 0.10
    brightness_range: tuple[float, float] = (0.5, 1.2)
    height_shift_range: tuple[float, float] = (0.0, 0.15)
    channel_scale_range: tuple[float, float] = (0.8, 1.2)
    enabled: frozenset = frozenset(TRANSFORM_KINDS)

    def __post_init__(self):
        for name in ("zoom_range", "rotation_range_deg", "shear_range_deg",
                     "brightness_range", "height_shift_range", "channel_scale_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (float(lo), float(hi)))
            if not lo <= hi:
                raise ConfigError(f"{name}: lo must not exceed hi")
        object.__setattr__(self, "enabled", frozenset(self.enabled))
        unknown = self.enabled - set(TRANSFORM_KINDS)
        if unknown:
            raise ConfigError(f"unknown transform kinds: {sorted(unknown)}")
        if not (self.brightness_range[0] > 0 and self.channel_scale_range[0] > 0):
            raise ConfigError("brightness and channel factors must be positive")
        if not (-1 < self.zoom_range[0] and self.zoom_range[1] < 1):
            raise ConfigError("zoom fractions must lie in (-1, 1)")
        if not (0 <= self.translation_fraction < 1):
            raise ConfigError("translation_fraction must lie in [0, 1)")
        if not (0 <= self.height_shift_range[0] and self.height_shift_range[1] < 1):
            raise ConfigError("height shift magnitudes must lie in [0, 1)")
        if not all(abs(v) < 90 for v in self.shear_range_deg):
            raise ConfigError("shear angles must satisfy |phi| < 90")

    @classmethod
    def only(cls, *kinds: str, **overrides) -> "AugmentationPolicy":
        """Policy with just ``kinds`` enabled, e.g. ``only("rotation")``."""
        return cls(enabled=frozenset(kinds), **overrides)

    def is_active(self, kind: str) -> bool:
        if kind == "translation":
            return self.translation_enabled and kind in self.enabled
        return kind in self.enabled

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled"] = [k for k in TRANSFORM_KINDS if k in self.enabled]
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPolicy":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown policy fields: {sorted(extra)}")
        kw = dict(d)
        for k, v in kw.items():
            if isinstance(v, list) and k != "enabled":
                if len(v) != 2:
                    raise ConfigError(f"{k} must be a [lo, hi] pair")
                kw[k] = tuple(v)
        if "enabled" in kw:
            kw["enabled"] = frozenset(kw["enabled"])
        return cls(**kw)


def load_policy(path) -> AugmentationPolicy:
    try:
        return AugmentationPolicy.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise ConfigError(f"no such policy file: {path}") from None
    except (json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"bad policy file {path}: {exc}") from exc


@dataclass(frozen=True)
class ConcreteAugmentation:
    affine: AffineParams = AffineParams()
    brightness: float = 1.0
    channel_scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    applied_kinds: tuple[str, ...] = ()
    params: dict = field(default_factory=dict, compare=False)

    @property
    def is_identity(self) -> bool:
        return (self.affine == AffineParams.identity() and self.brightness == 1.0
                and self.channel_scale == (1.0, 1.0, 1.0))


def sample_policy(policy: AugmentationPolicy, rng: SplitMix64,
                  size: tuple[int, int]) -> ConcreteAugmentation:
    """Draw one concrete augmentation for an image of ``size`` = (width, height).

    Draw order is fixed: zoom, rotation, shear, translation x/y,
    height-shift magnitude and sign, brightness, channel scales r/g/b.
    Every draw is consumed even for disabled transforms so toggling one
    transform never changes the values drawn for the others.
    """
    width, height = size
    center = image_center(width, height)
    zoom = rng.uniform(*policy.zoom_range)
    rotation = rng.uniform(*policy.rotation_range_deg)
    shear = rng.uniform(*policy.shear_range_deg)
    tf = policy.translation_fraction
    tx = rng.uniform(-tf, tf)
    ty = rng.uniform(-tf, tf)
    hs_mag = rng.uniform(*policy.height_shift_range)
    hs_sign = 1.0 if rng.random() < 0.5 else -1.0
    brightness = rng.uniform(*policy.brightness_range)
    channels = tuple(rng.uniform(*policy.channel_scale_range) for _ in range(3))

    params: dict = {}
    kinds: list[str] = []
    geo = AffineParams.identity()
    # content is zoomed, rotated, sheared about the centre, then shifted
    steps = [
        ("zoom", lambda: make_zoom(zoom, center), {"zoom": zoom}),
        ("rotation", lambda: make_rotation(rotation, center), {"rotation": rotation}),
        ("shear", lambda: make_shear(shear, center), {"shear": shear}),
        ("translation", lambda: make_translation(tx * width, ty * height),
         {"translate_x": tx, "translate_y": ty}),
        ("height_shift", lambda: make_translation(0.0, hs_sign * hs_mag * height),
         {"height_shift": hs_sign * hs_mag}),
    ]
    for kind, build, vals in steps:
        if policy.is_active(kind):
            geo = compose_affine(geo, build())
            params.update(vals)
            kinds.append(kind)
    b = 1.0
    if policy.is_active("brightness"):
        b = brightness
        params["brightness"] = b
        kinds.append("brightness")
    cs = (1.0, 1.0, 1.0)
    if policy.is_active("channel_scale"):
        cs = channels
        params["channel_scale"] = cs
        kinds.append("channel_scale")
    return ConcreteAugmentation(geo, b, cs, tuple(kinds), params)


def apply(img: Image, aug: ConcreteAugmentation, fill: FillMode = BLACK) -> Image:
    """Geometry first (single warp), then brightness and channel scales.

    The intensity factors are folded into one multiply so there is a single
    rounding step.
    """
    out = warp_affine(img, aug.affine, fill)
    factors = tuple(aug.brightness * c for c in aug.channel_scale)
    return scale_channels(out, factors)


# Background replacement -------------------------------------------------------


def composite(fore: Image, mask: Mask, back: Image) -> Image:
    """``alpha * fore + (1 - alpha) * back`` with ``alpha = mask / 255``."""
    if fore.size != back.size or (mask.width, mask.height) != fore.size:
        raise DimensionMismatch(
            f"fore {fore.size}, mask {(mask.width, mask.height)}, back {back.size} differ")
    f = fore.pixels.astype(np.float64)
    b = back.pixels.astype(np.float64)
    alpha = mask.alpha[..., None]
    return Image(quantize(b + alpha * (f - b)))


def choose_background_index(n: int, rng: SplitMix64) -> int:
    if n <= 0:
        raise EmptyPool("background pool is empty")
    return rng.below(n)


def choose_background(pool: Sequence[Image], rng: SplitMix64) -> Image:
    return pool[choose_background_index(len(pool), rng)]
