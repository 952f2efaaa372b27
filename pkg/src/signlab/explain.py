"""Perturbation-based explanations with a locally weighted linear surrogate.

The image is cut into a regular grid of patches.  Random on/off patterns
switch patches between the original pixels and a flat baseline, the
classifier scores each perturbed image, and a weighted ridge regression
from patterns to scores gives one importance weight per patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, SignLabError
from .imagecore import Image, quantize, round_half_away
from .rng import SplitMix64


class GridTooFine(ConfigError):
    pass


class MaskLengthMismatch(ConfigError):
    pass


class SingularSystem(SignLabError, ArithmeticError):
    pass


class TooFewSamples(ConfigError):
    pass


@dataclass(frozen=True)
class PatchGrid:
    """Row/column edges of a ``rows x cols`` tiling; the last row and column
    absorb any remainder pixels."""

    rows: int
    cols: int
    width: int
    height: int

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def row_edges(self) -> list[int]:
        step = self.height // self.rows
        return [i * step for i in range(self.rows)] + [self.height]

    def col_edges(self) -> list[int]:
        step = self.width // self.cols
        return [i * step for i in range(self.cols)] + [self.width]

    def patch_bounds(self, index: int) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) of patch ``index`` in row-major order."""
        r, c = divmod(index, self.cols)
        ye, xe = self.row_edges(), self.col_edges()
        return xe[c], ye[r], xe[c + 1], ye[r + 1]

    def label_map(self) -> np.ndarray:
        """(H, W) array of patch indices."""
        rows = np.searchsorted(self.row_edges()[1:-1], np.arange(self.height), side="right")
        cols = np.searchsorted(self.col_edges()[1:-1], np.arange(self.width), side="right")
        return rows[:, None] * self.cols + cols[None, :]


def grid_segments(img: Image, rows: int, cols: int) -> PatchGrid:
    if rows < 1 or cols < 1 or rows > img.height or cols > img.width:
        raise GridTooFine(f"{rows}x{cols} grid does not fit a {img.width}x{img.height} image")
    return PatchGrid(rows, cols, img.width, img.height)


def baseline_color(img: Image, baseline: str = "gray") -> np.ndarray:
    if baseline == "gray":
        return np.array([128, 128, 128], dtype=np.uint8)
    if baseline == "mean":
        return quantize(img.pixels.reshape(-1, 3).mean(axis=0))
    raise ConfigError(f"unknown baseline {baseline!r}")


def perturb(img: Image, grid: PatchGrid, on_mask: Sequence, baseline: str = "gray") -> Image:
    on = np.asarray(on_mask, dtype=bool).ravel()
    if on.size != grid.n_patches:
        raise MaskLengthMismatch(f"mask has {on.size} entries for {grid.n_patches} patches")
    if on.all():
        return img
    keep = on[grid.label_map()]
    out = np.where(keep[..., None], img.pixels, baseline_color(img, baseline))
    return Image(out)


def _gauss_solve(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``a x = rhs`` by Gaussian elimination with partial pivoting."""
    a = np.array(a, dtype=np.float64)
    x = np.array(rhs, dtype=np.float64)
    n = a.shape[0]
    scale = np.abs(a).max() if a.size else 0.0
    tol = max(scale, 1e-300) * n * np.finfo(np.float64).eps
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= tol:
            raise SingularSystem("normal equations are singular; use a positive ridge strength")
        if p != k:
            a[[k, p]] = a[[p, k]]
            x[[k, p]] = x[[p, k]]
        factors = a[k + 1:, k] / a[k, k]
        a[k + 1:, k:] -= factors[:, None] * a[k, k:]
        x[k + 1:] -= factors * x[k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x


def solve_ridge_weighted(X, y, w, lam: float) -> np.ndarray:
    """Coefficients solving ``(X^T W X + lam I) beta = X^T W y``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or y.shape != (X.shape[0],) or w.shape != y.shape:
        raise ConfigError(f"bad shapes X{X.shape} y{y.shape} w{w.shape}")
    if lam < 0 or np.any(w < 0):
        raise ConfigError("ridge strength and sample weights must be non-negative")
    xtw = X.T * w
    a = xtw @ X + lam * np.eye(X.shape[1])
    return _gauss_solve(a, xtw @ y)


@dataclass
class Explanation:
    class_id: int
    patch_weights: np.ndarray
    top_k: list[int]
    n_samples: int
    kernel_width: float
    ridge_lambda: float
    rows: int = 0
    cols: int = 0
    intercept: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {"class_id": self.class_id, "rows": self.rows, "cols": self.cols,
                "patch_weights": [float(v) for v in self.patch_weights],
                "top_k": list(self.top_k), "intercept": self.intercept,
                "n_samples": self.n_samples, "kernel_width": self.kernel_width,
                "ridge_lambda": self.ridge_lambda, "seed": self.seed}


def sample_masks(d: int, n_samples: int, seed: int) -> np.ndarray:
    """``n_samples`` on/off patterns; row 0 is all-on, other bits are fair coins."""
    rng = SplitMix64(seed)
    masks = np.ones((n_samples, d), dtype=bool)
    for i in range(1, n_samples):
        for j in range(d):
            masks[i, j] = rng.random() < 0.5
    return masks


def explain(predict: Callable[[Image], Sequence[float]], img: Image, grid: PatchGrid,
            class_id: int, n_samples: int = 512, kernel_width: float = 0.25,
            lam: float = 1e-3, seed: int = 0, baseline: str = "gray",
            top_k: Optional[int] = None) -> Explanation:
    """Fit per-patch weights explaining ``predict(img)[class_id]``.

    Samples are weighted by ``exp(-D^2 / kernel_width^2)`` with ``D`` the
    fraction of patches switched off.  The regression is centred with the
    weighted means, so the intercept is not penalised.
    """
    d = grid.n_patches
    if n_samples < d:
        raise TooFewSamples(f"need at least {d} samples for {d} patches, got {n_samples}")
    masks = sample_masks(d, n_samples, seed)
    target = np.empty(n_samples)
    for i, m in enumerate(masks):
        target[i] = float(np.asarray(predict(perturb(img, grid, m, baseline)))[class_id])
    dist = 1.0 - masks.mean(axis=1)
    weights = np.exp(-(dist ** 2) / kernel_width ** 2)
    X = masks.astype(np.float64)
    wsum = weights.sum()
    x_mean = weights @ X / wsum
    y_mean = weights @ target / wsum
    beta = solve_ridge_weighted(X - x_mean, target - y_mean, weights, lam)
    order = sorted(range(d), key=lambda j: (-beta[j], j))
    return Explanation(class_id, beta, order[:top_k] if top_k else order, n_samples,
                       kernel_width, lam, grid.rows, grid.cols,
                       float(y_mean - x_mean @ beta), seed)


def heat_overlay(img: Image, grid: PatchGrid, expl: Explanation, k: int = 5,
                 strength: float = 0.6) -> Image:
    """Tint the top-``k`` positively weighted patches red, proportional to weight."""
    out = img.pixels.astype(np.float64)
    top = [j for j in expl.top_k[:k] if expl.patch_weights[j] > 0]
    if not top:
        return img
    wmax = max(expl.patch_weights[j] for j in top)
    red = np.array([255.0, 0.0, 0.0])
    for j in top:
        x0, y0, x1, y1 = grid.patch_bounds(j)
        t = strength * expl.patch_weights[j] / wmax
        out[y0:y1, x0:x1] = (1 - t) * out[y0:y1, x0:x1] + t * red
    return Image(quantize(out))
