"""Single-stream and multi-stream classifiers built from :mod:`.layers`.

A multi-stream model runs one backbone on the whole frame and one on each
hand crop, concatenates the three pooled feature vectors and classifies
them with a small MLP head.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional

import numpy as np

from ..dataset import N_CLASSES
from ..errors import ConfigError
from .layers import (Conv2D, Dense, GlobalAvgPool, Layer, MaxPool2, Normalize, ReLU,
                     ShapeMismatch)

KINDS = ("single-stream", "multi-stream")
STREAM_NAMES = ("global", "hand_a", "hand_b")


class BadResolution(ConfigError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "multi-stream"
    global_resolution: int = 64
    hand_resolution: int = 32
    channels: tuple[int, ...] = (8, 16, 32)
    kernel: int = 3
    hidden: int = 64
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels:
            raise ConfigError("a stream needs at least one conv block")

    @property
    def stream_names(self) -> tuple[str, ...]:
        return STREAM_NAMES if self.kind == "multi-stream" else STREAM_NAMES[:1]

    def resolution(self, stream: str) -> int:
        return self.global_resolution if stream == "global" else self.hand_resolution

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


class StreamBackbone:
    """Input centring, conv -> relu -> maxpool blocks, global average pooling.

    Inputs are [0, 1] tensors; the fixed first layer shifts them to
    [-0.5, 0.5], which keeps plain SGD stable on all-positive inputs.
    """

    def __init__(self, resolution: int, channels, kernel: int, rng, dtype=np.float32):
        self.layers: list[Layer] = [Normalize(0.5)]
        c_in, side = 3, resolution
        for c_out in channels:
            side = side - kernel + 1
            if side < 2:
                raise BadResolution(
                    f"resolution {resolution} too small for {len(channels)} conv blocks")
            side //= 2
            self.layers += [Conv2D(c_in, c_out, kernel, 1, rng, dtype), ReLU(), MaxPool2()]
            c_in = c_out
        self.layers.append(GlobalAvgPool())
        self.feature_width = c_in

    @property
    def param_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.has_params]

    @property
    def trainable_flags(self) -> list[bool]:
        return [l.trainable for l in self.param_layers]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout, full: bool = False):
        """Backpropagate; unless ``full``, stop once no trainable layer remains below."""
        flags = [l.trainable for l in self.layers]
        lowest = 0 if full else next((i for i, f in enumerate(flags)
                                      if f and self.layers[i].has_params), None)
        if lowest is None:
            return None
        for i in range(len(self.layers) - 1, lowest - 1, -1):
            dout = self.layers[i].backward(dout)
        return dout


class MLPHead:
    def __init__(self, d_in: int, hidden: int, n_out: int, rng, dtype=np.float32):
        self.layers: list[Layer] = [Dense(d_in, hidden, rng, dtype), ReLU(),
                                    Dense(hidden, n_out, rng, dtype)]

    @property
    def param_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.has_params]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class Model:
    """A classifier over one (single-stream) or three (multi-stream) inputs.

    ``forward`` takes a dict mapping stream names to NCHW arrays; extra keys
    are ignored, so a multi-stream batch can feed a single-stream model.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.streams: dict[str, StreamBackbone] = {}
        for i, name in enumerate(spec.stream_names):
            rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, i])
            self.streams[name] = StreamBackbone(spec.resolution(name), spec.channels,
                                                spec.kernel, rng, dtype)
        self.fusion_width = sum(s.feature_width for s in self.streams.values())
        head_rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, len(STREAM_NAMES)])
        self.head = MLPHead(self.fusion_width, spec.hidden, spec.n_classes, head_rng, dtype)
        self._widths = [s.feature_width for s in self.streams.values()]

    @property
    def kind(self) -> str:
        return self.spec.kind

    def named_layers(self) -> Iterator[tuple[str, Layer]]:
        """Parameterised layers in a fixed order: streams, then the head."""
        for sname, stream in self.streams.items():
            for i, layer in enumerate(stream.param_layers):
                yield f"{sname}.{i}", layer
        for i, layer in enumerate(self.head.param_layers):
            yield f"head.{i}", layer

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for lname, layer in self.named_layers():
            for pname, arr in layer.params.items():
                yield f"{lname}.{pname}", arr

    def n_params(self) -> int:
        return sum(a.size for _, a in self.named_parameters())

    def forward(self, inputs: dict) -> np.ndarray:
        feats = []
        for name, stream in self.streams.items():
            x = inputs[name]
            res = self.spec.resolution(name)
            if x.shape[1:] != (3, res, res):
                raise ShapeMismatch(f"stream {name} expects (N, 3, {res}, {res}), got {x.shape}")
            feats.append(stream.forward(x.astype(self.dtype, copy=False)))
        return self.head.forward(np.concatenate(feats, axis=1))

    def backward(self, dlogits: np.ndarray, full: bool = False) -> None:
        dfeat = self.head.backward(dlogits)
        start = 0
        for w, stream in zip(self._widths, self.streams.values()):
            stream.backward(dfeat[:, start:start + w], full=full)
            start += w

    def astype(self, dtype) -> "Model":
        """A deep copy with parameters cast to ``dtype``."""
        m = copy.deepcopy(self)
        m.dtype = np.dtype(dtype)
        for _, layer in m.named_layers():
            layer.astype(dtype)
        return m

    def state_bytes(self) -> bytes:
        return b"".join(a.tobytes() for _, a in self.named_parameters())


def build_model(kind: str = "multi-stream", input_resolutions=(64, 32), seed: int = 0,
                channels=(8, 16, 32), hidden: int = 64, dtype=np.float32) -> Model:
    """Build a fresh model with He-initialised weights drawn from ``seed``.

    ``input_resolutions`` is ``(global, hand)``; a bare int sets both.
    """
    if isinstance(input_resolutions, int):
        input_resolutions = (input_resolutions, input_resolutions)
    g_res, h_res = (int(r) for r in input_resolutions)
    if g_res < 8 or (kind == "multi-stream" and h_res < 8):
        raise BadResolution(f"resolutions must be >= 8, got {input_resolutions}")
    spec = ModelSpec(kind, g_res, h_res, tuple(channels), 3, hidden)
    return Model(spec, seed, dtype)


def set_trainable_fraction(model: Model, fraction: float, mode: str = "layers") -> None:
    """Unfreeze the output-side ``fraction`` of every stream; the head stays trainable.

    ``mode="layers"`` counts parameterised layers: ``ceil(fraction * L)`` of
    them are unfrozen.  ``mode="params"`` unfreezes top layers until they
    hold at least ``fraction`` of the stream's parameters.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError("fraction must lie in [0, 1]")
    if mode not in ("layers", "params"):
        raise ConfigError(f"unknown freeze mode {mode!r}")
    for stream in model.streams.values():
        layers = stream.param_layers
        if mode == "layers":
            n_top = math.ceil(fraction * len(layers) - 1e-9)
        else:
            total = sum(l.n_params() for l in layers)
            n_top, acc = 0, 0
            while acc < fraction * total - 1e-9 and n_top < len(layers):
                acc += layers[len(layers) - 1 - n_top].n_params()
                n_top += 1
        for i, layer in enumerate(layers):
            layer.trainable = i >= len(layers) - n_top
    for layer in model.head.param_layers:
        layer.trainable = True


def trainable_map(model: Model) -> dict[str, bool]:
    return {name: layer.trainable for name, layer in model.named_layers()}
