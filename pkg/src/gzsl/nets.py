"""Convolutional encoder/decoder pair built on :mod:`gzsl.autodiff`.

Encoder: two stride-2 convs, residual blocks, a third stride-2 conv, flatten,
two dense layers to the latent. The decoder mirrors it layer for layer and
ends linear; callers that need displayable pixels clip to [0, 1].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SLOPE = 0.2
STRIDE_TOTAL = 8
# small output gain keeps the first reconstructions near zero
OUT_GAIN = 0.1


@dataclass(frozen=True)
class NetSpec:
    kind: Literal["encoder", "decoder"]
    height: int = 32
    width: int = 32
    channels: int = 3
    latent: int = 100
    channel_scale: int = 1
    res_blocks: int = 3
    hidden: int = 256
    base: int = 16

    def widths(self) -> tuple[int, int, int]:
        b = self.base * self.channel_scale
        return b, 2 * b, 4 * b

    def validate(self) -> None:
        if self.kind not in ("encoder", "decoder"):
            raise ValueError(f"unknown network kind {self.kind!r}")
        for name in ("height", "width"):
            v = getattr(self, name)
            if v <= 0 or v % STRIDE_TOTAL:
                raise ValueError(f"{name} {v} is not divisible by the cumulative stride {STRIDE_TOTAL}")
        if min(self.channels, self.latent, self.channel_scale, self.hidden, self.base) < 1:
            raise ValueError("network extents must be positive")
        if self.res_blocks < 0:
            raise ValueError("res_blocks must be >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


def _uniform(rng, shape, fan_in, gain):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


LRELU_GAIN = float(np.sqrt(2.0 / (1.0 + SLOPE**2)))


def residual_block(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """``x + conv(lrelu(conv(x)))`` with 3x3 same-padding convs."""
    h = ad.conv2d(x, params[prefix + ".conv1.weight"], params[prefix + ".conv1.bias"], stride=1, pad=1)
    h = ad.leaky_relu(h, SLOPE)
    h = ad.conv2d(h, params[prefix + ".conv2.weight"], params[prefix + ".conv2.bias"], stride=1, pad=1)
    if h.shape != x.shape:
        raise ad.ShapeError(f"residual block {prefix} changed shape {x.shape} -> {h.shape}")
    return ad.add(x, h)


class Network:
    def __init__(self, spec: NetSpec, params: dict[str, Tensor]):
        self.spec = spec
        self.params = params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Encoder(Network):
    def __call__(self, x: Tensor) -> Tensor:
        s, p = self.spec, self.params
        if tuple(x.shape[1:]) != (s.channels, s.height, s.width):
            raise ad.ShapeError(f"encoder expects [N,{s.channels},{s.height},{s.width}], got {list(x.shape)}")
        h = ad.leaky_relu(ad.conv2d(x, p["encoder.conv1.weight"], p["encoder.conv1.bias"], 2, 1), SLOPE)
        h = ad.leaky_relu(ad.conv2d(h, p["encoder.conv2.weight"], p["encoder.conv2.bias"], 2, 1), SLOPE)
        for i in range(s.res_blocks):
            h = residual_block(h, p, f"encoder.res{i + 1}")
        h = ad.leaky_relu(ad.conv2d(h, p["encoder.conv3.weight"], p["encoder.conv3.bias"], 2, 1), SLOPE)
        h = ad.reshape(h, (h.shape[0], -1))
        h = ad.leaky_relu(ad.dense(h, p["encoder.fc1.weight"], p["encoder.fc1.bias"]), SLOPE)
        return ad.dense(h, p["encoder.fc2.weight"], p["encoder.fc2.bias"])


class Decoder(Network):
    def __call__(self, z: Tensor) -> Tensor:
        s, p = self.spec, self.params
        if z.data.ndim != 2 or z.shape[1] != s.latent:
            raise ad.ShapeError(f"decoder expects [N,{s.latent}], got {list(z.shape)}")
        c1, c2, c3 = s.widths()
        h = ad.leaky_relu(ad.dense(z, p["decoder.fc1.weight"], p["decoder.fc1.bias"]), SLOPE)
        h = ad.leaky_relu(ad.dense(h, p["decoder.fc2.weight"], p["decoder.fc2.bias"]), SLOPE)
        h = ad.reshape(h, (h.shape[0], c3, s.height // 8, s.width // 8))
        h = ad.leaky_relu(ad.conv2d_transpose(h, p["decoder.deconv1.weight"], p["decoder.deconv1.bias"], 2, 1), SLOPE)
        for i in range(s.res_blocks):
            h = residual_block(h, p, f"decoder.res{i + 1}")
        h = ad.leaky_relu(ad.conv2d_transpose(h, p["decoder.deconv2.weight"], p["decoder.deconv2.bias"], 2, 1), SLOPE)
        # linear output: a saturating squash lets L1 drive logits to where its gradient underflows
        return ad.conv2d_transpose(h, p["decoder.deconv3.weight"], p["decoder.deconv3.bias"], 2, 1)


def _layer_table(spec: NetSpec) -> list[tuple[str, tuple[int, ...], int, float]]:
    """(name, weight shape, fan-in, gain) for every weighted layer, in creation order."""
    c1, c2, c3 = spec.widths()
    flat = c3 * (spec.height // 8) * (spec.width // 8)
    g = LRELU_GAIN
    res = []
    width = c2
    if spec.kind == "encoder":
        rows = [("conv1", (c1, spec.channels, 4, 4), spec.channels * 16, g),
                ("conv2", (c2, c1, 4, 4), c1 * 16, g)]
        for i in range(spec.res_blocks):
            res += [(f"res{i + 1}.conv1", (width, width, 3, 3), width * 9, g),
                    (f"res{i + 1}.conv2", (width, width, 3, 3), width * 9, 0.1)]
        rows += res
        rows += [("conv3", (c3, c2, 4, 4), c2 * 16, g),
                 ("fc1", (flat, spec.hidden), flat, g),
                 ("fc2", (spec.hidden, spec.latent), spec.hidden, 1.0)]
    else:
        # transpose-conv fan-in: each output pixel sees C_in * (k / stride)^2 inputs
        rows = [("fc1", (spec.latent, spec.hidden), spec.latent, g),
                ("fc2", (spec.hidden, flat), spec.hidden, g),
                ("deconv1", (c3, c2, 4, 4), c3 * 4, g)]
        for i in range(spec.res_blocks):
            res += [(f"res{i + 1}.conv1", (width, width, 3, 3), width * 9, g),
                    (f"res{i + 1}.conv2", (width, width, 3, 3), width * 9, 0.1)]
        rows += res
        rows += [("deconv2", (c2, c1, 4, 4), c2 * 4, g),
                 ("deconv3", (c1, spec.channels, 4, 4), c1 * 4, OUT_GAIN)]
    return rows


def _bias_extent(name: str, shape: tuple[int, ...]) -> int:
    if name.startswith("fc"):
        return shape[1]
    if name.startswith("deconv"):
        return shape[1]
    return shape[0]


def build_network(spec: NetSpec, seed: int) -> Network:
    """Deterministically initialised encoder or decoder (fan-in scaled uniform)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, fan_in, gain in _layer_table(spec):
        full = f"{spec.kind}.{name}"
        params[full + ".weight"] = Tensor(_uniform(rng, shape, fan_in, gain), requires_grad=True, name=full + ".weight")
        params[full + ".bias"] = Tensor(np.zeros(_bias_extent(name, shape)), requires_grad=True, name=full + ".bias")
    cls = Encoder if spec.kind == "encoder" else Decoder
    return cls(spec, params)


def build_autoencoder(spec: NetSpec, seed: int) -> tuple[Encoder, Decoder]:
    """Encoder and mirrored decoder from one spec (the ``kind`` field is ignored)."""
    fields = spec.as_dict()
    fields.pop("kind")
    enc = build_network(NetSpec(kind="encoder", **fields), seed)
    dec = build_network(NetSpec(kind="decoder", **fields), seed + 1)
    return enc, dec
