"""Frozen toy progressive generator, LR encoder and discriminator.

The generator starts from a fixed 4x4 tensor and runs N layers, two per
resolution, doubling the resolution (nearest neighbour) before every
even-numbered layer after the first pair.  Layer n:

    x <- x * (1 + scale_n(g_n)) + shift_n(g_n) + gain_n * P_n c_n
    x <- leaky_relu(conv3x3(x) + b_n, 0.2)

where ``P_n`` projects the image-specific code c_n to a single-channel map of
the layer's resolution and ``gain_n`` spreads it over channels.  A 1x1 toRGB
convolution without activation produces the image.  All generator weights are
drawn from a seed and never updated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import DimMismatch
from .numerics import Rng

LEAK = 0.2
# toRGB gain: initial output spread about half the [-1, 1] range, like the data
TORGB_GAIN = 0.5
# style affine gain: keeps the channel scales modest for unit-scale codes so the
# modulation does not compound across layers
STYLE_GAIN = 0.2
# encoder readout gain: LR activations are small on flat images, this brings z to ~unit scale
ENC_GAIN = 4.0


def resolution_for(N: int) -> int:
    return 4 * 2 ** (math.ceil(N / 2) - 1)


def layer_resolution(n: int) -> int:
    """Spatial size of 0-based generator layer ``n``."""
    return 4 * 2 ** (n // 2)


def default_channels(N: int) -> list[int]:
    return [32 if layer_resolution(n) <= 8 else 16 for n in range(N)]


@dataclass
class GeneratorSpec:
    N: int
    H: int
    F: int
    seed: int
    channels: list[int]
    weights: dict[str, np.ndarray] = field(repr=False)
    frozen: bool = True

    @property
    def resolution(self) -> int:
        return resolution_for(self.N)

    def in_channels(self, n: int) -> int:
        return self.channels[0] if n == 0 else self.channels[n - 1]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.weights.items()}


def make_generator(N: int, H: int, F: int, seed: int, channels: list[int] | None = None) -> GeneratorSpec:
    channels = list(channels) if channels is not None else default_channels(N)
    if len(channels) != N or any(c <= 0 for c in channels):
        raise DimMismatch(f"need {N} positive channel counts, got {channels}")

    def normal(name, shape, std):
        return Rng.for_name(seed, "gen." + name).normal_array(shape, std)

    w: dict[str, np.ndarray] = {"const": normal("const", (channels[0], 4, 4), 1.0)}
    for n in range(N):
        cin = channels[0] if n == 0 else channels[n - 1]
        res = layer_resolution(n)
        w[f"style{n}"] = normal(f"style{n}", (2 * cin, H), STYLE_GAIN / math.sqrt(H))
        w[f"detail{n}"] = normal(f"detail{n}", (res * res, F), 1.0 / math.sqrt(F))
        w[f"gain{n}"] = normal(f"gain{n}", (cin,), 1.0)
        w[f"conv{n}.W"] = normal(f"conv{n}.W", (channels[n], cin, 3, 3), math.sqrt(2.0 / (9 * cin)))
        w[f"conv{n}.b"] = np.zeros(channels[n])
    w["torgb.W"] = normal("torgb.W", (3, channels[-1], 1, 1), TORGB_GAIN / math.sqrt(channels[-1]))
    w["torgb.b"] = np.zeros(3)
    for arr in w.values():
        arr.setflags(write=False)
    return GeneratorSpec(N, H, F, seed, channels, w)


def synthesize(g, c, gen: GeneratorSpec):
    """Image (B, 3, S, S) from codes g (B, N, H) and detail codes c (B, N, F)."""
    gv, cv = nx.value(g), nx.value(c)
    if gv.ndim == 2:
        g, c = nx.reshape(g, (1,) + gv.shape), nx.reshape(c, (1,) + cv.shape)
        gv, cv = nx.value(g), nx.value(c)
    if gv.shape[1:] != (gen.N, gen.H) or cv.shape[1:] != (gen.N, gen.F) or gv.shape[0] != cv.shape[0]:
        raise DimMismatch(f"synthesize: g {gv.shape}, c {cv.shape} for N={gen.N}, H={gen.H}, F={gen.F}")
    B = gv.shape[0]
    w = gen.weights
    x = np.broadcast_to(w["const"], (B,) + w["const"].shape)
    for n in range(gen.N):
        if n >= 2 and n % 2 == 0:
            x = nx.upsample2x(x)
        cin = gen.in_channels(n)
        res = layer_resolution(n)
        style = nx.matmul(nx.getitem(g, (slice(None), n)), w[f"style{n}"].T)
        scale = nx.reshape(nx.getitem(style, (slice(None), slice(0, cin))), (B, cin, 1, 1))
        shift = nx.reshape(nx.getitem(style, (slice(None), slice(cin, 2 * cin))), (B, cin, 1, 1))
        detail = nx.matmul(nx.getitem(c, (slice(None), n)), w[f"detail{n}"].T)
        detail = nx.mul(nx.reshape(detail, (B, 1, res, res)), w[f"gain{n}"][None, :, None, None])
        x = nx.add(nx.add(nx.mul(x, nx.add(scale, 1.0)), shift), detail)
        x = nx.leaky_relu(nx.conv2d(x, w[f"conv{n}.W"], w[f"conv{n}.b"], stride=1, pad=1), LEAK)
    return nx.conv2d(x, w["torgb.W"], w["torgb.b"])


# -- encoder -----------------------------------------------------------------

def _halvings(size: int) -> int:
    steps = 0
    while size > 1:
        if size % 2:
            raise DimMismatch(f"spatial size must be a power of two, got {size}")
        size //= 2
        steps += 1
    return steps


def init_encoder(lr_size: int, H: int, seed: int, width: int = 32) -> dict[str, np.ndarray]:
    """Stride-2 3x3 convolutions down to 1x1, then a linear map to R^H."""
    params = {}
    cin = 3
    for i in range(_halvings(lr_size)):
        params[f"enc.conv{i}.W"] = Rng.for_name(seed, f"enc.conv{i}.W").normal_array(
            (width, cin, 3, 3), math.sqrt(2.0 / (9 * cin)))
        params[f"enc.conv{i}.b"] = np.zeros(width)
        cin = width
    params["enc.fc.W"] = Rng.for_name(seed, "enc.fc.W").normal_array((H, cin), ENC_GAIN / math.sqrt(cin))
    params["enc.fc.b"] = np.zeros(H)
    return params


def encode(lr, params):
    """LR image batch (B, 3, r, r) -> latent codes (B, H)."""
    xv = nx.value(lr)
    if xv.ndim == 3:
        lr = nx.reshape(lr, (1,) + xv.shape)
        xv = nx.value(lr)
    n_conv = sum(1 for k in params if k.startswith("enc.conv") and k.endswith(".W"))
    if xv.ndim != 4 or xv.shape[1] != 3 or xv.shape[2] != xv.shape[3] or _halvings(xv.shape[2]) != n_conv:
        raise DimMismatch(f"encoder expects 3 x {2 ** n_conv} x {2 ** n_conv} input, got {xv.shape[1:]}")
    x = lr
    for i in range(n_conv):
        x = nx.leaky_relu(nx.conv2d(x, params[f"enc.conv{i}.W"], params[f"enc.conv{i}.b"],
                                    stride=2, pad=1), LEAK)
    x = nx.reshape(x, (xv.shape[0], -1))
    return nx.add(nx.matmul(x, nx.transpose(params["enc.fc.W"])), params["enc.fc.b"])


# -- discriminator -------------------------------------------------------------

LOGIT_CLAMP = 30.0


def init_discriminator(size: int, seed: int, width: int = 16) -> dict[str, np.ndarray]:
    params = {}
    cin = 3
    for i in range(_halvings(size)):
        params[f"disc.conv{i}.W"] = Rng.for_name(seed, f"disc.conv{i}.W").normal_array(
            (width, cin, 3, 3), math.sqrt(2.0 / (9 * cin)))
        params[f"disc.conv{i}.b"] = np.zeros(width)
        cin = width
    params["disc.fc.W"] = Rng.for_name(seed, "disc.fc.W").normal_array((1, cin), 1.0 / math.sqrt(cin))
    params["disc.fc.b"] = np.zeros(1)
    return params


def discriminate(img, params):
    """Probability in (0, 1) per image, shape (B,); logits are clamped to +-30."""
    xv = nx.value(img)
    if xv.ndim == 3:
        img = nx.reshape(img, (1,) + xv.shape)
        xv = nx.value(img)
    n_conv = sum(1 for k in params if k.startswith("disc.conv") and k.endswith(".W"))
    if xv.ndim != 4 or xv.shape[1] != 3 or xv.shape[2] != xv.shape[3] or _halvings(xv.shape[2]) != n_conv:
        raise DimMismatch(f"discriminator expects 3 x {2 ** n_conv} x {2 ** n_conv} input, got {xv.shape[1:]}")
    x = img
    for i in range(n_conv):
        x = nx.leaky_relu(nx.conv2d(x, params[f"disc.conv{i}.W"], params[f"disc.conv{i}.b"],
                                    stride=2, pad=1), LEAK)
    x = nx.reshape(x, (xv.shape[0], -1))
    logit = nx.add(nx.matmul(x, nx.transpose(params["disc.fc.W"])), params["disc.fc.b"])
    logit = nx.clamp(nx.reshape(logit, (xv.shape[0],)), -LOGIT_CLAMP, LOGIT_CLAMP)
    return nx.sigmoid(logit)
