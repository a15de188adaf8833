"""Procedural attribute-labelled HR/LR image pairs.

Each image is one anti-aliased rotated 2:1 rectangle over a flat grey
background.  Six factors in [0, 1] drive the rasterization affinely:

=========  ==================================================
bg         background grey level, -0.8 + 1.6*bg
x, y       centre at S*(0.25 + 0.5*x), S*(0.25 + 0.5*y)
size       long side S*(0.2 + 0.4*size)
hue        colour 0.8*cos(2*pi*(hue - k/3)) for channel k
orient     rotation pi*orient
=========  ==================================================

Images live in [-1, 1] as float64 C x S x S arrays; 8-bit PPM only appears at
the file boundary.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, LarenError, MissingFile
from .numerics import Rng, load_ltsr, save_ltsr

ATTRIBUTES = ("bg", "x", "y", "size", "hue", "orient")
MANIFEST_HEADER = ("id",) + ATTRIBUTES
SUPERSAMPLE = 4


@dataclass
class SamplePair:
    index: int
    hr: np.ndarray
    lr: np.ndarray
    attrs: np.ndarray
    seed: int


def shape_color(hue: float) -> np.ndarray:
    return 0.8 * np.cos(2.0 * np.pi * (hue - np.arange(3) / 3.0))


def render(attrs, S: int) -> np.ndarray:
    if S < 8:
        raise DimMismatch(f"render needs S >= 8, got {S}")
    bg, x, y, size, hue, orient = (float(a) for a in attrs)
    cx = S * (0.25 + 0.5 * x)
    cy = S * (0.25 + 0.5 * y)
    half_long = 0.5 * S * (0.2 + 0.4 * size)
    half_short = 0.5 * half_long
    theta = math.pi * orient
    offsets = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    coords = (np.arange(S)[:, None] + offsets[None, :]).reshape(-1)
    dy = coords[:, None] - cy
    dx = coords[None, :] - cx
    along = dx * math.cos(theta) + dy * math.sin(theta)
    across = -dx * math.sin(theta) + dy * math.cos(theta)
    inside = (np.abs(along) <= half_long) & (np.abs(across) <= half_short)
    cover = inside.reshape(S, SUPERSAMPLE, S, SUPERSAMPLE).mean(axis=(1, 3))
    background = -0.8 + 1.6 * bg
    color = shape_color(hue)
    return background * (1.0 - cover)[None] + color[:, None, None] * cover[None]


def downsample(hr: np.ndarray, s: int) -> np.ndarray:
    """s x s box average over the last two axes.

    Power-of-two factors are reduced by repeated balanced 2x2 sums, so constant
    blocks come back bit-exact.
    """
    hr = np.asarray(hr, dtype=np.float64)
    h, w = hr.shape[-2:]
    if s <= 0 or h % s or w % s:
        raise DimMismatch(f"image {h}x{w} is not divisible by factor {s}")
    lead = hr.shape[:-2]
    if s & (s - 1):
        return hr.reshape(lead + (h // s, s, w // s, s)).mean(axis=(-3, -1))
    out = hr
    while s > 1:
        h, w = out.shape[-2:]
        q = out.reshape(lead + (h // 2, 2, w // 2, 2))
        out = ((q[..., 0, :, 0] + q[..., 0, :, 1]) + (q[..., 1, :, 0] + q[..., 1, :, 1])) * 0.25
        s //= 2
    return out


def upsample_box(lr: np.ndarray, s: int) -> np.ndarray:
    """Pixel replication; the box-upsampling baseline."""
    return np.asarray(lr).repeat(s, axis=-2).repeat(s, axis=-1)


def quantize(img: np.ndarray) -> np.ndarray:
    """[-1, 1] floats -> uint8 with round-half-away-from-zero and clamping."""
    v = (np.asarray(img, dtype=np.float64) + 1.0) * 0.5 * 255.0
    v = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def encode_ppm(img: np.ndarray) -> bytes:
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimMismatch(f"PPM needs a 3 x H x W image, got {img.shape}")
    q = quantize(img).transpose(1, 2, 0)
    return f"P6\n{q.shape[1]} {q.shape[0]}\n255\n".encode("ascii") + q.tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


def read_ppm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise MissingFile(str(path)) from None
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise LarenError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(fields[1]), int(fields[2])
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return pix.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0 * 2.0 - 1.0


def sample_attributes(seed: int, index: int) -> np.ndarray:
    rng = Rng(seed, index)
    return np.array([rng.uniform() for _ in ATTRIBUTES])


def make_sample(index: int, S: int, s: int, seed: int) -> SamplePair:
    attrs = sample_attributes(seed, index)
    hr = render(attrs, S)
    return SamplePair(index, hr, downsample(hr, s), attrs, seed)


def manifest_csv(samples: list[SamplePair]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for smp in samples:
        writer.writerow([smp.index] + [repr(float(a)) for a in smp.attrs])
    return buf.getvalue()


def make_dataset(n: int, S: int, s: int, seed: int, out_dir=None) -> tuple[list[SamplePair], str]:
    """Generate ``n`` pairs; with ``out_dir`` also write PPM + LTSR copies and manifest.csv."""
    if n < 1:
        raise ValueError("dataset needs at least one sample")
    if S % s:
        raise DimMismatch(f"S={S} not divisible by s={s}")
    samples = [make_sample(i, S, s, seed) for i in range(n)]
    manifest = manifest_csv(samples)
    if out_dir is not None:
        out = Path(out_dir)
        os.makedirs(out, exist_ok=True)
        for smp in samples:
            stem = f"{smp.index:05d}"
            write_ppm(out / f"{stem}_hr.ppm", smp.hr)
            write_ppm(out / f"{stem}_lr.ppm", smp.lr)
            save_ltsr(out / f"{stem}_hr.ltsr", smp.hr)
            save_ltsr(out / f"{stem}_lr.ltsr", smp.lr)
        (out / "manifest.csv").write_text(manifest, encoding="utf-8")
        (out / "dataset.cfg").write_text(f"n = {n}\nS = {S}\ns = {s}\nseed = {seed}\n", encoding="utf-8")
    return samples, manifest


@dataclass
class Dataset:
    hr: np.ndarray      # n x 3 x S x S
    lr: np.ndarray      # n x 3 x S/s x S/s
    attrs: np.ndarray   # n x 6
    S: int
    s: int
    seed: int

    def __len__(self) -> int:
        return self.hr.shape[0]

    @classmethod
    def from_samples(cls, samples: list[SamplePair], S: int, s: int, seed: int) -> "Dataset":
        return cls(np.stack([p.hr for p in samples]), np.stack([p.lr for p in samples]),
                   np.stack([p.attrs for p in samples]), S, s, seed)

    @classmethod
    def generate(cls, n: int, S: int, s: int, seed: int) -> "Dataset":
        samples, _ = make_dataset(n, S, s, seed)
        return cls.from_samples(samples, S, s, seed)


def read_manifest(path) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(str(path)) from None
    rows = list(csv.reader(io.StringIO(text)))
    if tuple(rows[0]) != MANIFEST_HEADER:
        raise LarenError(f"{path}: unexpected manifest header {rows[0]}")
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])


def load_dataset(data_dir) -> Dataset:
    from .config import parse_kv

    root = Path(data_dir)
    cfg_path = root / "dataset.cfg"
    if not cfg_path.exists():
        raise MissingFile(str(cfg_path))
    meta = parse_kv(cfg_path.read_text(encoding="utf-8"))
    n, S, s, seed = (int(meta[k]) for k in ("n", "S", "s", "seed"))
    attrs = read_manifest(root / "manifest.csv")
    hr, lr = [], []
    for i in range(n):
        for name, bucket in (("hr", hr), ("lr", lr)):
            path = root / f"{i:05d}_{name}.ltsr"
            if not path.exists():
                raise MissingFile(str(path))
            bucket.append(load_ltsr(path))
    return Dataset(np.stack(hr), np.stack(lr), attrs, S, s, seed)
