"""Graph-based code generation: disentangled codes -> image-specific codes.

Layer n builds a relation matrix T^n from the query/key images of g_n and, in
recursive mode (ReRR), from the previous layer's relation matrix carried through
a per-layer weight Wt^(n-1).  The image-specific code is
``c_n = ReLU(T^n [c_(n-1); g_n])`` (``ReLU(T^1 g_1)`` on the first layer).

Orientation: the key image (length F) indexes rows and the query image
(length H) indexes columns, so T^1 is F x H and T^n (n >= 2) is F x (F + H);
the carried block ``T^(n-1) Wt^(n-1)^T`` is F x F with Wt^(n-1) of shape
F x H for n = 2 and F x (F + H) afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimMismatch, WrongLayerShape
from .numerics import Rng

MODES = ("ReRR", "VRR")


@dataclass(frozen=True)
class CgmConfig:
    H: int = 512
    N: int = 18
    F: int = 64

    def __post_init__(self):
        for key in ("H", "N", "F"):
            if getattr(self, key) <= 0:
                raise DimMismatch(f"CgmConfig.{key} must be positive")

    def width(self, n: int) -> int:
        """Column count of T^n (1-based layer index)."""
        return self.H if n == 1 else self.F + self.H


def init_params(config: CgmConfig, seed: int) -> dict[str, np.ndarray]:
    H, F = config.H, config.F

    def normal(name, shape):
        return Rng.for_name(seed, "cgm." + name).normal_array(shape, 1.0 / math.sqrt(shape[1]))

    params = {"WQ": normal("WQ", (H, H)), "WK": normal("WK", (F, H))}
    for n in range(1, config.N):
        params[f"Wt{n}"] = normal(f"Wt{n}", (F, config.width(n)))
    return params


def rownorm(m, H: int):
    """Row-wise softmax of ``m / sqrt(H)``."""
    return nx.softmax(nx.mul(m, 1.0 / math.sqrt(H)), axis=-1)


def layer_attention(g, params):
    """A = (WK g)(WQ g)^T, shape (..., F, H)."""
    wq, wk = nx.value(params["WQ"]), nx.value(params["WK"])
    if nx.value(g).shape[-1] != wq.shape[1] or wk.shape[1] != wq.shape[1]:
        raise DimMismatch(f"layer_attention: |g|={nx.value(g).shape[-1]}, WQ {wq.shape}, WK {wk.shape}")
    q = nx.matmul(g, nx.transpose(params["WQ"]))
    k = nx.matmul(g, nx.transpose(params["WK"]))
    lead = nx.value(q).shape[:-1]
    return nx.mul(nx.reshape(k, lead + (wk.shape[0], 1)), nx.reshape(q, lead + (1, wq.shape[0])))


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def recursive_relation(t_prev, g, params, n: int):
    """Relation matrix T^n of layer ``n`` (1-based)."""
    H = nx.value(params["WQ"]).shape[0]
    F = nx.value(params["WK"]).shape[0]
    A = layer_attention(g, params)
    if n == 1:
        if t_prev is not None:
            raise WrongLayerShape("layer 1 takes no previous relation matrix")
        return rownorm(A, H)
    if t_prev is None:
        raise WrongLayerShape(f"layer {n} needs the relation matrix of layer {n - 1}")
    expected = H if n == 2 else F + H
    if nx.value(t_prev).shape[-2:] != (F, expected):
        raise WrongLayerShape(f"T^{n - 1} has shape {nx.value(t_prev).shape[-2:]}, expected {(F, expected)}")
    wt = params[f"Wt{n - 1}"]
    carried = nx.matmul(t_prev, nx.transpose(wt))
    return rownorm(nx.concat([carried, A], axis=-1), H)


def generate_code(t, c_prev, g):
    """c_n = ReLU(T^n g_n) for the first layer, ReLU(T^n [c_(n-1); g_n]) afterwards."""
    x = g if c_prev is None else nx.concat([c_prev, g], axis=-1)
    xv, tv = nx.value(x), nx.value(t)
    if tv.shape[-1] != xv.shape[-1]:
        raise DimMismatch(f"relation matrix {tv.shape} does not match input of length {xv.shape[-1]}")
    lead = xv.shape[:-1]
    out = nx.matmul(t, nx.reshape(x, lead + (xv.shape[-1], 1)))
    return nx.relu(nx.reshape(out, lead + (tv.shape[-2],)))


def cgm_forward(codes, params, mode: str = "ReRR", return_relations: bool = False):
    """Image-specific codes (..., N, F) from disentangled codes (..., N, H).

    ``VRR`` drops the carried block so every layer uses T^n = rownorm(A^n) and
    c_n = ReLU(T^n g_n) independently of the other layers.
    """
    if mode not in MODES:
        raise ValueError(f"unknown CGM mode {mode!r}")
    cv = nx.value(codes)
    N = cv.shape[-2]
    lead = cv.shape[:-2]
    outs, rels = [], []
    t, c = None, None
    for n in range(1, N + 1):
        g = nx.getitem(codes, (Ellipsis, n - 1, slice(None)))
        if mode == "VRR" or n == 1:
            t = recursive_relation(None, g, params, 1)
            c = generate_code(t, None, g)
        else:
            t = recursive_relation(t, g, params, n)
            c = generate_code(t, c, g)
        outs.append(nx.reshape(c, lead + (1, nx.value(c).shape[-1])))
        rels.append(t)
    out = nx.concat(outs, axis=-2)
    return (out, rels) if return_relations else out
