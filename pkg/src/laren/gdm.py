"""Graph disentangled module: entangled code z -> N disentangled codes.

The latent code is lifted into two node sets U, V (J nodes of dimension C).
Every ordered node pair (i, j) receives a relation vector over D = N*H
attributes; a ConvKB-style extractor scores each (U_i, r_d(i,j), V_j) triplet
and the pair-averaged score of attribute d becomes latent dimension d.

All functions take batched inputs (leading axes are carried through) and work
on plain arrays or traced :class:`~laren.numerics.Node` values alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimMismatch
from .numerics import Rng

MODES = ("HMRR", "VRR", "AFFINE")

# element budget of one D-chunk of the ConvKB pre-activation block
_CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class GdmConfig:
    H: int = 512
    N: int = 18
    J: int = 64
    C: int = 8
    K: int = 4

    def __post_init__(self):
        for key in ("H", "N", "J", "C", "K"):
            if getattr(self, key) <= 0:
                raise DimMismatch(f"GdmConfig.{key} must be positive")
        if self.J * self.C < 2:
            raise DimMismatch("GdmConfig needs J*C >= 2")

    @property
    def D(self) -> int:
        return self.N * self.H


def init_params(config: GdmConfig, seed: int, mode: str = "HMRR") -> dict[str, np.ndarray]:
    """Projection matrices ~ Normal(0, 1/fan_in), biases zero."""
    if mode not in MODES:
        raise ValueError(f"unknown GDM mode {mode!r}")
    H, J, C, K, D = config.H, config.J, config.C, config.K, config.D

    def normal(name, shape, fan_in):
        return Rng.for_name(seed, "gdm." + name).normal_array(shape, 1.0 / math.sqrt(fan_in))

    if mode == "AFFINE":
        return {"affine_W": normal("affine_W", (D, H), H), "affine_b": np.zeros(D)}
    params = {
        "Wu": normal("Wu", (J * C, H), H),
        "Wv": normal("Wv", (J * C, H), H),
        "conv_w": normal("conv_w", (K, 3), 3),
        "conv_b": np.zeros(K),
        "read_w": normal("read_w", (C * K,), C * K),
        "read_b": np.zeros(1),
    }
    if mode == "HMRR":
        params["Wattr"] = normal("Wattr", (D, 2 * C), 2 * C)
    return params


def build_nodes(z, params, config: GdmConfig):
    """U = reshape(Wu z, J x C), V likewise; returns arrays of shape (..., J, C)."""
    if nx.value(z).shape[-1] != config.H:
        raise DimMismatch(f"latent code has length {nx.value(z).shape[-1]}, expected {config.H}")
    lead = nx.value(z).shape[:-1]
    U = nx.matmul(z, nx.transpose(params["Wu"]))
    V = nx.matmul(z, nx.transpose(params["Wv"]))
    return (nx.reshape(U, lead + (config.J, config.C)),
            nx.reshape(V, lead + (config.J, config.C)))


def hmrr_relation(u, v, wattr):
    """Attribute-level relation distribution r in R^D for node pairs.

    ``pre = ReLU(Wattr [u; v])``; exact zeros are excluded from the softmax over
    the L2-normalized ``pre``.  If ``pre`` has norm <= 1e-12 the result is the
    uniform vector.  ``u`` and ``v`` broadcast against each other, so
    ``u[..., :, None, :]`` with ``v[..., None, :, :]`` gives all pairs.

    Returns ``(r, degenerate)``.
    """
    wv = nx.value(wattr)
    C = nx.value(u).shape[-1]
    if nx.value(v).shape[-1] != C or wv.ndim != 2 or wv.shape[1] != 2 * C:
        raise DimMismatch(f"hmrr_relation: |u|={C}, |v|={nx.value(v).shape[-1]}, Wattr {wv.shape}")
    # Wattr [u; v] == Wattr[:, :C] u + Wattr[:, C:] v
    pre = nx.relu(nx.add(nx.matmul(u, nx.transpose(nx.getitem(wattr, (slice(None), slice(0, C))))),
                         nx.matmul(v, nx.transpose(nx.getitem(wattr, (slice(None), slice(C, 2 * C)))))))
    unit, degenerate = nx.l2_normalize(pre, axis=-1, eps=1e-12)
    mask = (nx.value(pre) == 0.0) | degenerate[..., None]
    return nx.softmax(unit, axis=-1, mask=mask), degenerate


def vrr_relation(U, V, config: GdmConfig):
    """Whole-node relation s(i, j) = softmax_j(U_i . V_j / sqrt(C)), copied to all D attributes."""
    scores = nx.matmul(U, nx.transpose(V, _swap_last(nx.value(V).ndim)))
    s = nx.softmax(nx.mul(scores, 1.0 / math.sqrt(config.C)), axis=-1)
    shape = nx.value(s).shape
    expanded = nx.reshape(s, shape + (1,))
    return nx.broadcast_to(expanded, shape + (config.D,))


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def relations(U, V, params, config: GdmConfig, mode: str = "HMRR"):
    """Relation block of shape (..., J, J, D) for every ordered node pair."""
    if mode == "VRR":
        return vrr_relation(U, V, config)
    lead = nx.value(U).shape[:-2]
    Ui = nx.reshape(U, lead + (config.J, 1, config.C))
    Vj = nx.reshape(V, lead + (1, config.J, config.C))
    r, _ = hmrr_relation(Ui, Vj, params["Wattr"])
    return r


def convkb_pair_mean(U, V, R, conv_w, conv_b, read_w):
    """Pair-averaged ConvKB scores, shape (..., D).

    For each pair (i, j) and attribute d the triplet matrix has rows
    ``(U_i[c], R[i, j, d], V_j[c])``; each row is passed through K width-3
    filters and a ReLU, the C x K map is read out by ``read_w`` (row-major over
    (c, k)) and the J*J pair scores are averaged.  The D axis is processed in
    chunks and recomputed in the backward pass.
    """
    Uv, Vv, Rv = nx.value(U), nx.value(V), nx.value(R)
    om, ob, rw = nx.value(conv_w), nx.value(conv_b), nx.value(read_w)
    J, C = Uv.shape[-2:]
    K = om.shape[0]
    D = Rv.shape[-1]
    if Vv.shape[-2:] != (J, C) or Rv.shape[-3:-1] != (J, J) or om.shape != (K, 3) \
            or ob.shape != (K,) or rw.shape != (C * K,):
        raise DimMismatch("convkb_pair_mean: inconsistent operand shapes")
    lead = Rv.shape[:-3]
    Ub = np.broadcast_to(Uv, lead + (J, C)).reshape((-1, J, C))
    Vb = np.broadcast_to(Vv, lead + (J, C)).reshape((-1, J, C))
    Rb = Rv.reshape((-1, J, J, D))
    B = Rb.shape[0]
    W = rw.reshape(C, K)
    # entity part of every filter response: B x J x J x C x K
    base = (Ub[:, :, None, :, None] * om[:, 0] + Vb[:, None, :, :, None] * om[:, 2] + ob)
    step = max(1, _CHUNK_ELEMENTS // max(1, B * J * J * C * K))
    inv_pairs = 1.0 / (J * J)
    graph = nx.graph_of(U, V, R, conv_w, conv_b, read_w)

    def chunk_pre(d0, d1):
        return base[:, :, :, None] + Rb[:, :, :, d0:d1, None, None] * om[:, 1]

    out = np.empty((B, D), dtype=np.result_type(Uv, Rv, om, ob, rw))
    kinks = []
    for d0 in range(0, D, step):
        d1 = min(D, d0 + step)
        pre = chunk_pre(d0, d1)
        if graph is not None and graph.track_kinks:
            kinks.append(pre.reshape(-1))
        act = np.maximum(pre, 0.0)
        out[:, d0:d1] = np.tensordot(act, W, axes=([4, 5], [0, 1])).sum(axis=(1, 2)) * inv_pairs
    if kinks:
        graph._kink(np.concatenate(kinks))

    def grad(g):
        G = g.reshape(B, D) * inv_pairs
        gR = np.empty_like(Rb)
        g_base = np.zeros_like(base)
        gW = np.zeros_like(W)
        g_om1 = np.zeros(K)
        for d0 in range(0, D, step):
            d1 = min(D, d0 + step)
            pre = chunk_pre(d0, d1)
            on = pre > 0
            Gc = G[:, None, None, d0:d1, None, None]
            gW += (np.where(on, pre, 0.0) * Gc).sum(axis=(0, 1, 2, 3))
            gact = Gc * W * on  # B J J d C K
            gR[:, :, :, d0:d1] = np.tensordot(gact, om[:, 1], axes=([5], [0])).sum(axis=4)
            g_om1 += np.tensordot(gact, Rb[:, :, :, d0:d1], axes=([0, 1, 2, 3], [0, 1, 2, 3])) \
                .sum(axis=0)
            g_base += gact.sum(axis=3)
        gU = np.tensordot(g_base, om[:, 0], axes=([4], [0])).sum(axis=2)  # B J C
        gV = np.tensordot(g_base, om[:, 2], axes=([4], [0])).sum(axis=1)
        g_om = np.stack([
            np.tensordot(g_base, Ub, axes=([0, 1, 3], [0, 1, 2])).sum(axis=0),
            g_om1,
            np.tensordot(g_base, Vb, axes=([0, 2, 3], [0, 1, 2])).sum(axis=0),
        ], axis=1)
        g_ob = g_base.sum(axis=(0, 1, 2, 3))
        return (nx.unbroadcast(gU.reshape(lead + (J, C)), Uv.shape),
                nx.unbroadcast(gV.reshape(lead + (J, C)), Vv.shape),
                gR.reshape(Rv.shape), g_om, g_ob, gW.reshape(C * K))

    return nx.record(graph, "convkb", out.reshape(lead + (D,)),
                     (U, V, R, conv_w, conv_b, read_w), grad)


def extract_attributes(U, V, R, params):
    """f_d = ReLU(mean over pairs of the ConvKB score of attribute d + read_b)."""
    scores = convkb_pair_mean(U, V, R, params["conv_w"], params["conv_b"], params["read_w"])
    return nx.relu(nx.add(scores, params["read_b"]))


def split_codes(f, N: int, H: int):
    """Contiguous split of the last axis into N codes of length H: (..., D) -> (..., N, H)."""
    fv = nx.value(f)
    if fv.shape[-1] != N * H:
        raise DimMismatch(f"cannot split {fv.shape[-1]} dims into {N} codes of {H}")
    return nx.reshape(f, fv.shape[:-1] + (N, H))


def relation_scale(config: GdmConfig, mode: str) -> float:
    """Size of the softmax axis a relation was normalized over.

    Relations are fed to the extractor rescaled to unit mean; a raw simplex
    entry is O(1/D) and would be swamped by the O(1) node columns of the triplet.
    """
    return float(config.D if mode == "HMRR" else config.J)


def gdm_features(z, params, config: GdmConfig, mode: str = "HMRR"):
    """Latent vector f in G (..., D) before splitting into per-layer codes."""
    if mode == "AFFINE":
        if nx.value(z).shape[-1] != config.H:
            raise DimMismatch(f"latent code has length {nx.value(z).shape[-1]}, expected {config.H}")
        return nx.add(nx.matmul(z, nx.transpose(params["affine_W"])), params["affine_b"])
    if mode not in MODES:
        raise ValueError(f"unknown GDM mode {mode!r}")
    U, V = build_nodes(z, params, config)
    R = relations(U, V, params, config, mode)
    return extract_attributes(U, V, nx.mul(R, relation_scale(config, mode)), params)


def gdm_forward(z, params, config: GdmConfig, mode: str = "HMRR"):
    """z (..., H) -> disentangled codes (..., N, H)."""
    return split_codes(gdm_features(z, params, config, mode), config.N, config.H)
