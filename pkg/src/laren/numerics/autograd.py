"""Trace-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Graph` records every differentiable result in insertion order, which
is also a valid topological order.  Operations accept :class:`Node` objects or
plain arrays; when no input is a node the result is a plain ``ndarray`` and
nothing is recorded, so the same model code serves tracing and inference.

Constants never carry gradients.  A parameter that does not reach the loss gets
an all-zero gradient from :func:`backward`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimMismatch, NonFiniteError, NonScalarLoss
from .rng import Rng
from .tensor import as_tensor

KINK_TOL = 1e-6


class Graph:
    def __init__(self, track_kinks: bool = False, dtype=np.float64):
        self.nodes: list[Node] = []
        # parameters are held in ``dtype``; extended precision is only used by gradcheck
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Node] = {}
        self.track_kinks = track_kinks
        # distance-to-kink arrays of every piecewise op, in trace order
        self.kinks: list[np.ndarray] = []

    def param(self, name: str, value) -> "Node":
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        as_tensor(value)  # shape and finiteness checks
        node = Node(self, np.array(value, dtype=self.dtype), (), None, "param")
        self.params[name] = node
        return node

    def params_from(self, values: dict[str, np.ndarray], prefix: str = "") -> dict[str, "Node"]:
        return {k: self.param(prefix + k, v) for k, v in values.items()}

    def _kink(self, distance: np.ndarray) -> None:
        if self.track_kinks:
            self.kinks.append(np.array(distance, copy=True))


class Node:
    __array_priority__ = 1000.0
    __slots__ = ("graph", "value", "parents", "grad_fn", "tag", "index")

    def __init__(self, graph: Graph, value: np.ndarray, parents: tuple, grad_fn, tag: str):
        self.graph = graph
        self.value = value
        self.parents = parents
        self.grad_fn = grad_fn
        self.tag = tag
        self.index = len(graph.nodes)
        graph.nodes.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Node({self.tag}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def value(x) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    arr = np.asarray(x)
    return arr if arr.dtype == np.longdouble else arr.astype(np.float64, copy=False)


def detach(x) -> np.ndarray:
    return value(x).copy()


def graph_of(*xs) -> Graph | None:
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    return None


def record(graph: Graph | None, tag: str, out: np.ndarray, parents: tuple, grad_fn):
    if graph is None:
        return out
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{tag} produced a non-finite value")
    return Node(graph, out, parents, grad_fn, tag)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, d in enumerate(shape):
        if d == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- pointwise arithmetic ---------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    return record(graph_of(a, b), "add", out, (a, b),
                  lambda g: (unbroadcast(g, av.shape), unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    return record(graph_of(a, b), "sub", out, (a, b),
                  lambda g: (unbroadcast(g, av.shape), unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    return record(graph_of(a, b), "mul", out, (a, b),
                  lambda g: (unbroadcast(g * bv, av.shape), unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return record(graph_of(a, b), "div", out, (a, b),
                  lambda g: (unbroadcast(g / bv, av.shape),
                             unbroadcast(-g * av / (bv * bv), bv.shape)))


def square(x):
    xv = value(x)
    return record(graph_of(x), "square", xv * xv, (x,), lambda g: (2.0 * g * xv,))


def exp(x):
    xv = value(x)
    out = np.exp(xv)
    return record(graph_of(x), "exp", out, (x,), lambda g: (g * out,))


def log(x):
    xv = value(x)
    return record(graph_of(x), "log", np.log(xv), (x,), lambda g: (g / xv,))


def sigmoid(x):
    xv = value(x)
    out = 1.0 / (1.0 + np.exp(-xv))
    return record(graph_of(x), "sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x):
    xv = value(x)
    graph = graph_of(x)
    if graph is not None:
        graph._kink(xv)
    on = xv > 0
    return record(graph, "relu", np.where(on, xv, 0.0), (x,), lambda g: (g * on,))


def leaky_relu(x, slope: float = 0.2):
    xv = value(x)
    graph = graph_of(x)
    if graph is not None:
        graph._kink(xv)
    factor = np.where(xv > 0, 1.0, slope)
    return record(graph, "leaky_relu", xv * factor, (x,), lambda g: (g * factor,))


def clamp(x, lo: float | None = None, hi: float | None = None):
    xv = value(x)
    graph = graph_of(x)
    if graph is not None:
        if lo is not None:
            graph._kink(xv - lo)
        if hi is not None:
            graph._kink(xv - hi)
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    inside = (xv >= lo_) & (xv <= hi_)
    return record(graph, "clamp", np.clip(xv, lo_, hi_), (x,), lambda g: (g * inside,))


# -- linear algebra & shape -------------------------------------------------

def matmul(a, b):
    """Batched matrix product with numpy broadcasting; 1-D operands as in ``@``."""
    av, bv = value(a), value(b)
    if av.ndim == 0 or bv.ndim == 0:
        raise DimMismatch("matmul needs operands of rank >= 1")
    inner_b = bv.shape[0] if bv.ndim == 1 else bv.shape[-2]
    if av.shape[-1] != inner_b:
        raise DimMismatch(f"matmul inner dims differ: {av.shape} @ {bv.shape}")
    out = av @ bv

    def grad(g):
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if av.ndim == 1:
            ga = ga[..., 0, :]
        if bv.ndim == 1:
            gb = gb[..., 0]
        return unbroadcast(ga, av.shape), unbroadcast(gb, bv.shape)

    return record(graph_of(a, b), "matmul", out, (a, b), grad)


def sum_(x, axis=None, keepdims: bool = False):
    xv = value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return record(graph_of(x), "sum", np.asarray(out), (x,), grad)


def mean(x, axis=None, keepdims: bool = False):
    xv = value(x)
    count = xv.size if axis is None else int(np.prod([xv.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis, keepdims), 1.0 / count)


def reshape(x, shape):
    xv = value(x)
    return record(graph_of(x), "reshape", xv.reshape(shape), (x,),
                  lambda g: (g.reshape(xv.shape),))


def transpose(x, axes=None):
    xv = value(x)
    axes = tuple(reversed(range(xv.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(graph_of(x), "transpose", np.transpose(xv, axes), (x,),
                  lambda g: (np.transpose(g, inverse),))


def concat(xs: Sequence, axis: int = 0):
    vals = [value(x) for x in xs]
    ndim = vals[0].ndim
    if not -ndim <= axis < ndim:
        raise DimMismatch(f"concat axis {axis} out of range for rank {ndim}")
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise DimMismatch(str(exc)) from None
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return record(graph_of(*xs), "concat", out, tuple(xs),
                  lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(x, idx):
    xv = value(x)

    def grad(g):
        full = np.zeros_like(xv)
        np.add.at(full, idx, g)
        return (full,)

    return record(graph_of(x), "getitem", np.array(xv[idx]), (x,), grad)


def broadcast_to(x, shape):
    xv = value(x)
    return record(graph_of(x), "broadcast", np.broadcast_to(xv, shape).copy(), (x,),
                  lambda g: (unbroadcast(g, xv.shape),))


# -- normalizations -----------------------------------------------------------

def softmax(x, axis: int = -1, mask=None):
    """Softmax along ``axis``; ``mask`` marks excluded entries (output exactly 0).

    A slice whose entries are all masked returns the uniform distribution and
    passes no gradient.
    """
    xv = value(x)
    n = xv.shape[axis]
    if mask is None:
        valid = np.ones(xv.shape, dtype=bool)
    else:
        valid = ~np.broadcast_to(np.asarray(mask, dtype=bool), xv.shape)
    shifted = np.where(valid, xv, -np.inf)
    top = np.max(shifted, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(valid, np.exp(np.where(valid, xv - top, 0.0)), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    empty = total == 0.0
    out = np.where(empty, 1.0 / n, e / np.where(empty, 1.0, total))

    def grad(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (np.where(empty, 0.0, out * (g - inner)),)

    return record(graph_of(x), "softmax", out, (x,), grad)


def l2_normalize(x, axis: int = -1, eps: float = 1e-12):
    """Unit-L2 rescaling along ``axis``.

    Returns ``(y, degenerate)``; slices with norm <= ``eps`` are passed through
    unchanged and flagged in the boolean ``degenerate`` array.
    """
    xv = value(x)
    norm = np.sqrt(np.sum(xv * xv, axis=axis, keepdims=True))
    degenerate = norm <= eps
    safe = np.where(degenerate, 1.0, norm)
    out = np.where(degenerate, xv, xv / safe)

    def grad(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (np.where(degenerate, g, (g - out * inner) / safe),)

    flags = np.squeeze(degenerate, axis=axis)
    return record(graph_of(x), "l2_normalize", out, (x,), grad), flags


# -- image ops -----------------------------------------------------------------

def conv2d(x, w, b=None, stride: int = 1, pad: int = 0):
    """2-D cross-correlation, ``x``: B x Ci x H x W, ``w``: Co x Ci x kh x kw."""
    xv, wv = value(x), value(w)
    if xv.ndim != 4 or wv.ndim != 4 or xv.shape[1] != wv.shape[1]:
        raise DimMismatch(f"conv2d shapes {xv.shape} and {wv.shape} do not match")
    kh, kw = wv.shape[2:]
    xp = np.pad(xv, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xv
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise DimMismatch("conv2d kernel larger than padded input")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, wv, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents: tuple = (x, w)
    if b is not None:
        out = out + value(b)[None, :, None, None]
        parents = (x, w, b)

    def grad(g):
        go = g.transpose(0, 2, 3, 1)
        gw = np.tensordot(go, win, axes=([0, 1, 2], [0, 2, 3]))
        gx = None
        if isinstance(x, Node):
            cols = np.tensordot(go, wv, axes=([3], [0]))  # B Ho Wo Ci kh kw
            gxp = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + xv.shape[2], pad:pad + xv.shape[3]] if pad else gxp
        grads = (gx, gw)
        if b is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    return record(graph_of(*parents), "conv2d", np.ascontiguousarray(out), parents, grad)


def upsample2x(x):
    """Nearest-neighbour x2 upsampling of the last two axes."""
    xv = value(x)
    out = xv.repeat(2, axis=-2).repeat(2, axis=-1)

    def grad(g):
        s = g.shape
        return (g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2)).sum(axis=(-3, -1)),)

    return record(graph_of(x), "upsample2x", out, (x,), grad)


# -- differentiation ------------------------------------------------------------

def backward(graph: Graph, loss: Node) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` for every registered parameter."""
    if not isinstance(loss, Node):
        grads_zero = {k: np.zeros_like(p.value) for k, p in graph.params.items()}
        if np.asarray(loss).size != 1:
            raise NonScalarLoss("loss must be a scalar")
        return grads_zero
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    grads: list[np.ndarray | None] = [None] * (loss.index + 1)
    grads[loss.index] = np.ones_like(loss.value)
    for node in reversed(graph.nodes[: loss.index + 1]):
        g = grads[node.index]
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None or not isinstance(parent, Node):
                continue
            if grads[parent.index] is None:
                grads[parent.index] = pg
            else:
                grads[parent.index] = grads[parent.index] + pg
    out = {}
    for name, p in graph.params.items():
        g = grads[p.index] if p.index <= loss.index else None
        out[name] = np.zeros_like(p.value) if g is None else np.asarray(g).reshape(p.shape)
    return out


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    checked: int
    skipped: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


BuildFn = Callable[[Graph, dict], Node]


# Finite differences are evaluated in extended precision (64-bit mantissa on
# x86): with float64 the rounding noise of an O(1) loss, ~1e-11 after division
# by 2h, swamps coordinates whose true derivative is below ~1e-7.
FD_DTYPE = np.longdouble


def _trace(build: BuildFn, params: dict[str, np.ndarray], dtype=np.float64) -> tuple[Graph, Node]:
    graph = Graph(track_kinks=True, dtype=dtype)
    nodes = graph.params_from(params)
    return graph, build(graph, nodes)


def _crosses_kink(base: list[np.ndarray], moved: list[np.ndarray]) -> bool:
    if len(base) != len(moved):
        return True
    for kb, km in zip(base, moved):
        changed = kb != km
        if not changed.any():
            continue
        near = np.abs(kb) < KINK_TOL
        flipped = np.signbit(kb) != np.signbit(km)
        if np.any(changed & (near | flipped)):
            return True
    return False


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def gradcheck(build: BuildFn, params: dict[str, np.ndarray], name: str, h: float = 1e-5,
              max_coords: int | None = None, seed: int = 0) -> GradcheckResult:
    """Compare :func:`backward` with central differences for one parameter.

    ``build(graph, nodes)`` must return the scalar loss node.  Coordinates whose
    perturbation moves any ReLU/leaky/clamp input across (or within 1e-6 of) its
    kink are skipped and counted.  ``max_coords`` checks a seeded subset.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    graph, loss = _trace(build, params)
    analytic = backward(graph, loss)[name].ravel()
    wide = {k: np.asarray(v, dtype=FD_DTYPE) for k, v in params.items()}
    base_kinks = _trace(build, wide, FD_DTYPE)[0].kinks
    size = params[name].size
    coords = np.arange(size)
    if max_coords is not None and max_coords < size:
        coords = np.sort(Rng.for_name(seed, name).permutation(size)[:max_coords])

    worst, checked, skipped = 0.0, 0, 0
    for idx in coords:
        evals = []
        kink_hit = False
        for step in (h, -h):
            moved = dict(wide)
            arr = wide[name].copy()
            arr.flat[idx] += step
            moved[name] = arr
            g2, l2 = _trace(build, moved, FD_DTYPE)
            if _crosses_kink(base_kinks, g2.kinks):
                kink_hit = True
                break
            evals.append(value(l2).reshape(()))
        if kink_hit:
            skipped += 1
            continue
        numeric = float((evals[0] - evals[1]) / (2 * FD_DTYPE(h)))
        worst = max(worst, relative_error(float(analytic[idx]), numeric))
        checked += 1
    return GradcheckResult(name, worst, checked, skipped)


def gradcheck_all(build: BuildFn, params: dict[str, np.ndarray], h: float = 1e-5,
                  max_coords: int | None = None, seed: int = 0) -> dict[str, GradcheckResult]:
    return {name: gradcheck(build, params, name, h, max_coords, seed) for name in params}
