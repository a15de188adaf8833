"""Training objective and the Adam optimizer.

total = mean((sr - hr)^2) + alpha * mean((phi(sr) - phi(hr))^2)
        + beta * mean(log(max(1 - D(sr), 1e-12)))

``phi`` is a frozen, seeded two-layer convolutional feature extractor standing
in for a pretrained perceptual network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ShapeMismatch
from .numerics import Rng
from .prior import LEAK, discriminate

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.01
    beta: float = 0.01


def make_perceptual(seed: int, width: int = 8) -> dict[str, np.ndarray]:
    phi = {
        "phi.conv1.W": Rng.for_name(seed, "phi.conv1.W").normal_array((width, 3, 3, 3), math.sqrt(2.0 / 27)),
        "phi.conv1.b": np.zeros(width),
        "phi.conv2.W": Rng.for_name(seed, "phi.conv2.W").normal_array(
            (width, width, 3, 3), math.sqrt(2.0 / (9 * width))),
        "phi.conv2.b": np.zeros(width),
    }
    for arr in phi.values():
        arr.setflags(write=False)
    return phi


def perceptual_features(img, phi):
    x = nx.leaky_relu(nx.conv2d(img, phi["phi.conv1.W"], phi["phi.conv1.b"], pad=1), LEAK)
    return nx.leaky_relu(nx.conv2d(x, phi["phi.conv2.W"], phi["phi.conv2.b"], pad=1), LEAK)


def total_loss(sr, hr, phi, disc, weights: LossWeights = LossWeights()):
    """Returns ``(loss, components)`` with float components l_mse, l_per, l_adv, total.

    ``l_adv`` is the unweighted mean log term; with ``beta == 0`` or
    ``disc is None`` the discriminator is not evaluated and ``l_adv`` is 0.
    """
    if nx.value(sr).shape != np.shape(nx.value(hr)):
        raise ShapeMismatch(f"output {nx.value(sr).shape} vs target {np.shape(nx.value(hr))}")
    l_mse = nx.mean(nx.square(nx.sub(sr, hr)))
    l_per = nx.mean(nx.square(nx.sub(perceptual_features(sr, phi), perceptual_features(hr, phi))))
    loss = nx.add(l_mse, nx.mul(l_per, weights.alpha))
    l_adv = 0.0
    if weights.beta != 0 and disc is not None:
        p_fake = discriminate(sr, disc)
        l_adv = nx.mean(nx.log(nx.clamp(nx.sub(1.0, p_fake), lo=LOG_FLOOR)))
        loss = nx.add(loss, nx.mul(l_adv, weights.beta))
    comps = {
        "l_mse": float(nx.value(l_mse)),
        "l_per": float(nx.value(l_per)),
        "l_adv": float(nx.value(l_adv)),
        "total": float(nx.value(loss)),
    }
    return loss, comps


def discriminator_loss(real, fake, disc):
    """Non-saturating discriminator objective -log D(real) - log(1 - D(fake))."""
    p_real = discriminate(real, disc)
    p_fake = discriminate(fake, disc)
    real_term = nx.log(nx.clamp(p_real, lo=LOG_FLOOR))
    fake_term = nx.log(nx.clamp(nx.sub(1.0, p_fake), lo=LOG_FLOOR))
    return nx.mul(nx.mean(nx.add(real_term, fake_term)), -1.0)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays, mutates ``state``."""
    for name, p in params.items():
        if name not in grads or np.shape(grads[name]) != p.shape:
            raise ShapeMismatch(f"gradient for {name!r} missing or mis-shaped")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        out[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out
