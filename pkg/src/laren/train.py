"""Training loop, batch scheduling and evaluation helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import NonFiniteError, NonFiniteLoss
from .metrics import mean_psnr
from .model import LarenModel
from .numerics import Rng
from .objective import AdamState, LossWeights, adam_step, discriminator_loss, total_loss
from .synthdata import Dataset, upsample_box

METRICS_HEADER = ("step", "l_mse", "l_per", "l_adv", "total", "psnr")


@dataclass
class TrainState:
    step: int = 0
    opt: AdamState = field(default_factory=AdamState)
    disc_opt: AdamState = field(default_factory=AdamState)


def split(data: Dataset, n_test: int) -> tuple[slice, slice]:
    """Train on the leading samples, hold out the last ``n_test``."""
    n = len(data)
    return slice(0, n - n_test), slice(n - n_test, n)


class BatchSchedule:
    """Sequential passes over seeded per-epoch permutations.

    The batch of any step is a pure function of (seed, step), so a resumed
    run sees the same sequence as an uninterrupted one.
    """

    def __init__(self, seed: int, n_train: int, batch: int):
        self.seed, self.n_train, self.batch = seed, n_train, batch
        self._perms: dict[int, list[int]] = {}

    def _perm(self, epoch: int) -> list[int]:
        if epoch not in self._perms:
            self._perms = {epoch: Rng.for_name(self.seed, f"batch.{epoch}").permutation(self.n_train)}
        return self._perms[epoch]

    def indices(self, step: int) -> np.ndarray:
        start = step * self.batch
        return np.array([self._perm(p // self.n_train)[p % self.n_train]
                         for p in range(start, start + self.batch)])


def loss_weights(model: LarenModel) -> LossWeights:
    return LossWeights(model.config.alpha, model.config.beta)


def traced_loss(model: LarenModel, params: dict, lr, hr, noise_keys=None):
    """Builds the generator-side objective on a fresh graph; returns (graph, loss, comps, sr)."""
    graph = nx.Graph()
    nodes = graph.params_from(params)
    fwd = model.forward(lr, nodes, noise_keys)
    disc = model.disc if model.config.beta > 0 else None
    loss, comps = total_loss(fwd.sr, hr, model.perceptual, disc, loss_weights(model))
    return graph, loss, comps, nx.value(fwd.sr)


def train_step(model: LarenModel, data: Dataset, state: TrainState, schedule: BatchSchedule) -> dict:
    """One optimizer step on the generator-side parameters, then one on the discriminator."""
    cfg = model.config
    idx = schedule.indices(state.step)
    lr, hr = data.lr[idx], data.hr[idx]
    keys = [("train", state.step * cfg.batch + k) for k in range(len(idx))]
    try:
        graph, loss, comps, sr = traced_loss(model, model.params, lr, hr, keys)
        grads = nx.backward(graph, loss)
    except NonFiniteError:
        raise NonFiniteLoss(state.step, math.nan) from None
    if not math.isfinite(comps["total"]):
        raise NonFiniteLoss(state.step, comps["total"])
    state.opt.lr = cfg.lr
    model.params = adam_step(model.params, grads, state.opt)
    if cfg.beta > 0:
        dgraph = nx.Graph()
        dnodes = dgraph.params_from(model.disc)
        dloss = discriminator_loss(hr, sr, dnodes)
        state.disc_opt.lr = cfg.lr
        model.disc = adam_step(model.disc, nx.backward(dgraph, dloss), state.disc_opt)
    state.step += 1
    row = {"step": state.step, **comps, "psnr": mean_psnr(sr, hr)}
    return row


def format_row(row: dict) -> str:
    return ",".join(str(row["step"]) if k == "step" else repr(float(row[k])) for k in METRICS_HEADER) + "\n"


def fixed_loss(model: LarenModel, data: Dataset, count: int = 64) -> float:
    """Objective on the first ``count`` training samples; the progress yardstick."""
    cfg = model.config
    train, _ = split(data, cfg.n_test)
    n = min(count, train.stop)
    keys = [("probe", i) for i in range(n)]
    sr = model.predict(data.lr[:n], noise_keys=keys).sr
    disc = model.disc if cfg.beta > 0 else None
    _, comps = total_loss(sr, data.hr[:n], model.perceptual, disc, loss_weights(model))
    return comps["total"]


def evaluate(model: LarenModel, data: Dataset) -> dict:
    """Mean held-out PSNR of the model and of box upsampling."""
    _, test = split(data, model.config.n_test)
    lr, hr = data.lr[test], data.hr[test]
    sr = model.predict(lr).sr
    return {
        "psnr": mean_psnr(sr, hr),
        "baseline_psnr": mean_psnr(upsample_box(lr, data.s), hr),
        "n": len(hr),
    }


def latents(model: LarenModel, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Raw codes z (n x H) and disentangled G-latents f (n x N*H) for every sample."""
    fwd = model.predict(data.lr)
    return fwd.z, fwd.f


def fit(model: LarenModel, data: Dataset, iters: int, state: TrainState | None = None,
        on_step=None) -> TrainState:
    """Runs ``iters`` further steps; ``on_step(row, state)`` is called after each."""
    state = state or TrainState()
    train, _ = split(data, model.config.n_test)
    schedule = BatchSchedule(model.config.seed, train.stop, model.config.batch)
    for _ in range(iters):
        row = train_step(model, data, state, schedule)
        if on_step is not None:
            on_step(row, state)
    return state


def gradcheck_pipeline(config, batch: int = 2, max_coords: int | None = 4, h: float = 1e-5,
                       seed: int = 0) -> list[tuple[str, nx.GradcheckResult]]:
    """Finite-difference check of the full objective.

    Two paths: ``beta0`` differentiates the reconstruction + perceptual loss
    with respect to every encoder/GDM/CGM tensor; ``adversarial`` adds the
    discriminator term (beta taken from the config, 0.01 if zero) and checks
    model and discriminator tensors, plus the discriminator's own loss.
    """
    from .synthdata import make_sample

    model = LarenModel(config)
    pairs = [make_sample(i, config.S, config.s, config.seed) for i in range(batch)]
    lr = np.stack([p.lr for p in pairs])
    hr = np.stack([p.hr for p in pairs])
    keys = [("check", i) for i in range(batch)]
    n_model = len(model.params)
    beta = config.beta if config.beta > 0 else 0.01

    def split_nodes(nodes):
        items = list(nodes.items())
        return dict(items[:n_model]), dict(items[n_model:])

    def build_beta0(graph, nodes):
        fwd = model.forward(lr, nodes, keys)
        loss, _ = total_loss(fwd.sr, hr, model.perceptual, None, LossWeights(config.alpha, 0.0))
        return loss

    def build_adv(graph, nodes):
        params, disc = split_nodes(nodes)
        fwd = model.forward(lr, params, keys)
        loss, _ = total_loss(fwd.sr, hr, model.perceptual, disc, LossWeights(config.alpha, beta))
        return loss

    fake = model.predict(lr, noise_keys=keys).sr

    def build_disc(graph, nodes):
        return discriminator_loss(hr, fake, nodes)

    both = {**model.params, **model.disc}
    results = [("beta0", r) for r in nx.gradcheck_all(build_beta0, model.params, h, max_coords, seed).values()]
    results += [("adversarial", r) for r in nx.gradcheck_all(build_adv, both, h, max_coords, seed).values()]
    results += [("discriminator", r) for r in nx.gradcheck_all(build_disc, model.disc, h, max_coords, seed).values()]
    return results
