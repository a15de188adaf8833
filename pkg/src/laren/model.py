"""The full super-resolution pipeline: encoder -> GDM -> CGM -> frozen generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cgm, gdm
from . import numerics as nx
from .config import RunConfig
from .numerics import Rng
from .objective import make_perceptual
from .prior import encode, init_discriminator, init_encoder, make_generator, synthesize


@dataclass
class Forward:
    z: object
    f: object
    g: object
    c: object
    sr: object


def _subset(params: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


class LarenModel:
    """Trainable encoder/GDM/CGM parameters plus the frozen prior.

    Trainable tensors live in ``params`` under ``enc.``, ``gdm.`` and ``cgm.``
    prefixes; discriminator weights in ``disc``.  The generator and the
    perceptual extractor depend only on ``config.gen_seed``.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.gdm_config = gdm.GdmConfig(config.H, config.N, config.J, config.C, config.K)
        self.cgm_config = cgm.CgmConfig(config.H, config.N, config.F)
        self.generator = make_generator(config.N, config.H, config.F, config.gen_seed)
        self.perceptual = make_perceptual(config.gen_seed)
        params = dict(init_encoder(config.lr_size, config.H, config.seed))
        params.update({"gdm." + k: v for k, v in
                       gdm.init_params(self.gdm_config, config.seed, config.gdm_mode).items()})
        if config.cgm_mode != "NOISE":
            params.update({"cgm." + k: v for k, v in cgm.init_params(self.cgm_config, config.seed).items()})
        self.params: dict[str, np.ndarray] = params
        self.disc: dict[str, np.ndarray] = init_discriminator(config.S, config.seed)

    def noise(self, keys) -> np.ndarray:
        """Per-sample Gaussian detail inputs for NOISE mode, keyed by ``(tag, index)`` pairs."""
        cfg = self.config
        return np.stack([Rng.for_name(cfg.seed, f"noise.{tag}.{idx}").normal_array((cfg.N, cfg.F))
                         for tag, idx in keys])

    def forward(self, lr, params=None, noise_keys=None) -> Forward:
        params = self.params if params is None else params
        cfg = self.config
        z = encode(lr, params)
        f = gdm.gdm_features(z, _subset(params, "gdm."), self.gdm_config, cfg.gdm_mode)
        g = gdm.split_codes(f, cfg.N, cfg.H)
        if cfg.cgm_mode == "NOISE":
            batch = nx.value(z).shape[0]
            keys = noise_keys if noise_keys is not None else [("eval", i) for i in range(batch)]
            c = self.noise(keys)
        else:
            c = cgm.cgm_forward(g, _subset(params, "cgm."), cfg.cgm_mode)
        sr = synthesize(g, c, self.generator)
        return Forward(z, f, g, c, sr)

    def predict(self, lr, batch: int = 32, noise_keys=None) -> Forward:
        """Untraced forward pass over an arbitrarily large LR stack, in chunks."""
        if noise_keys is None:
            noise_keys = [("eval", i) for i in range(len(lr))]
        outs = []
        for start in range(0, len(lr), batch):
            keys = noise_keys[start:start + batch]
            outs.append(self.forward(lr[start:start + batch], noise_keys=keys))
        return Forward(*(np.concatenate([getattr(o, k) for o in outs])
                         for k in ("z", "f", "g", "c", "sr")))
