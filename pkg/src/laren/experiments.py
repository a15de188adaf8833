"""Small seeded ablation runs: train one variant, then score its latents and output."""

from __future__ import annotations

from dataclasses import replace

from . import metrics
from .config import RunConfig
from .model import LarenModel
from .synthdata import Dataset
from .train import evaluate, fit, latents

# block of latent dimensions compared between z and G (1-based, inclusive)
CORR_ROWS = (12, 16)
CORR_COLS = (1, 11)


def run_variant(config: RunConfig, data: Dataset, steps: int) -> dict:
    """Trains ``steps`` steps from a fresh model and reports DCI, correlations and PSNR."""
    model = LarenModel(config)
    fit(model, data, steps)
    z, f = latents(model, data)
    scores, _ = metrics.dci(f, data.attrs)
    res = evaluate(model, data)
    return {
        "disentanglement": scores.disentanglement,
        "corr_z": metrics.mean_abs_block(metrics.correlation_matrix(z), CORR_ROWS, CORR_COLS),
        "corr_g": metrics.mean_abs_block(metrics.correlation_matrix(f), CORR_ROWS, CORR_COLS),
        "psnr": res["psnr"],
        "baseline_psnr": res["baseline_psnr"],
    }


def ablation(seed: int, steps: int, n_samples: int = 200, n_test: int = 50,
             variants=(("HMRR", "ReRR"), ("AFFINE", "ReRR"), ("HMRR", "VRR"), ("HMRR", "NOISE"))) -> dict:
    """Runs every (gdm_mode, cgm_mode) variant on one seeded dataset."""
    base = RunConfig(seed=seed, n_samples=n_samples, n_test=n_test, iters=steps)
    data = Dataset.generate(n_samples, base.S, base.s, seed)
    return {(g, c): run_variant(replace(base, gdm_mode=g, cgm_mode=c), data, steps) for g, c in variants}
