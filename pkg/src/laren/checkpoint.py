"""Checkpoint directories: named LTSR tensors plus two ``key = value`` text files.

Layout::

    config.cfg                  RunConfig snapshot
    meta.cfg                    step, generator seed/architecture, optimizer counters
    param.<name>.ltsr           encoder / GDM / CGM tensors
    disc.<name>.ltsr            discriminator tensors
    opt.{m,v}.<name>.ltsr       Adam moments of the model parameters
    dopt.{m,v}.<name>.ltsr      Adam moments of the discriminator
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_kv
from .errors import MissingFile, ShapeMismatch
from .model import LarenModel
from .numerics import load_ltsr, save_ltsr
from .train import TrainState


def _save_group(root: Path, prefix: str, tensors: dict[str, np.ndarray]) -> None:
    for name in sorted(tensors):
        save_ltsr(root / f"{prefix}.{name}.ltsr", tensors[name])


def _load_group(root: Path, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for path in sorted(root.glob(f"{prefix}.*.ltsr")):
        out[path.name[len(prefix) + 1:-len(".ltsr")]] = load_ltsr(path)
    return out


def save_checkpoint(path, model: LarenModel, state: TrainState) -> Path:
    root = Path(path)
    os.makedirs(root, exist_ok=True)
    for old in root.glob("*.ltsr"):
        old.unlink()
    (root / "config.cfg").write_text(model.config.to_text(), encoding="utf-8")
    gen = model.generator
    meta = (f"step = {state.step}\n"
            f"gen_seed = {gen.seed}\n"
            f"gen_channels = {','.join(str(c) for c in gen.channels)}\n"
            f"gen_resolution = {gen.resolution}\n"
            f"opt_step = {state.opt.step}\n"
            f"dopt_step = {state.disc_opt.step}\n")
    (root / "meta.cfg").write_text(meta, encoding="utf-8")
    _save_group(root, "param", model.params)
    _save_group(root, "disc", model.disc)
    for prefix, opt in (("opt", state.opt), ("dopt", state.disc_opt)):
        _save_group(root, prefix + ".m", opt.m)
        _save_group(root, prefix + ".v", opt.v)
    return root


def _check_shapes(kind: str, expected: dict[str, np.ndarray], loaded: dict[str, np.ndarray]) -> None:
    if set(expected) != set(loaded):
        missing = sorted(set(expected) ^ set(loaded))
        raise ShapeMismatch(f"checkpoint {kind} tensors do not match the config: {missing[:5]}")
    for name, arr in expected.items():
        if loaded[name].shape != arr.shape:
            raise ShapeMismatch(f"checkpoint tensor {kind}.{name} has shape {loaded[name].shape}, "
                                f"config expects {arr.shape}")


def load_checkpoint(path, config: RunConfig | None = None) -> tuple[LarenModel, TrainState]:
    """Rebuilds model and optimizer state; ``config`` (if given) must agree on every tensor shape."""
    root = Path(path)
    for name in ("config.cfg", "meta.cfg"):
        if not (root / name).exists():
            raise MissingFile(str(root / name))
    saved = RunConfig.from_text((root / "config.cfg").read_text(encoding="utf-8"), env={})
    meta = parse_kv((root / "meta.cfg").read_text(encoding="utf-8"))
    model = LarenModel(config or saved)
    if int(meta["gen_seed"]) != model.config.gen_seed:
        raise ShapeMismatch(f"checkpoint generator seed {meta['gen_seed']} differs from config "
                            f"{model.config.gen_seed}")
    params, disc = _load_group(root, "param"), _load_group(root, "disc")
    _check_shapes("param", model.params, params)
    _check_shapes("disc", model.disc, disc)
    model.params, model.disc = params, disc
    state = TrainState(step=int(meta["step"]))
    for prefix, opt, key in (("opt", state.opt, "opt_step"), ("dopt", state.disc_opt, "dopt_step")):
        opt.step = int(meta[key])
        opt.m = _load_group(root, prefix + ".m")
        opt.v = _load_group(root, prefix + ".v")
    return model, state
