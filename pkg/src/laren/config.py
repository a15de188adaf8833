"""Run configuration: UTF-8 ``key = value`` lines, ``#`` starts a comment."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import BadConfig, MissingFile
from .prior import resolution_for

GDM_MODES = ("HMRR", "VRR", "AFFINE")
CGM_MODES = ("ReRR", "VRR", "NOISE")


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if not key:
            raise BadConfig(f"line {lineno}: empty key")
        if key in out:
            raise BadConfig(f"duplicate key {key!r}")
        out[key] = val
    return out


@dataclass(frozen=True)
class RunConfig:
    H: int = 16
    N: int = 8
    J: int = 8
    C: int = 4
    F: int = 8
    K: int = 4
    S: int = 32
    s: int = 8
    alpha: float = 0.01
    beta: float = 0.01
    lr: float = 1e-4
    batch: int = 8
    iters: int = 2000
    seed: int = 0
    gen_seed: int = 1234
    gdm_mode: str = "HMRR"
    cgm_mode: str = "ReRR"
    n_samples: int = 500
    n_test: int = 50
    ckpt_every: int = 500

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for key in ("H", "N", "J", "C", "F", "K", "S", "s", "batch", "n_samples", "ckpt_every"):
            if getattr(self, key) <= 0:
                raise BadConfig(f"{key} must be positive")
        for key in ("iters", "n_test", "seed", "gen_seed"):
            if getattr(self, key) < 0:
                raise BadConfig(f"{key} must be non-negative")
        if self.J * self.C < 2:
            raise BadConfig("J*C must be at least 2")
        if self.lr <= 0 or self.alpha < 0 or self.beta < 0:
            raise BadConfig("lr must be positive, alpha and beta non-negative")
        if self.gdm_mode not in GDM_MODES:
            raise BadConfig(f"gdm_mode must be one of {GDM_MODES}, got {self.gdm_mode!r}")
        if self.cgm_mode not in CGM_MODES:
            raise BadConfig(f"cgm_mode must be one of {CGM_MODES}, got {self.cgm_mode!r}")
        if self.S % self.s:
            raise BadConfig(f"S={self.S} is not divisible by s={self.s}")
        lr_size = self.S // self.s
        if lr_size & (lr_size - 1):
            raise BadConfig(f"LR size S/s={lr_size} must be a power of two")
        if resolution_for(self.N) != self.S:
            raise BadConfig(f"N={self.N} generator layers give {resolution_for(self.N)}px output, S={self.S}")
        if self.n_test >= self.n_samples:
            raise BadConfig("n_test must be smaller than n_samples")

    @property
    def D(self) -> int:
        return self.N * self.H

    @property
    def lr_size(self) -> int:
        return self.S // self.s

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str, env: dict | None = None) -> "RunConfig":
        raw = parse_kv(text)
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, val in raw.items():
            if key not in known:
                raise BadConfig(f"unknown config key {key!r}")
            kind = known[key].type
            try:
                if kind in ("int", int):
                    values[key] = int(val)
                elif kind in ("float", float):
                    values[key] = float(val)
                else:
                    values[key] = val
            except ValueError:
                raise BadConfig(f"bad value for {key!r}: {val!r}") from None
        env = os.environ if env is None else env
        if env.get("LAREN_SEED"):
            try:
                values["seed"] = int(env["LAREN_SEED"])
            except ValueError:
                raise BadConfig(f"bad LAREN_SEED {env['LAREN_SEED']!r}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise MissingFile(str(path)) from None
        return cls.from_text(text)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n".replace("'", "")
                       for f in fields(self))
