"""Run configuration with the defaults the rest of the package assumes.

A run config is a flat JSON object whose keys mirror the stage dataclass
fields; command-line flags override file values.  Unset hashing and coding
knobs fall back to the tuned defaults below (alpha=1e-2, beta=1e-4,
gamma=1e2, mu0=1, eta0=1, T=100, r=70, sigma=1e-4).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import SyntheticSpec
from .hashing import HashConfig
from .intermediate import SparseCodeConfig


@dataclass
class RunConfig:
    # dataset source: a manifest path or a synthetic recipe
    manifest: str | None = None
    synthetic: SyntheticSpec | None = None
    query_frac: float = 0.1
    train_frac: float = 0.2
    db_frac: float = 0.7
    seed: int = 0

    # canonical view mining
    t: int = 100
    mining_bandwidth: float | None = None

    # sparse coding
    r: int = 70
    sigma: float = 1e-4
    rho: float | str = "auto"

    # visual graph
    graph_k: int = 10
    graph_bandwidth: float | None = None

    # binary embedding
    c: int = 32
    alpha: float = 1e-2
    beta: float = 1e-4
    gamma: float = 1e2
    mu0: float = 1.0
    eta0: float = 1.0
    rho_lm: float = 1.02
    max_iters: int = 50
    tol: float = 1e-4

    # evaluation
    eval_r: int = 100
    out_dir: str = "runs/latest"

    def sparse_config(self) -> SparseCodeConfig:
        return SparseCodeConfig(r=self.r, sigma=self.sigma, rho=self.rho)

    def hash_config(self, c: int | None = None) -> HashConfig:
        return HashConfig(
            c=c if c is not None else self.c,
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            mu0=self.mu0,
            eta0=self.eta0,
            rho_lm=self.rho_lm,
            max_iters=self.max_iters,
            tol=self.tol,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.synthetic is not None:
            d["synthetic"] = dataclasses.asdict(self.synthetic)
            d["synthetic"]["dims"] = list(self.synthetic.dims)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(raw)
        if isinstance(data.get("synthetic"), dict):
            synth = dict(data["synthetic"])
            synth["dims"] = tuple(synth["dims"])
            data["synthetic"] = SyntheticSpec(**synth)
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, overrides: dict) -> "RunConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        merged = self.to_dict()
        merged.update(clean)
        return RunConfig.from_dict(merged)
