"""Run configuration for the ``loop`` and ``protocol`` commands."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .driver import LoopConfig, ProtocolConfig
from .errors import ConfigError
from .surrogate import FitConfig

ORACLES = ("synthetic", "replay")
MANIFEST_FORMAT = "genebo-run-manifest/1"


@dataclass(frozen=True)
class RunConfig:
    # paths
    fasta: str | None = None
    rates: str | None = None
    model: str | None = None
    out_dir: str = "."
    # fitting
    max_iters: int = 1000
    n_restarts: int = 10
    seed: int = 0
    # loop and protocol
    iterations: int = 20
    n_variants: int = 1000
    threshold: float = 1.5
    k: int = 10
    refit_every: int = 1
    xi: float = 0.0
    n_train: int = 1500
    seed_genes: tuple = ()
    # oracle
    oracle: str = "synthetic"
    n_initial: int = 30
    n_pool: int = 200
    noise_std: float = 0.0
    codon_bias_sd: float = 0.0

    def __post_init__(self):
        positive = ("max_iters", "n_restarts", "n_variants", "k", "refit_every",
                    "n_train", "n_initial", "n_pool")
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if not isinstance(self.iterations, int) or self.iterations < 0:
            raise ConfigError(f"iterations must be an integer >= 0, got {self.iterations!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        for name in ("noise_std", "codon_bias_sd", "xi"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.oracle not in ORACLES:
            raise ConfigError(f"oracle must be one of {ORACLES}, got {self.oracle!r}")
        if self.oracle == "synthetic" and self.n_initial > self.n_pool:
            raise ConfigError("n_initial cannot exceed n_pool")
        object.__setattr__(self, "seed_genes", tuple(self.seed_genes))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path):
        """Read a config file, or the ``config`` section of a run manifest."""
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        if doc.get("format") == MANIFEST_FORMAT:
            doc = doc["config"]
        return cls.from_dict(doc)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["seed_genes"] = list(self.seed_genes)
        return d

    def fit_config(self):
        return FitConfig(max_iters=self.max_iters, n_restarts=self.n_restarts, seed=self.seed)

    def loop_config(self):
        return LoopConfig(iterations=self.iterations, n_variants=self.n_variants,
                          refit_every=self.refit_every, seed=self.seed, xi=self.xi,
                          fit=self.fit_config())

    def protocol_config(self):
        return ProtocolConfig(n_train=self.n_train, n_variants=self.n_variants,
                              threshold=self.threshold, k=self.k, seed=self.seed,
                              xi=self.xi, fit=self.fit_config())

    def replace(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        return self.from_dict({**self.to_dict(), **changes})
