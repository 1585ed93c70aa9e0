"""Experiment configuration: strict key = value files.

Lines hold `key = value` pairs; `#` starts a comment. Unknown keys are
rejected with the offending line number so config typos cannot silently
change an experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Config file rejected; message carries the line number when known."""


@dataclass
class ExperimentConfig:
    noise: str = "quartic"
    noise_params: dict = field(default_factory=dict)
    spectrum_file: str | None = None
    outliers: int = 0
    prior: str = "rademacher"
    prior_params: dict = field(default_factory=dict)
    prior_atoms_file: str | None = None
    lambda_grid: list[float] = field(default_factory=lambda: [round(0.25 * k, 4) for k in range(1, 13)])
    lam: float = 2.0
    n: int = 2000
    trials: int = 10
    seed: int = 0
    tau: float = 0.9
    max_iter: int = 2000
    tol: float = 1e-7
    onsager: str = "fixed_from_replica"
    init: str = "pca"
    informative_corr: float = math.sqrt(0.5)
    clamp: str = "clamp_to_range"
    replica_damping: float = 0.5
    replica_tol: float = 1e-12
    q_constant: str = "derivation"
    workers: int = 0  # 0 means available parallelism
    dump_trajectories: bool = False

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n < 64:
            raise ConfigError("n must be >= 64")
        grid = list(self.lambda_grid)
        if not grid:
            raise ConfigError("lambda_grid must be nonempty")
        if any(l < 0 for l in grid) or any(b < a for a, b in zip(grid, grid[1:])):
            raise ConfigError("lambda_grid must be sorted and nonnegative")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if not 0 <= self.tau < 1:
            raise ConfigError("tau must lie in [0,1)")
        if self.onsager not in ("adaptive", "fixed_from_replica"):
            raise ConfigError(f"unknown onsager mode {self.onsager!r}")
        if self.init not in ("pca", "informative"):
            raise ConfigError(f"unknown init mode {self.init!r}")
        if self.clamp not in ("clamp_to_range", "error"):
            raise ConfigError(f"unknown clamp policy {self.clamp!r}")
        if self.q_constant not in ("derivation", "literal"):
            raise ConfigError(f"unknown q_constant {self.q_constant!r}")
        if not 0 < self.informative_corr <= 1:
            raise ConfigError("informative_corr must lie in (0,1]")


_FLOAT_KEYS = {"lam": "lam", "lambda": "lam", "tau": "tau", "tol": "tol",
               "informative_corr": "informative_corr", "replica_damping": "replica_damping",
               "replica_tol": "replica_tol"}
_INT_KEYS = {"outliers": "outliers", "n": "n", "trials": "trials", "seed": "seed",
             "max_iter": "max_iter", "workers": "workers"}
_STR_KEYS = {"noise": "noise", "prior": "prior", "onsager": "onsager", "init": "init",
             "clamp": "clamp", "q_constant": "q_constant", "spectrum_file": "spectrum_file",
             "prior_atoms_file": "prior_atoms_file"}
_BOOL_KEYS = {"dump_trajectories": "dump_trajectories"}


def _parse_grid(text: str, lineno: int) -> list[float]:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"line {lineno}: grid range needs start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError(f"line {lineno}: grid step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) for k in range(count)]
    return [float(p) for p in text.split(",") if p.strip()]


def parse_config(path) -> ExperimentConfig:
    cfg = ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key == "lambda_grid":
                cfg.lambda_grid = _parse_grid(value, lineno)
            elif key in _FLOAT_KEYS:
                setattr(cfg, _FLOAT_KEYS[key], float(value))
            elif key in _INT_KEYS:
                setattr(cfg, _INT_KEYS[key], int(value))
            elif key in _STR_KEYS:
                setattr(cfg, _STR_KEYS[key], value)
            elif key in _BOOL_KEYS:
                setattr(cfg, _BOOL_KEYS[key], value.lower() in ("1", "true", "yes"))
            elif key.startswith("noise."):
                cfg.noise_params[key[len("noise."):]] = float(value)
            elif key.startswith("prior."):
                cfg.prior_params[key[len("prior."):]] = float(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {err}") from None
    cfg.validate()
    return cfg


def config_echo(cfg: ExperimentConfig) -> dict:
    """Deterministic plain-dict snapshot of the config for manifests."""
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, dict):
            value = {k: value[k] for k in sorted(value)}
        out[f.name] = value
    return out
