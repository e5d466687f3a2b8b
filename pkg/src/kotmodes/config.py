"""Flat key-value experiment configs with schema validation and hashing.

Config files are plain "key = value" lines ('#' comments allowed), diffable
and language-neutral.  Every output file embeds the hash of the resolved
config, so reruns are byte-reproducible and artifacts are traceable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    schema: int = SCHEMA_VERSION
    # chain
    eps: float = 1.0
    h: float = 0.05
    margin: float = 2.0
    # system
    eps_s: float = 1.0
    coupling: float | None = None      # defaults to h (the worked model)
    drive_amp: float = 0.1
    drive_freq: float = 1.0
    # horizon and resolutions
    T: float = 100.0
    r_cut: float = 1e-4
    dt_grid: float = 0.02
    dt_event: float | None = None      # defaults to 1/(80 h)
    dt_out: float = 0.5
    dt_exact: float = 0.05
    # register truncation
    n_max: int = 6
    # exact reference truncation
    exact_n: int = 7
    exact_N: int = 14
    # Monte Carlo
    n_histories: int = 100
    seed: int = 1234
    workers: int = 1
    # classical sampling demo
    cl_B: float = 1.0
    cl_T: float = 4.0
    cl_grid: int = 257
    cl_r_cut: float = 1e-7

    def resolve(self) -> "ExperimentConfig":
        if self.coupling is None:
            self.coupling = self.h
        if self.dt_event is None:
            if self.h <= 0:
                raise ConfigError("dt_event: required when h = 0 (no bandwidth default)")
            self.dt_event = 1.0 / (4.0 * self.h) / 20.0
        self.validate()
        return self

    def validate(self):
        import numpy as np
        checks = [
            ("schema", self.schema == SCHEMA_VERSION, f"must be {SCHEMA_VERSION}"),
            ("h", self.h >= 0 and np.isfinite(self.h), "must be finite and >= 0"),
            ("eps", np.isfinite(self.eps), "must be finite"),
            ("margin", self.margin >= 1, "must be >= 1"),
            ("eps_s", np.isfinite(self.eps_s), "must be finite"),
            ("T", self.T > 0, "must be positive"),
            ("r_cut", 0 < self.r_cut < 1, "must lie in (0, 1)"),
            ("dt_grid", self.dt_grid > 0, "must be positive"),
            ("dt_out", self.dt_out > 0, "must be positive"),
            ("dt_exact", self.dt_exact > 0, "must be positive"),
            ("dt_event", self.dt_event is None or self.dt_event > 0, "must be positive"),
            ("n_max", self.n_max >= 1, "must be >= 1"),
            ("exact_n", self.exact_n >= 1, "must be >= 1"),
            ("exact_N", self.exact_N >= 1, "must be >= 1"),
            ("n_histories", self.n_histories >= 1, "must be >= 1"),
            ("workers", self.workers >= 1, "must be >= 1"),
            ("cl_B", self.cl_B >= 0, "must be >= 0"),
            ("cl_T", self.cl_T > 0, "must be positive"),
            ("cl_grid", self.cl_grid >= 16, "must be >= 16"),
            ("cl_r_cut", 0 < self.cl_r_cut < 1, "must lie in (0, 1)"),
        ]
        bad = [f"{name}: {msg}" for name, ok, msg in checks if not ok]
        if bad:
            raise ConfigError("; ".join(bad))

    def canonical_text(self) -> str:
        items = []
        for f in fields(self):
            v = getattr(self, f.name)
            items.append(f"{f.name} = {v!r}")
        return "\n".join(sorted(items)) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]


_FIELD_TYPES = {f.name: f for f in fields(ExperimentConfig)}
_INT_FIELDS = {"schema", "n_max", "exact_n", "exact_N", "n_histories", "seed",
               "workers", "cl_grid"}


def parse_config_text(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            if key in _INT_FIELDS:
                setattr(cfg, key, int(val))
            else:
                setattr(cfg, key, float(val))
        except ValueError:
            raise ConfigError(f"line {lineno}: {key}: cannot parse {val!r}") from None
    return cfg.resolve()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())
