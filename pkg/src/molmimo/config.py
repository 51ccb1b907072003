"""Experiment configuration: a strict YAML schema.

Unknown keys are rejected so that typos fail loudly instead of silently
falling back to defaults. The master seed is mandatory.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .link_sim import CHANNEL_MODES, DETECTORS, LinkConfig
from .particle_sim import MODES
from .topology import Topology, make_topology


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


def _listify(v):
    return [float(x) for x in v] if isinstance(v, (list, tuple)) else [float(v)]


@dataclass(frozen=True)
class TopologyBlock:
    D: float = 50.0
    d: list = field(default_factory=lambda: [2.0])
    h: list = field(default_factory=lambda: [2.0])
    r_r: list = field(default_factory=lambda: [4.0])
    d_ref: str = "surface"
    h_ref: str = "surface"
    selected: dict = field(default_factory=lambda: {"d": 2.0, "h": 2.0, "r_r": 4.0})

    def grid(self) -> list[Topology]:
        return [make_topology(d, h, r, self.D, d_ref=self.d_ref, h_ref=self.h_ref)
                for d, h, r in itertools.product(self.d, self.h, self.r_r)]

    def selected_topology(self) -> Topology:
        s = self.selected
        return make_topology(s["d"], s["h"], s["r_r"], self.D, d_ref=self.d_ref, h_ref=self.h_ref)


@dataclass(frozen=True)
class ParticleBlock:
    n_molecules: int = 20000
    dt: float = 1e-4
    t_end: float = 10.0
    mode: str = "endpoint"
    jump_factor: float = 12.0
    block_size: int = 8192
    both_emitters: bool = True


@dataclass(frozen=True)
class FitBlock:
    t_max: float = 10.0
    n_points: int = 500
    initial_guess: list = field(default_factory=lambda: [1.0, 0.5, 0.5])
    b1_bounds: list = field(default_factory=lambda: [1e-9, 1.5])
    b23_bounds: list = field(default_factory=lambda: [1e-9, 1.0 - 1e-9])
    symmetric: bool = True

    def time_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_points)

    def bounds(self):
        lo = [self.b1_bounds[0], self.b23_bounds[0], self.b23_bounds[0]]
        hi = [self.b1_bounds[1], self.b23_bounds[1], self.b23_bounds[1]]
        return lo, hi


@dataclass(frozen=True)
class SweepBlock:
    Q1: list = field(default_factory=lambda: [100, 200, 300, 400, 500, 600])
    t_s: list = field(default_factory=lambda: [0.05, 0.06, 0.07, 0.08, 0.09, 0.10, 0.11, 0.12, 0.13])
    detectors: list = field(default_factory=lambda: list(DETECTORS))
    sir_t_s: list = field(default_factory=lambda: [round(0.05 * k, 2) for k in range(1, 21)])
    threshold_grid: list = field(default_factory=lambda: [-1.0, 2.0, 0.001])

    def grid(self) -> np.ndarray:
        lo, hi, step = self.threshold_grid
        n = int(round((hi - lo) / step))
        return np.round(lo + step * np.arange(n + 1), 12)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    topology: TopologyBlock = field(default_factory=TopologyBlock)
    particle_sim: ParticleBlock = field(default_factory=ParticleBlock)
    fit: FitBlock = field(default_factory=FitBlock)
    link: dict = field(default_factory=dict)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    output: dict = field(default_factory=lambda: {"dir": "results"})

    def link_config(self, **overrides) -> LinkConfig:
        return LinkConfig(**{**self.link, "seed": self.seed, **overrides})

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def header(self) -> dict:
        return {"config_hash": self.digest(), "seed": self.seed}


def _block(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {sorted(unknown)}")
    return cls(**raw)


def from_dict(raw: dict, *, seed: int | None = None, mode: str | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = raw.get("seed") if seed is None else seed
    if seed is None:
        raise ConfigError("a master seed is required")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")

    try:
        top = _block(TopologyBlock, raw.get("topology"), "topology")
        top = TopologyBlock(D=float(top.D), d=_listify(top.d), h=_listify(top.h),
                            r_r=_listify(top.r_r), d_ref=top.d_ref, h_ref=top.h_ref,
                            selected={k: float(v) for k, v in top.selected.items()})
        if set(top.selected) != {"d", "h", "r_r"}:
            raise ConfigError("[topology.selected] needs exactly d, h, r_r")
        ps = _block(ParticleBlock, raw.get("particle_sim"), "particle_sim")
        if ps.mode not in MODES:
            raise ConfigError(f"[particle_sim] mode must be one of {sorted(MODES)}")
        fb = _block(FitBlock, raw.get("fit"), "fit")
        sw = _block(SweepBlock, raw.get("sweep"), "sweep")
        bad = set(sw.detectors) - set(DETECTORS)
        if bad:
            raise ConfigError(f"[sweep] unknown detectors: {sorted(bad)}")
        link = dict(raw.get("link") or {})
        link_known = {f.name for f in fields(LinkConfig)} - {"seed"}
        if set(link) - link_known:
            raise ConfigError(f"[link] unknown keys: {sorted(set(link) - link_known)}")
        if mode is not None:
            if mode not in CHANNEL_MODES:
                raise ConfigError(f"--mode must be one of {CHANNEL_MODES}")
            link["channel_mode"] = mode
        output = dict(raw.get("output") or {"dir": "results"})
        if set(output) - {"dir"}:
            raise ConfigError(f"[output] unknown keys: {sorted(set(output) - {'dir'})}")
        cfg = ExperimentConfig(seed, top, ps, fb, link, sw, output)
        # validate eagerly
        top.grid()
        top.selected_topology()
        cfg.link_config()
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load(path, *, seed: int | None = None, mode: str | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    return from_dict(raw or {}, seed=seed, mode=mode)
