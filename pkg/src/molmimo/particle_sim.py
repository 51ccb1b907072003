"""Particle-level Monte Carlo of the 2x2 diffusion channel.

Molecules leave a point transmitter at t=0 and perform Gaussian random walks
until they are absorbed by one of the two receiver bulges or the horizon runs
out. Molecules are split into fixed-size blocks; each block draws from its own
RNG substream keyed by ``(seed, emitter, block)``, so results do not depend on
how many workers process the blocks.

The inner loop lives in the compiled ``_walk`` extension. When the extension
is missing, or ``MOLMIMO_PURE_PYTHON=1`` is set, an equivalent numpy
implementation is used instead.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .topology import LinkId, Topology

log = logging.getLogger(__name__)

if os.environ.get("MOLMIMO_PURE_PYTHON") == "1":
    from ._walk_py import walk_block
    BACKEND = "python"
else:
    try:
        from ._walk import walk_block
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        from ._walk_py import walk_block
        BACKEND = "python"

from . import _walk_py

MODES = {"endpoint": 0, "chord": 1, "bridge": 2}


@dataclass(frozen=True)
class SimParams:
    """Settings for one one-shot emission experiment.

    ``mode`` selects the absorption test: ``endpoint`` checks the position at
    the end of each step, ``chord`` also catches straight segments that cut a
    bulge, ``bridge`` additionally applies the Brownian-bridge crossing
    probability. ``jump_factor`` enables far-field multi-step jumps: a
    molecule whose clearance to every bulge is at least
    ``jump_factor * sigma * sqrt(m)`` advances ``m`` steps in one draw
    (0 disables).
    """

    n_molecules: int
    dt: float = 1e-4
    t_end: float = 10.0
    seed: int = 0
    emitter: int = 1
    mode: str = "endpoint"
    jump_factor: float = 12.0
    block_size: int = 8192
    cross_bulge: bool = True

    def __post_init__(self) -> None:
        if self.n_molecules < 0:
            raise ValueError("n_molecules must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least dt")
        if self.emitter not in (1, 2):
            raise ValueError("emitter must be 1 or 2")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {sorted(MODES)}")
        if self.jump_factor < 0:
            raise ValueError("jump_factor must be >= 0")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


class HitRecord(NamedTuple):
    molecule_id: int
    absorbed_at: int  # 1, 2, or 0 when never absorbed
    hit_time: float  # nan when never absorbed


class HitRecords:
    """Column store of per-molecule absorption events for one emitter."""

    def __init__(self, emitter: int, bulge: np.ndarray, step: np.ndarray,
                 dt: float, t_end: float):
        self.emitter = emitter
        self.bulge = np.asarray(bulge, dtype=np.int8)
        self.step = np.asarray(step, dtype=np.int64)
        self.dt = dt
        self.t_end = t_end

    def __len__(self) -> int:
        return self.bulge.size

    def __iter__(self) -> Iterator[HitRecord]:
        times = self.hit_times
        for i in range(len(self)):
            yield HitRecord(i, int(self.bulge[i]), float(times[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, HitRecords):
            return NotImplemented
        return (self.emitter == other.emitter
                and np.array_equal(self.bulge, other.bulge)
                and np.array_equal(self.step, other.step))

    @property
    def hit_times(self) -> np.ndarray:
        return np.where(self.bulge > 0, self.step * self.dt, np.nan)

    def counts(self) -> dict:
        return {
            "absorbed_1": int(np.count_nonzero(self.bulge == 1)),
            "absorbed_2": int(np.count_nonzero(self.bulge == 2)),
            "free": int(np.count_nonzero(self.bulge == 0)),
        }

    def to_csv(self, path) -> None:
        times = self.hit_times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["molecule_id", "emitter", "absorbed_at", "hit_time"])
            for i in range(len(self)):
                t = "" if self.bulge[i] == 0 else repr(float(times[i]))
                w.writerow([i, self.emitter, int(self.bulge[i]), t])


@dataclass(frozen=True)
class EmpiricalCdf:
    link: LinkId
    times: np.ndarray
    values: np.ndarray
    n_total: int

    def __post_init__(self) -> None:
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must align")


def step(position, D: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Advance positions (shape ``(..., 3)``) by one Brownian increment."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    position = np.asarray(position, dtype=float)
    return position + np.sqrt(2.0 * D * dt) * rng.standard_normal(position.shape)


def block_rng(seed: int, emitter: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(emitter, block))
    return np.random.Generator(np.random.PCG64(ss))


def _block_args(topology: Topology, params: SimParams):
    active = np.array([1, 1], dtype=np.uint8)
    if not params.cross_bulge:
        active[2 - params.emitter] = 0
    return (
        np.ascontiguousarray(topology.tx_position(params.emitter), dtype=float),
        np.ascontiguousarray(topology.centers, dtype=float),
        active,
        float(topology.r_r),
        float(np.sqrt(2.0 * topology.D * params.dt)),
        float(topology.D * params.dt),
        params.n_steps,
    )


def _run_block(job):
    topology, params, block, n, backend = job
    kernel = _walk_py.walk_block if backend == "python" else walk_block
    rng = block_rng(params.seed, params.emitter, block)
    start, centers, active, radius, sigma, ddt, n_steps = _block_args(topology, params)
    return kernel(rng, start, centers, active, radius, sigma, ddt, n_steps, n,
                  MODES[params.mode], float(params.jump_factor))


def run_one_shot(topology: Topology, params: SimParams, *, workers: int = 1,
                 backend: str | None = None) -> HitRecords:
    """Release ``params.n_molecules`` from the emitter and record absorptions."""
    backend = backend or BACKEND
    sizes = []
    left = params.n_molecules
    while left > 0:
        sizes.append(min(params.block_size, left))
        left -= sizes[-1]
    jobs = [(topology, params, b, n, backend) for b, n in enumerate(sizes)]

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, jobs))
    else:
        parts = [_run_block(j) for j in jobs]

    if parts:
        bulge = np.concatenate([p[0] for p in parts])
        steps = np.concatenate([p[1] for p in parts])
    else:
        bulge = np.zeros(0, dtype=np.int8)
        steps = np.zeros(0, dtype=np.int64)
    rec = HitRecords(params.emitter, bulge, steps, params.dt, params.t_end)
    log.info("emitter %d: %s", params.emitter, rec.counts())
    return rec


def estimate_cdf(records: HitRecords, time_grid: Sequence[float],
                 n_total: int | None = None) -> dict[LinkId, EmpiricalCdf]:
    """Fraction of emitted molecules absorbed at each bulge by each grid time."""
    grid = np.asarray(time_grid, dtype=float)
    if grid.ndim != 1 or (grid.size and grid[0] < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("time_grid must be sorted and non-negative")
    n_total = len(records) if n_total is None else n_total
    # compare in integer steps to avoid float drift at grid points
    grid_steps = np.floor(grid / records.dt + 1e-9).astype(np.int64)
    out = {}
    for rx in (1, 2):
        link = LinkId(rx, records.emitter)
        if n_total == 0:
            out[link] = EmpiricalCdf(link, grid, np.zeros_like(grid), 0)
            continue
        hits = np.sort(records.step[records.bulge == rx])
        counts = np.searchsorted(hits, grid_steps, side="right")
        out[link] = EmpiricalCdf(link, grid, counts / n_total, n_total)
    return out


def characterize(topology: Topology, params: SimParams, time_grid, *,
                 workers: int = 1, both_emitters: bool = True):
    """Run one-shot experiments and return ``(cdfs, records)``.

    With ``both_emitters`` the second emitter uses its own substreams, giving
    all four link CDFs; otherwise only the two links of ``params.emitter``.
    """
    emitters = (1, 2) if both_emitters else (params.emitter,)
    cdfs, records = {}, {}
    for tx in emitters:
        p = SimParams(**{**params.__dict__, "emitter": tx})
        rec = run_one_shot(topology, p, workers=workers)
        records[tx] = rec
        cdfs.update(estimate_cdf(rec, time_grid, params.n_molecules))
    return cdfs, records


def write_cdf_csv(path, cdfs: dict[LinkId, EmpiricalCdf], header: dict | None = None) -> None:
    """Long format: one row per (link, t)."""
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["link", "t", "F", "n_total"])
        for link in sorted(cdfs):
            c = cdfs[link]
            for t, f in zip(c.times, c.values):
                w.writerow([link.label, repr(float(t)), repr(float(f)), c.n_total])


def read_cdf_csv(path) -> dict[LinkId, EmpiricalCdf]:
    rows: dict[LinkId, list] = {}
    n_tot: dict[LinkId, int] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            link = LinkId.parse(row["link"])
            rows.setdefault(link, []).append((float(row["t"]), float(row["F"])))
            n_tot[link] = int(row["n_total"])
    out = {}
    for link, pts in rows.items():
        arr = np.array(pts)
        out[link] = EmpiricalCdf(link, arr[:, 0], arr[:, 1], n_tot[link])
    return out
