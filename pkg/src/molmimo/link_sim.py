"""Tap-level Monte Carlo of the 2x2 BCSK link and the four symbol detectors.

Each slot, transmitter ``i`` releases ``Q1`` molecules for bit 1 and ``Q0``
for bit 0. Receiver ``i`` counts its own current-slot arrivals, ISI from its
own earlier emissions and ILI from the other transmitter's current and
earlier emissions, plus Gaussian noise.

Two channel modes are offered. ``binomial-taps`` draws every (emission, slot)
contribution as an independent binomial, which is the analytical model the
thresholds are derived from. ``multinomial`` allocates each emission once
across all future slots of both receivers, so molecules are conserved.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import ThresholdPair, analytic_thresholds, decide
from .channel_model import ChannelModel, taps

log = logging.getLogger(__name__)

DETECTORS = ("fixed", "adaptive", "practical_zf", "genie_zf")
CHANNEL_MODES = ("binomial-taps", "multinomial")
GENIE_CAL_BITS = 100_000
SWEEP_GRID = np.round(np.arange(-1000, 2001) * 1e-3, 3)


@dataclass(frozen=True)
class LinkConfig:
    Q1: int = 500
    Q0: int = 0
    t_s: float = 0.08
    pi1: float = 0.5
    sigma_n_sq: float = 10.0
    mu_n: float = 0.0
    L: int = 4
    n_bits: int = 5000
    replications: int = 5
    seed: int = 0
    channel_mode: str = "binomial-taps"
    # fixed detector: protocol constant standing in for the unknown Q1
    q1_ref: float = 350.0
    eta_f: float = 0.2

    def __post_init__(self) -> None:
        if not (self.Q1 > self.Q0 >= 0):
            raise ValueError("need Q1 > Q0 >= 0")
        if not 0.0 <= self.pi1 <= 1.0:
            raise ValueError("pi1 must lie in [0, 1]")
        if self.L < 0 or self.n_bits < 1 or self.replications < 1:
            raise ValueError("need L >= 0, n_bits >= 1, replications >= 1")
        if self.sigma_n_sq < 0:
            raise ValueError("sigma_n_sq must be >= 0")
        if not self.t_s > 0:
            raise ValueError("t_s must be positive")
        if self.channel_mode not in CHANNEL_MODES:
            raise ValueError(f"channel_mode must be one of {CHANNEL_MODES}")

    def replace(self, **kw) -> "LinkConfig":
        return LinkConfig(**{**asdict(self), **kw})


@dataclass(frozen=True)
class SlotState:
    """Received counts at both receivers for one slot.

    ``n_own`` is the realised own-link channel count ``N_ii`` (a
    Binomial(Q1, A0) draw that equals the signal whenever bit 1 was sent).
    """

    y: np.ndarray
    n_own: np.ndarray
    bits: np.ndarray
    n: int


@dataclass
class Trace:
    """A run of consecutive slots; arrays have shape ``(2, n_slots)``."""

    bits: np.ndarray
    y: np.ndarray
    n_own: np.ndarray
    warmup: int
    arrivals: np.ndarray | None = None  # multinomial mode: per-emission allocation

    @property
    def n_slots(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class DetectorSpec:
    """Detector kind plus its decision rule.

    ``pair`` is a two-sided rule (decode 0 strictly between the thresholds);
    ``eta`` a single upper threshold (decode 1 iff output > eta). When both are
    None, adaptive/practical use analytic MAP pairs, fixed uses the
    configured ``eta_f`` and genie calibrates ``eta`` by sweeping.
    """

    kind: str
    pair: ThresholdPair | None = None
    eta: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in DETECTORS:
            raise ValueError(f"unknown detector {self.kind!r}")
        for v in (self.eta,) + ((self.pair.eta_minus, self.pair.eta_plus) if self.pair else ()):
            if v is not None and not math.isfinite(v):
                raise ValueError("thresholds must be finite")


@dataclass
class BerResult:
    detector: str
    Q1: int
    t_s: float
    ber_mean: float
    ber_std: float
    n_bits: int
    reps: int
    seed: int
    per_replication: list = field(default_factory=list)
    threshold: dict = field(default_factory=dict)
    genie_fallbacks: int = 0

    @property
    def bits_simulated(self) -> int:
        return 2 * self.n_bits * self.reps

    def row(self) -> dict:
        return {
            "detector": self.detector,
            "Q1": self.Q1,
            "t_s": self.t_s,
            "ber_mean": self.ber_mean,
            "ber_std": self.ber_std,
            "n_bits": self.n_bits,
            "reps": self.reps,
            "seed": self.seed,
        }


def replication_rng(seed: int, rep: int | str) -> np.random.Generator:
    key = (rep,) if isinstance(rep, int) else (int.from_bytes(rep.encode(), "little"),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def generate_bits(n_bits: int, pi1: float, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(pi1) bits for both transmitters, shape ``(2, n_bits)``."""
    return (rng.random((2, n_bits)) < pi1).astype(np.int8)


def _lagged(q: np.ndarray, k: int) -> np.ndarray:
    """``q[n - k]`` with zeros before the first slot."""
    if k == 0:
        return q
    out = np.zeros_like(q)
    if k < q.shape[-1]:
        out[..., k:] = q[..., :-k]
    return out


def _emissions(bits, cfg):
    return np.where(bits == 1, cfg.Q1, cfg.Q0).astype(np.int64)


def _noise(shape, cfg, rng):
    if cfg.sigma_n_sq == 0:
        return np.full(shape, float(cfg.mu_n))
    return cfg.mu_n + math.sqrt(cfg.sigma_n_sq) * rng.standard_normal(shape)


def simulate_trace(cfg: LinkConfig, A, B, rng: np.random.Generator,
                   n_slots: int | None = None) -> Trace:
    """Simulate ``n_slots`` (default ``L + n_bits``) slots of both links."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    L = cfg.L
    if A.size < L + 1 or B.size < L + 1:
        raise ValueError("need L + 1 taps")
    n = cfg.L + cfg.n_bits if n_slots is None else n_slots
    bits = generate_bits(n, cfg.pi1, rng)
    q = _emissions(bits, cfg)
    if cfg.channel_mode == "binomial-taps":
        n_own = rng.binomial(cfg.Q1, A[0], size=(2, n))
        signal = np.where(bits == 1, n_own, 0)
        if cfg.Q0 > 0:
            signal = np.where(bits == 0, rng.binomial(cfg.Q0, A[0], size=(2, n)), signal)
        y = signal.astype(np.float64)
        for k in range(1, L + 1):
            y += rng.binomial(_lagged(q, k), A[k])
        other = q[::-1]
        for k in range(L + 1):
            y += rng.binomial(_lagged(other, k), B[k])
        y += _noise((2, n), cfg, rng)
        return Trace(bits, y, n_own, L)

    # multinomial: categories own slot 0..L, cross slot 0..L, lost
    pvals = np.concatenate([A[:L + 1], B[:L + 1]])
    pvals = np.append(pvals, max(0.0, 1.0 - pvals.sum()))
    alloc = rng.multinomial(q.reshape(-1), pvals).reshape(2, n, -1)
    own = alloc[..., :L + 1]
    cross = alloc[..., L + 1:2 * L + 2]
    counts = np.zeros((2, n), dtype=np.int64)
    for k in range(L + 1):
        counts += _lagged(own[..., k], k)
        counts += _lagged(cross[::-1, :, k], k)
    # genie knowledge: realised own-slot-0 count when bit 1 went out
    n_own = np.where(bits == 1, own[..., 0], rng.binomial(cfg.Q1, A[0], size=(2, n)))
    y = counts.astype(np.float64) + _noise((2, n), cfg, rng)
    return Trace(bits, y, n_own, L, arrivals=alloc)


def channel_slot(history, A, B, cfg: LinkConfig, rng: np.random.Generator) -> SlotState:
    """Received counts for the last slot of ``history`` (shape ``(2, n)``)."""
    hist = np.asarray(history, dtype=np.int8)
    if hist.ndim != 2 or hist.shape[0] != 2 or hist.shape[1] < 1:
        raise ValueError("history must have shape (2, n) with n >= 1")
    n = hist.shape[1]
    q = _emissions(hist, cfg)
    L = min(cfg.L, n - 1)
    y = np.zeros(2)
    n_own = rng.binomial(cfg.Q1, A[0], size=2)
    if cfg.channel_mode == "binomial-taps":
        for i in range(2):
            j = 1 - i
            sig = n_own[i] if hist[i, -1] == 1 else (rng.binomial(cfg.Q0, A[0]) if cfg.Q0 else 0)
            isi = sum(rng.binomial(q[i, -1 - k], A[k]) for k in range(1, L + 1))
            ili = sum(rng.binomial(q[j, -1 - k], B[k]) for k in range(L + 1))
            y[i] = sig + isi + ili
    else:
        # each past emission splits into (own rx now, other rx now, elsewhere)
        for tx in range(2):
            for k in range(L + 1):
                p = [A[k], B[k], max(0.0, 1.0 - A[k] - B[k])]
                own, cross, _ = rng.multinomial(q[tx, -1 - k], p)
                if k == 0 and hist[tx, -1] == 1:
                    n_own[tx] = own
                y[tx] += own
                y[1 - tx] += cross
    y = y + _noise(2, cfg, rng)
    return SlotState(y, n_own, hist[:, -1].copy(), n)


# -- detectors ---------------------------------------------------------------

def output_fixed(state, q1_ref: float):
    return np.asarray(state.y) / q1_ref


def output_adaptive(state, Q1: float):
    return np.asarray(state.y) / Q1


def output_practical(state, Hbar: float):
    """Zero forcing with the mean channel; ``Hbar = Q1 * A0`` on the diagonal."""
    return np.asarray(state.y) / Hbar


def output_genie(state, Hbar: float | None = None):
    """``y / N_ii``; slots with ``N_ii = 0`` fall back to ``y / Hbar``.

    Returns ``(outputs, n_fallback)``.
    """
    y = np.asarray(state.y, dtype=float)
    n_own = np.asarray(state.n_own)
    zero = n_own == 0
    if np.any(zero) and Hbar is None:
        raise ZeroDivisionError("N_ii = 0 and no fallback normalisation given")
    denom = np.where(zero, Hbar if Hbar is not None else 1.0, n_own)
    return y / denom, int(np.count_nonzero(zero))


def _single(y_hat, eta: float):
    bits = (np.asarray(y_hat) > eta).astype(np.int8)
    return int(bits) if bits.ndim == 0 else bits


def detect_fixed(state, eta_f: float = 0.2, q1_ref: float = 350.0):
    return _single(output_fixed(state, q1_ref), eta_f)


def detect_adaptive(state, Q1: float, pair: ThresholdPair):
    return decide(output_adaptive(state, Q1), pair)


def detect_practical(state, Hbar: float, pair: ThresholdPair):
    return decide(output_practical(state, Hbar), pair)


def detect_genie(state, eta_g, Hbar: float | None = None):
    """``eta_g`` is a single upper threshold or a :class:`ThresholdPair`."""
    out, _ = output_genie(state, Hbar)
    if isinstance(eta_g, ThresholdPair):
        return decide(out, eta_g)
    return _single(out, eta_g)


# -- BER experiments -----------------------------------------------------------

def _outputs(kind: str, trace: Trace, cfg: LinkConfig, A0: float):
    if kind == "fixed":
        return output_fixed(trace, cfg.q1_ref), 0
    if kind == "adaptive":
        return output_adaptive(trace, cfg.Q1), 0
    if kind == "practical_zf":
        return output_practical(trace, cfg.Q1 * A0), 0
    return output_genie(trace, cfg.Q1 * A0)


def sweep_curve(y_hat: np.ndarray, bits: np.ndarray, grid) -> np.ndarray:
    """Error counts for "decode 1 iff y_hat > eta" at every grid threshold."""
    grid = np.asarray(grid, dtype=float)
    y_hat = np.asarray(y_hat).ravel()
    bits = np.asarray(bits).ravel()
    ones = np.sort(y_hat[bits == 1])
    zeros = np.sort(y_hat[bits == 0])
    missed = np.searchsorted(ones, grid, side="right")
    false_alarm = zeros.size - np.searchsorted(zeros, grid, side="right")
    return missed + false_alarm


def best_on_plateau(grid, errors) -> float:
    """Centre of the first run of grid points attaining the minimum."""
    grid = np.asarray(grid)
    errors = np.asarray(errors)
    i = int(np.argmin(errors))
    j = i
    while j + 1 < errors.size and errors[j + 1] == errors[i]:
        j += 1
    return float(grid[(i + j) // 2])


def resolve_detectors(cfg: LinkConfig, channel: ChannelModel, specs) -> tuple[list, dict]:
    """Fill in analytic thresholds; genie thresholds are left to calibration."""
    A, B = taps(channel, cfg.t_s, cfg.L)
    th = analytic_thresholds(cfg.Q1, A, B, cfg.pi1, cfg.sigma_n_sq, cfg.L)
    out = []
    for s in specs:
        s = DetectorSpec(s) if isinstance(s, str) else s
        if s.kind == "adaptive" and s.pair is None and s.eta is None:
            s = DetectorSpec("adaptive", pair=th["adaptive_pair"])
        elif s.kind == "practical_zf" and s.pair is None and s.eta is None:
            s = DetectorSpec("practical_zf", pair=th["practical_pair"])
        elif s.kind == "fixed" and s.pair is None and s.eta is None:
            s = DetectorSpec("fixed", eta=cfg.eta_f)
        out.append(s)
    return out, th


def _decisions(detector: DetectorSpec, y_hat):
    if detector.pair is not None:
        return decide(y_hat, detector.pair)
    return _single(y_hat, detector.eta)


def _rep_errors(job):
    cfg, A, B, specs, rep = job
    rng = replication_rng(cfg.seed, rep)
    trace = simulate_trace(cfg, A, B, rng)
    sl = slice(trace.warmup, None)
    errs, fallbacks = [], []
    for s in specs:
        y_hat, fb = _outputs(s.kind, trace, cfg, A[0])
        bits_hat = _decisions(s, y_hat[:, sl])
        errs.append(int(np.count_nonzero(bits_hat != trace.bits[:, sl])))
        fallbacks.append(fb)
    return errs, fallbacks


def calibrate_genie(cfg: LinkConfig, A, B, grid=SWEEP_GRID) -> float:
    """Empirical genie threshold from a dedicated calibration trace.

    The trace is at least ``GENIE_CAL_BITS`` long: at high SNR a short trace
    leaves a wide zero-error plateau whose centre says little about the tails.
    """
    n = max(cfg.n_bits, GENIE_CAL_BITS)
    trace = simulate_trace(cfg.replace(n_bits=n), A, B,
                           replication_rng(cfg.seed, "genie-calibration"))
    y_hat, _ = output_genie(trace, cfg.Q1 * A[0])
    sl = slice(trace.warmup, None)
    errors = sweep_curve(y_hat[:, sl], trace.bits[:, sl], grid)
    return best_on_plateau(grid, errors)


def run_ber_many(cfg: LinkConfig, specs, channel: ChannelModel, *,
                 workers: int = 1) -> list[BerResult]:
    """Evaluate several detectors on the same simulated traces."""
    specs, _ = resolve_detectors(cfg, channel, specs)
    A, B = taps(channel, cfg.t_s, cfg.L)
    resolved = []
    for s in specs:
        if s.kind == "genie_zf" and s.pair is None and s.eta is None:
            s = DetectorSpec("genie_zf", eta=calibrate_genie(cfg, A, B))
        resolved.append(s)

    jobs = [(cfg, A, B, resolved, r) for r in range(cfg.replications)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_rep_errors, jobs))
    else:
        per_rep = [_rep_errors(j) for j in jobs]

    results = []
    for k, s in enumerate(resolved):
        bers = np.array([e[k] for e, _ in per_rep]) / (2.0 * cfg.n_bits)
        std = float(bers.std(ddof=1)) if bers.size > 1 else 0.0
        thr = ({"eta_minus": s.pair.eta_minus, "eta_plus": s.pair.eta_plus}
               if s.pair is not None else {"eta": s.eta})
        results.append(BerResult(
            s.kind, cfg.Q1, cfg.t_s, float(bers.mean()), std, cfg.n_bits,
            cfg.replications, cfg.seed, bers.tolist(), thr,
            int(sum(f[k] for _, f in per_rep)),
        ))
    return results


def run_ber(cfg: LinkConfig, detector, channel: ChannelModel, *, workers: int = 1) -> BerResult:
    return run_ber_many(cfg, [detector], channel, workers=workers)[0]


def sweep_thresholds(cfg: LinkConfig, kind: str, channel: ChannelModel,
                     grid=SWEEP_GRID) -> tuple[float, np.ndarray]:
    """BER of a single-threshold rule at every grid point.

    All grid points share the same traces (one per replication), so the
    curve differences are free of simulation noise between points.
    """
    if kind not in DETECTORS:
        raise ValueError(f"unknown detector {kind!r}")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if not np.all(np.isfinite(grid)):
        raise ValueError("grid must be finite")
    A, B = taps(channel, cfg.t_s, cfg.L)
    errors = np.zeros(grid.size, dtype=np.int64)
    for r in range(cfg.replications):
        trace = simulate_trace(cfg, A, B, replication_rng(cfg.seed, r))
        sl = slice(trace.warmup, None)
        y_hat, _ = _outputs(kind, trace, cfg, A[0])
        errors += sweep_curve(y_hat[:, sl], trace.bits[:, sl], grid)
    ber = errors / (2.0 * cfg.n_bits * cfg.replications)
    return best_on_plateau(grid, ber), ber
