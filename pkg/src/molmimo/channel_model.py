"""Hitting-probability models for the 2x2 channel.

``f_siso`` is the exact first-hitting CDF of a lone absorbing sphere. The 2x2
channel has no closed form, so each link is described by the same erfc shape
with three fitted exponents/scales (``f_model``) estimated from simulated
CDFs. Slot taps and the SIR figure of merit follow from the fitted curves.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erfc

from .particle_sim import EmpiricalCdf
from .topology import LinkId, Topology

B1_BOUNDS = (1e-9, 1.5)
B23_BOUNDS = (1e-9, 1.0 - 1e-9)


class FitError(RuntimeError):
    """Raised when the data cannot support a fit."""


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("time must be non-negative")
    return t


def _ret(value, like):
    return float(value) if np.ndim(like) == 0 else value


def f_siso(t, r_r: float, d: float, D: float):
    """Fraction absorbed by a single sphere by time ``t``.

    ``(r_r / (r_r + d)) * erfc(d / sqrt(4 D t))``; zero at ``t = 0`` and
    ``r_r / (r_r + d)`` as ``t -> inf``.
    """
    tt = _check_t(t)
    with np.errstate(divide="ignore"):
        arg = d / np.sqrt(4.0 * D * tt)
    return _ret(r_r / (r_r + d) * erfc(arg), t)


@dataclass(frozen=True)
class ModelParams:
    b1: float
    b2: float
    b3: float

    def __post_init__(self) -> None:
        if not (0 <= self.b1 <= B1_BOUNDS[1]):
            raise ValueError(f"b1 out of range: {self.b1}")
        if not (0 < self.b2 < 1 and 0 < self.b3 < 1):
            raise ValueError(f"b2, b3 must lie in (0, 1): {self.b2}, {self.b3}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.b1, self.b2, self.b3)


SISO_IDENTITY = ModelParams(1.0, 0.5, 0.5)


def f_model(t, params: ModelParams, r_r: float, d: float, D: float):
    """``(b1 r_r / (d + r_r)) * erfc(d / ((4D)^b2 * t^b3))``."""
    tt = _check_t(t)
    b1, b2, b3 = params.as_tuple()
    with np.errstate(divide="ignore"):
        arg = d / ((4.0 * D) ** b2 * tt ** b3)
    return _ret(b1 * r_r / (d + r_r) * erfc(arg), t)


def f_model_limit(params: ModelParams, r_r: float, d: float) -> float:
    return params.b1 * r_r / (d + r_r)


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    rmse: float
    nfev: int
    converged: bool
    message: str
    n_points: int
    t_max: float


def fit(cdf: EmpiricalCdf, r_r: float, d: float, D: float,
        initial_guess=(1.0, 0.5, 0.5), *, bounds=None) -> FitResult:
    """Least-squares fit of ``f_model`` to an empirical CDF on its own grid."""
    t = np.asarray(cdf.times, dtype=float)
    y = np.asarray(cdf.values, dtype=float)
    if t.size < 3:
        raise FitError("need at least 3 points to fit 3 parameters")
    if not np.any(y > 0):
        raise FitError(f"{cdf.link.label}: empirical CDF is identically zero")

    scale = r_r / (d + r_r)
    log4d = math.log(4.0 * D)
    pos = t > 0

    def residual(b):
        out = -y.copy()
        arg = d / np.exp(b[1] * log4d + b[2] * np.log(t[pos]))
        out[pos] += b[0] * scale * erfc(arg)
        return out

    def jac(b):
        J = np.zeros((t.size, 3))
        tp = t[pos]
        arg = d / np.exp(b[1] * log4d + b[2] * np.log(tp))
        e = erfc(arg)
        # d erfc(a)/da = -2/sqrt(pi) exp(-a^2); da/db2 = -a ln(4D); da/db3 = -a ln t
        g = b[0] * scale * (2.0 / math.sqrt(math.pi)) * np.exp(-arg * arg) * arg
        J[pos, 0] = scale * e
        J[pos, 1] = g * log4d
        J[pos, 2] = g * np.log(tp)
        return J

    if bounds is None:
        lo = [B1_BOUNDS[0], B23_BOUNDS[0], B23_BOUNDS[0]]
        hi = [B1_BOUNDS[1], B23_BOUNDS[1], B23_BOUNDS[1]]
    else:
        lo, hi = bounds
    x0 = np.clip(np.asarray(initial_guess, dtype=float), lo, hi)
    res = least_squares(residual, x0, jac=jac, bounds=(lo, hi), method="trf",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    b = res.x
    params = ModelParams(float(b[0]), float(b[1]), float(b[2]))
    rmse = float(np.sqrt(np.mean(res.fun ** 2)))
    return FitResult(params, rmse, int(res.nfev), bool(res.status > 0),
                     str(res.message), int(t.size), float(t[-1]))


@dataclass(frozen=True)
class ChannelModel:
    """Fitted own-link (F11 = F22) and cross-link (F12 = F21) models."""

    topology: Topology
    own: ModelParams
    cross: ModelParams

    @property
    def d(self) -> float:
        return self.topology.surface_distance

    def params_for(self, link: LinkId) -> ModelParams:
        return self.own if link.is_own else self.cross

    def F(self, link: LinkId, t):
        top = self.topology
        return f_model(t, self.params_for(link), top.r_r, self.d, top.D)

    def F_inf(self, link: LinkId) -> float:
        return f_model_limit(self.params_for(link), self.topology.r_r, self.d)

    def F_between(self, link: LinkId, t1, t2):
        """Probability of a hit in ``[t1, t2)``; ``t2`` may be ``inf``."""
        hi = self.F_inf(link) if np.isinf(t2) else self.F(link, t2)
        return hi - self.F(link, t1)


def taps(channel: ChannelModel, t_s: float, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-slot hit probabilities ``A_k`` (own link) and ``B_k`` (cross), k = 0..L."""
    if not t_s > 0:
        raise ValueError("t_s must be positive")
    if L < 0:
        raise ValueError("L must be >= 0")
    edges = np.arange(L + 2) * t_s
    A = np.diff(channel.F(LinkId(1, 1), edges))
    B = np.diff(channel.F(LinkId(1, 2), edges))
    return A, B


def sir(channel: ChannelModel, t_s: float) -> float:
    """Current-slot own mass over own tail plus total cross mass."""
    if not t_s > 0:
        raise ValueError("t_s must be positive")
    own, cross = LinkId(1, 1), LinkId(1, 2)
    signal = channel.F(own, t_s)
    interference = channel.F_between(own, t_s, np.inf) + channel.F_inf(cross)
    if interference <= 0.0:
        return math.inf
    return float(signal / interference)


PARAM_COLUMNS = ["d", "h", "r_r", "D", "function", "b1", "b2", "b3",
                 "rmse", "nfev", "converged", "t_max", "n_points"]


def write_params_csv(path, rows: list[dict], header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.DictWriter(fh, fieldnames=PARAM_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in PARAM_COLUMNS})


def read_params_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        rows = []
        for row in reader:
            for k in ("d", "h", "r_r", "D", "b1", "b2", "b3"):
                row[k] = float(row[k])
            rows.append(row)
    return rows


def channel_from_rows(rows: list[dict], topology: Topology) -> ChannelModel:
    """Pick the F11 and F12 rows for ``topology`` out of a parameter table."""
    def match(r):
        return (math.isclose(r["d"], topology.d) and math.isclose(r["h"], topology.h)
                and math.isclose(r["r_r"], topology.r_r) and math.isclose(r["D"], topology.D))

    found = {r["function"]: r for r in rows if match(r)}
    try:
        own, cross = found["F11"], found["F12"]
    except KeyError:
        raise KeyError(f"no fitted F11/F12 rows for topology {topology.as_dict()}") from None
    return ChannelModel(
        topology,
        ModelParams(own["b1"], own["b2"], own["b3"]),
        ModelParams(cross["b1"], cross["b2"], cross["b3"]),
    )
