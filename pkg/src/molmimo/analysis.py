"""Interference moments, Gaussian detector-output models and MAP thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# relative tolerance under which the two output variances count as equal
BETA_TIE = 1e-12


@dataclass(frozen=True)
class InterferenceStats:
    mu_I: float
    sigma2_I: float
    n: int
    L: int


@dataclass(frozen=True)
class GaussApprox:
    """Conditional detector-output moments given bit 0 and bit 1."""

    mu0: float
    sigma0_sq: float
    mu1: float
    sigma1_sq: float

    @property
    def beta(self) -> float:
        return self.sigma1_sq / self.sigma0_sq


@dataclass(frozen=True)
class ThresholdPair:
    """Decode 0 strictly inside ``(eta_minus, eta_plus)``, 1 elsewhere.

    A degenerate pair is a single threshold: 1 iff the output is at or above it.
    """

    eta_minus: float
    eta_plus: float
    degenerate: bool = False

    def scaled(self, factor: float) -> "ThresholdPair":
        return ThresholdPair(self.eta_minus * factor, self.eta_plus * factor, self.degenerate)


def isi_term_stats(Q1: float, A_k: float, pi1: float) -> tuple[float, float]:
    """Mean and variance of one interference term ``Q_{x} * Bin(., A_k)``.

    The sent bit is 1 with probability ``pi1``; given bit 1 the arrivals are
    Binomial(Q1, A_k), given bit 0 there are none.
    """
    pi0 = 1.0 - pi1
    mean = pi1 * Q1 * A_k
    var = pi1 * Q1 * A_k * (1.0 - A_k) + pi0 * pi1 * Q1 * Q1 * A_k * A_k
    return mean, var


def interference_stats(Q1: float, A, B, pi1: float, n: int, L: int | None = None) -> InterferenceStats:
    """Total ISI + ILI moments at (1-based) slot ``n``.

    ISI runs over own taps ``A_1..A_{n-1}`` and ILI over cross taps
    ``B_0..B_{n-1}``, both truncated at memory ``L`` and at the taps supplied.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if n < 1:
        raise ValueError("slot index n is 1-based")
    if L is None:
        L = max(A.size, B.size) - 1
    k_max = min(n - 1, L)
    a = A[1:min(k_max, A.size - 1) + 1]
    b = B[:min(k_max, B.size - 1) + 1]
    pi0 = 1.0 - pi1
    mu = pi1 * Q1 * (a.sum() + b.sum())
    var = (pi0 * pi1 * Q1 * Q1 * (np.sum(a * a) + np.sum(b * b))
           + pi1 * Q1 * (np.sum(a * (1.0 - a)) + np.sum(b * (1.0 - b))))
    return InterferenceStats(float(mu), float(var), n, L)


def gauss_approx_practical(Q1: float, A0: float, stats: InterferenceStats,
                           sigma_n_sq: float) -> GaussApprox:
    """Moments of the practical zero-forcing output ``y / (Q1 A0)``."""
    if not Q1 * A0 > 0:
        raise ValueError("Q1 * A0 must be positive")
    A0 = float(A0)
    g = Q1 * A0
    mu0 = stats.mu_I / g
    s0 = (stats.sigma2_I + sigma_n_sq) / (g * g)
    return GaussApprox(mu0, s0, 1.0 + mu0, (1.0 - A0) / g + s0)


def gauss_approx_adaptive(practical: GaussApprox, A0: float) -> GaussApprox:
    """Moments of the adaptive output ``y / Q1 = A0 * (practical output)``."""
    A0 = float(A0)
    a2 = A0 * A0
    return GaussApprox(A0 * practical.mu0, a2 * practical.sigma0_sq,
                       A0 * practical.mu1, a2 * practical.sigma1_sq)


def log_density_gap(eta, g: GaussApprox, pi1: float = 0.5):
    """``log(pi0 phi0(eta)) - log(pi1 phi1(eta))``; zero at a MAP boundary."""
    eta = np.asarray(eta, dtype=float)
    l0 = -0.5 * math.log(g.sigma0_sq) - (eta - g.mu0) ** 2 / (2.0 * g.sigma0_sq)
    l1 = -0.5 * math.log(g.sigma1_sq) - (eta - g.mu1) ** 2 / (2.0 * g.sigma1_sq)
    prior = math.log((1.0 - pi1) / pi1) if 0.0 < pi1 < 1.0 else 0.0
    return l0 - l1 + prior


def bisect_root(f, lo: float, hi: float) -> float:
    """Bisection to machine precision; ``f(lo)`` and ``f(hi)`` must differ in sign."""
    flo = f(lo)
    if flo == 0.0:
        return lo
    if f(hi) == 0.0:
        return hi
    if (flo > 0) == (f(hi) > 0):
        raise ValueError("root not bracketed")
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid


def numeric_intersection(g: GaussApprox, pi1: float = 0.5) -> ThresholdPair:
    """Roots of :func:`log_density_gap` by bracketing and bisection."""
    f = lambda x: float(log_density_gap(x, g, pi1))  # noqa: E731
    sep = g.mu1 - g.mu0
    if abs(g.sigma1_sq - g.sigma0_sq) <= BETA_TIE * g.sigma0_sq:
        # equal variances: linear gap, one crossing
        prior = math.log((1.0 - pi1) / pi1) if 0.0 < pi1 < 1.0 else 0.0
        eta = 0.5 * (g.mu0 + g.mu1) + g.sigma0_sq * prior / sep
        return ThresholdPair(eta, eta, True)
    if g.sigma1_sq < g.sigma0_sq:
        raise ValueError("sigma1^2 < sigma0^2: inconsistent detector moments")

    # the gap is a concave parabola peaking at x_peak
    x_peak = (g.mu0 * g.sigma1_sq - g.mu1 * g.sigma0_sq) / (g.sigma1_sq - g.sigma0_sq)
    if f(x_peak) <= 0.0:
        # bit 1 wins everywhere
        return ThresholdPair(x_peak, x_peak, False)
    span = max(abs(sep), math.sqrt(g.sigma1_sq), 1e-300)
    lo = x_peak - span
    while f(lo) > 0.0:
        span *= 2.0
        lo = x_peak - span
    span = max(abs(sep), math.sqrt(g.sigma1_sq), 1e-300)
    hi = x_peak + span
    while f(hi) > 0.0:
        span *= 2.0
        hi = x_peak + span
    return ThresholdPair(bisect_root(f, lo, x_peak), bisect_root(f, x_peak, hi), False)


def gaussian_intersection(g: GaussApprox, pi1: float = 0.5) -> ThresholdPair:
    """MAP decision boundaries between the two conditional Gaussians.

    Uses the closed-form roots when the means are one unit apart and the
    priors are equal; otherwise falls back to :func:`numeric_intersection`.
    """
    if not (g.sigma0_sq > 0 and g.sigma1_sq > 0):
        raise ValueError("variances must be positive (is there any noise or interference?)")
    beta = g.beta
    if beta < 1.0 - BETA_TIE:
        raise ValueError(f"beta = {beta} < 1: inconsistent detector moments")
    if pi1 != 0.5 or abs(g.mu1 - g.mu0 - 1.0) > 1e-12:
        return numeric_intersection(g, pi1)
    if beta - 1.0 <= BETA_TIE:
        eta = 0.5 * (g.mu0 + g.mu1)
        return ThresholdPair(eta, eta, True)
    bm1 = beta - 1.0
    c = 1.0 + g.sigma0_sq * beta * math.log(beta)
    root = math.sqrt(1.0 + bm1 * c)
    lo = g.mu0 - (1.0 + root) / bm1
    # (root - 1) / bm1 rewritten without the cancellation near beta = 1
    hi = g.mu0 + c / (root + 1.0)
    return ThresholdPair(float(lo), float(hi), False)


def decide(y_hat, pair: ThresholdPair):
    """0 where ``eta_minus < y_hat < eta_plus``, 1 elsewhere (vectorised)."""
    y = np.asarray(y_hat)
    if pair.degenerate:
        bits = (y >= pair.eta_plus)
    else:
        bits = ~((y > pair.eta_minus) & (y < pair.eta_plus))
    bits = bits.astype(np.int8)
    return int(bits) if bits.ndim == 0 else bits


def analytic_thresholds(Q1: float, A, B, pi1: float, sigma_n_sq: float, L: int,
                        n: int | None = None) -> dict:
    """Practical and adaptive threshold pairs at steady state (``n = L + 1``)."""
    n = L + 1 if n is None else n
    stats = interference_stats(Q1, A, B, pi1, n, L)
    prac = gauss_approx_practical(Q1, A[0], stats, sigma_n_sq)
    adap = gauss_approx_adaptive(prac, A[0])
    return {
        "stats": stats,
        "practical": prac,
        "adaptive": adap,
        "practical_pair": gaussian_intersection(prac, pi1),
        "adaptive_pair": gaussian_intersection(adap, pi1),
    }
