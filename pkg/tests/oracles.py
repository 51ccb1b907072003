"""Independent reference computations used by the tests.

Nothing here imports molmimo; each oracle recomputes its quantity from
first principles (arbitrary precision, brute-force sampling or plain
bisection) so agreement means something.
"""

import math

import mpmath as mp
import numpy as np

mp.mp.dps = 40


def siso_cdf(t, r_r, d, D):
    t = mp.mpf(t)
    if t == 0:
        return mp.mpf(0)
    return mp.mpf(r_r) / (r_r + d) * mp.erfc(d / mp.sqrt(4 * mp.mpf(D) * t))


def model_cdf(t, b, r_r, d, D):
    t = mp.mpf(t)
    if t == 0:
        return mp.mpf(0)
    b1, b2, b3 = (mp.mpf(x) for x in b)
    return b1 * r_r / (d + r_r) * mp.erfc(d / ((4 * mp.mpf(D)) ** b2 * t ** b3))


def taps_by_integration(b, r_r, d, D, t_s, L, n_sub=4000):
    """Slot masses by trapezoid integration of the model density."""
    out = []
    for k in range(L + 1):
        t = np.linspace(k * t_s, (k + 1) * t_s, n_sub + 1)
        t = np.maximum(t, 1e-12)
        b1, b2, b3 = b
        a = d / ((4 * D) ** b2 * t ** b3)
        # d/dt erfc(a) = 2/sqrt(pi) exp(-a^2) * a * b3 / t
        dens = b1 * r_r / (d + r_r) * 2 / math.sqrt(math.pi) * np.exp(-a * a) * a * b3 / t
        out.append(float(np.trapezoid(dens, t)))
    return np.array(out)


def sample_interference(Q1, A, B, pi1, n_hist, rng, L):
    """Draw total ISI + ILI for random bit histories, term by term."""
    total = np.zeros(n_hist)
    for k in range(1, L + 1):
        sent = rng.random(n_hist) < pi1
        total += np.where(sent, rng.binomial(Q1, A[k], n_hist), 0)
    for k in range(L + 1):
        sent = rng.random(n_hist) < pi1
        total += np.where(sent, rng.binomial(Q1, B[k], n_hist), 0)
    return total


def log_gap(x, mu0, s0, mu1, s1):
    return (-math.log(s0) - (x - mu0) ** 2 / (2 * s0 * s0)) - (
        -math.log(s1) - (x - mu1) ** 2 / (2 * s1 * s1))


def bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def intersection_by_bisection(mu0, s0, mu1, s1):
    """Both crossings of the two normal log-densities (s1 > s0)."""
    peak = (mu0 * s1 * s1 - mu1 * s0 * s0) / (s1 * s1 - s0 * s0)
    f = lambda x: log_gap(x, mu0, s0, mu1, s1)  # noqa: E731
    w = 1.0
    while f(peak - w) > 0:
        w *= 2
    lo = bisect(f, peak - w, peak)
    w = 1.0
    while f(peak + w) > 0:
        w *= 2
    hi = bisect(f, peak, peak + w)
    return lo, hi
