"""Independent reference implementations used only by the test suite.

These deliberately avoid the library's code paths: quantiles come from
np.interp on the piecewise-linear CDF, and the circle distance is minimized
by exhaustive assignment (all cyclic shifts of sorted particles, optionally
cross-checked by the Hungarian algorithm over every permutation).
"""

import numpy as np
from scipy.optimize import linear_sum_assignment


def inverse_cdf(values, levels):
    values = np.asarray(values, dtype=float)
    n = values.size
    cum = np.concatenate([[0.0], np.cumsum(values) / n])
    cum /= cum[-1]
    edges = np.arange(n + 1) / n
    return np.interp(levels, cum, edges)


def circle_dist(x, y):
    d = np.abs(np.asarray(x) - np.asarray(y)) % 1.0
    return np.minimum(d, 1.0 - d)


def w2_circle_cyclic(fa_values, fb_values, m=200):
    """Min over the m cyclic monotone assignments of sorted mid-quantiles."""
    levels = (np.arange(m) + 0.5) / m
    xa = inverse_cdf(fa_values, levels)
    xb = inverse_cdf(fb_values, levels)
    best = np.inf
    for r in range(m):
        cost = float(np.mean(circle_dist(xa, np.roll(xb, -r)) ** 2))
        if cost < best:
            best = cost
    return float(np.sqrt(best))


def w2_circle_hungarian(fa_values, fb_values, m=120):
    """Optimal assignment over all m! pairings, geodesic-squared cost."""
    levels = (np.arange(m) + 0.5) / m
    xa = inverse_cdf(fa_values, levels)
    xb = inverse_cdf(fb_values, levels)
    cost = circle_dist(xa[:, None], xb[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def smooth_positive_field(rng, n):
    x = (np.arange(n) + 0.5) / n
    a1, a2 = rng.uniform(0.05, 0.45), rng.uniform(0.0, 0.35)
    if a1 + a2 > 0.85:
        a2 = 0.85 - a1
    p1, p2 = rng.uniform(0.0, 1.0, size=2)
    v = 1.0 + a1 * np.cos(2 * np.pi * (x - p1)) + a2 * np.cos(4 * np.pi * (x - p2))
    return v / v.mean()


def bump_field(rng, n, width=None, floor=0.05):
    x = (np.arange(n) + 0.5) / n
    width = width or rng.uniform(0.05, 0.15)
    center = rng.uniform(0.0, 1.0)
    d = circle_dist(x, center)
    v = floor + np.exp(-0.5 * (d / width) ** 2)
    return v / v.mean()


def vacuum_field(rng, n):
    x = (np.arange(n) + 0.5) / n
    center = rng.uniform(0.0, 1.0)
    v = np.maximum(0.0, np.cos(2 * np.pi * (x - center))) ** 2
    return v / v.mean()
