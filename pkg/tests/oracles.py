"""Slow, obviously-correct reference computations used to check the fast paths."""

import itertools
import math


def brute_tau_b(x, y):
    """Kendall tau-b by enumerating every pair; None when a margin is fully tied."""
    n = len(x)
    c = d = tx = ty = 0
    for i, j in itertools.combinations(range(n), 2):
        dx = (x[i] > x[j]) - (x[i] < x[j])
        dy = (y[i] > y[j]) - (y[i] < y[j])
        if dx == 0:
            tx += 1
        if dy == 0:
            ty += 1
        if dx * dy > 0:
            c += 1
        elif dx * dy < 0:
            d += 1
    n0 = n * (n - 1) // 2
    denom = (n0 - tx) * (n0 - ty)
    if denom == 0:
        return None
    return (c - d) / math.sqrt(denom)


def brute_tau_a(x, y):
    n = len(x)
    s = 0
    for i, j in itertools.combinations(range(n), 2):
        s += ((x[i] > x[j]) - (x[i] < x[j])) * ((y[i] > y[j]) - (y[i] < y[j]))
    return s / (n * (n - 1) / 2)


def brute_mae_grid(counts, refs, search):
    """MAE of clamp(100 - d*m) vs refs for every d, with plain loops."""
    out = {}
    for d in search:
        total = 0.0
        for m, r in zip(counts, refs):
            total += abs(max(0, min(100, 100 - d * m)) - r)
        out[d] = total / len(counts)
    return out
