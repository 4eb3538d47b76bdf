"""Shared helpers for the test suite."""

import numpy as np

from pottsglass.core import MonotonePath, StateDistribution
from pottsglass.util import stream


def random_distribution(rng, kappa, floor=0.05):
    w = rng.uniform(floor, 1.0, size=kappa)
    return StateDistribution(w / w.sum())


def random_path(rng, d, r, x_low=0.1, x_high=0.9):
    """A random validated path: PSD increments, strict interior x-levels."""
    kappa = d.kappa
    while True:
        incs = []
        for _ in range(r - 1):
            a = rng.standard_normal((kappa, kappa)) * 0.3
            incs.append(a @ a.T)
        total = sum(incs, np.zeros((kappa, kappa)))
        if np.linalg.eigvalsh(np.diag(d.d) - total)[0] < -1e-12:
            continue
        x = np.sort(rng.uniform(x_low, x_high, size=r))
        if r > 1 and np.min(np.diff(x)) < 1e-3:
            continue
        return MonotonePath.from_increments(d, x, incs)


def seeded(master, *key):
    return stream(master, *key)
