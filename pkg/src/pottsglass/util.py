"""Shared helpers: counter-based random streams, replicate mapping, jackknife."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np


class ValidationError(ValueError):
    """Malformed or inconsistent input."""


class BudgetError(RuntimeError):
    """A computation would exceed its configured node/evaluation budget."""


def stream(master_seed, *key):
    """Independent random generator keyed by (master seed, task path).

    Philox is counter-based, so results are independent of scheduling:
    the same key always yields the same stream.
    """
    entropy = (int(master_seed),) + tuple(int(k) for k in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def map_indexed(fn, n, threads=1):
    """Apply fn(i) for i in range(n), results in index order.

    With threads > 1 tasks run on a thread pool; callers key their RNG by
    the index, so the output is identical for any thread count.
    """
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(n)))


def jackknife_se(values):
    """Leave-one-out jackknife standard error of the mean."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ValidationError("jackknife needs at least 2 replicates")
    total = v.sum()
    loo = (total - v) / (n - 1)
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
