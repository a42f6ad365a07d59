"""Seeded synthetic cost maps shared by the partitioner tests."""
import numpy as np

from djqe.partition import TableCost


def segment_sse_map(m: int, seed: int) -> TableCost:
    """Weighted within-segment squared error of random cell values.

    Such costs are superadditive (merging two segments never lowers the
    summed error), which is the condition under which pruning is exact.
    """
    rng = np.random.default_rng(seed)
    levels = rng.normal(size=rng.integers(1, 4))
    steps = np.sort(rng.integers(0, m, size=len(levels)))
    values = levels[np.searchsorted(steps, np.arange(m), side="right") - 1]
    values = values + rng.normal(scale=rng.choice([0.0, 0.1, 1.0]), size=m)
    weights = rng.uniform(0.1, 1.0, size=m)

    def cost(lo, hi):
        w, v = weights[lo:hi], values[lo:hi]
        mean = w @ v / w.sum()
        return float(w @ (v - mean) ** 2)

    return TableCost.from_function(m, cost)


def random_map(m: int, seed: int) -> TableCost:
    """Arbitrary non-negative segment costs with no structure at all."""
    rng = np.random.default_rng(seed)
    table = np.triu(rng.exponential(size=(m + 1, m + 1)), k=1)
    return TableCost(table)
