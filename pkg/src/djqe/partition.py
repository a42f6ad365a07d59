"""Penalized optimal partitioning of the action grid.

All three solvers minimize ``sum(cost(I) for I in D) + gamma * len(D)`` over
grid partitions ``D`` of ``[0, 1]``. :func:`pelt` prunes its candidate list,
:func:`exact_dp` scans every split point, :func:`brute_force` enumerates all
``2**(m-1)`` partitions. A cost source is any object with
``segment_cost(lo, hi)`` (zero when ``lo == hi``); an optional
``prefetch_segments(pairs)`` lets it batch work ahead of the scan.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Partition, ValidationError, partition_from_changepoints

BRUTE_FORCE_MAX_M = 16


@dataclass(frozen=True)
class PartitionResult:
    """Optimal partition plus the Bellman table that produced it.

    ``bell[0] == -gamma`` and ``objective == bell[m] + gamma``.
    ``evaluations`` counts (candidate, endpoint) pairs scored.
    """

    partition: Partition
    objective: float
    bell: np.ndarray
    tau: np.ndarray
    evaluations: int
    gamma: float


class TableCost:
    """Cost source backed by an explicit ``(m + 1, m + 1)`` table."""

    def __init__(self, table):
        table = np.asarray(table, dtype=float)
        if table.ndim != 2 or table.shape[0] != table.shape[1]:
            raise ValidationError("cost table must be square")
        self.table = table
        self.m = table.shape[0] - 1

    @classmethod
    def from_function(cls, m: int, fn):
        t = np.zeros((m + 1, m + 1))
        for hi in range(1, m + 1):
            for lo in range(hi):
                t[lo, hi] = fn(lo, hi)
        return cls(t)

    def segment_cost(self, lo: int, hi: int) -> float:
        return 0.0 if lo == hi else float(self.table[lo, hi])


def _check(cache, m: int, gamma: float):
    if gamma < 0:
        raise ValidationError("gamma must be >= 0")
    if m < 1:
        raise ValidationError("m must be positive")
    grid = getattr(cache, "m", m)
    if grid != m:
        raise ValidationError(f"cost source grid {grid} does not match m={m}")


def _prefetch(cache, pairs):
    fetch = getattr(cache, "prefetch_segments", None)
    if fetch is not None:
        fetch(pairs)


def _backtrack(tau, m: int) -> Partition:
    taus = []
    r = m
    while r > 0:
        r = int(tau[r])
        if r > 0:
            taus.append(r)
    return partition_from_changepoints(sorted(taus), m)


def _solve(cache, m: int, gamma: float, prune: bool) -> PartitionResult:
    _check(cache, m, gamma)
    bell = np.full(m + 1, np.nan)
    tau = np.zeros(m + 1, dtype=int)
    bell[0] = -gamma
    candidates = [0]
    evaluations = 0
    for end in range(1, m + 1):
        if prune:
            if end > 1:
                # keep v if Bell(v) + C(v, end-1) <= Bell(end-1); end-1 itself always survives
                prev = end - 1
                candidates = [v for v in candidates + [prev]
                              if bell[v] + cache.segment_cost(v, prev) <= bell[prev]]
        else:
            candidates = list(range(end))
        _prefetch(cache, [(v, end) for v in candidates])
        scores = [bell[v] + cache.segment_cost(v, end) + gamma for v in candidates]
        evaluations += len(candidates)
        best = int(np.argmin(scores))
        bell[end] = scores[best]
        tau[end] = candidates[best]
    return PartitionResult(_backtrack(tau, m), float(bell[m] + gamma), bell, tau,
                           evaluations, gamma)


def pelt(cache, m: int, gamma: float) -> PartitionResult:
    """Bellman recursion over a pruned candidate list."""
    return _solve(cache, m, gamma, prune=True)


def exact_dp(cache, m: int, gamma: float) -> PartitionResult:
    """Unpruned O(m^2) Bellman recursion; globally optimal."""
    return _solve(cache, m, gamma, prune=False)


def solve(cache, m: int, gamma: float, method: str = "pelt") -> PartitionResult:
    if method == "pelt":
        return pelt(cache, m, gamma)
    if method in ("exact_dp", "exact-dp"):
        return exact_dp(cache, m, gamma)
    raise ValidationError(f"unknown partitioner {method!r}")


def partition_objective(cache, partition: Partition, gamma: float) -> float:
    return sum(cache.segment_cost(iv.lo, iv.hi) for iv in partition) + gamma * len(partition)


def brute_force(cache, m: int, gamma: float) -> PartitionResult:
    """Exhaustive search over every grid partition (``m <= 16``).

    Ties go to fewer intervals, then to the lexicographically smallest
    change-point list.
    """
    if m > BRUTE_FORCE_MAX_M:
        raise ValidationError(f"brute force refused for m={m} > {BRUTE_FORCE_MAX_M}")
    _check(cache, m, gamma)
    best_key, best_taus = None, None
    evaluations = 0
    for k in range(m):
        for taus in itertools.combinations(range(1, m), k):
            edges = (0, *taus, m)
            total = sum(cache.segment_cost(lo, hi) for lo, hi in zip(edges, edges[1:]))
            total += gamma * (k + 1)
            evaluations += 1
            key = (total, k, taus)
            if best_key is None or key < best_key:
                best_key, best_taus = key, taus
    objective = best_key[0]
    partition = partition_from_changepoints(best_taus, m)
    return PartitionResult(partition, float(objective), np.array([-gamma, objective - gamma]),
                           np.zeros(0, dtype=int), evaluations, gamma)


def dump_bellman(result: PartitionResult, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["v", "bell", "tau"])
        for v, (b, t) in enumerate(zip(result.bell, result.tau)):
            w.writerow([v, repr(float(b)), int(t)])
