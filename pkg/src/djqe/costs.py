"""Lazily computed, memoized interval costs for one training fold."""
from __future__ import annotations

import csv
import hashlib
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import Dataset, Interval, MlpSpec, ValidationError, grid_index
from .regressor import FittedModel, fit_batch, zero_model

# cap on models trained together; bounds the (k, n, width) activations
MAX_BATCH = 64


@dataclass(frozen=True)
class CostEntry:
    cost: float
    n_samples: int
    model: FittedModel


def interval_seed(seed: int, mask: np.ndarray) -> int:
    """Initialization seed derived from the selected rows, not the interval bounds.

    Intervals that select the same samples therefore get the same model and cost.
    """
    digest = hashlib.sha256(np.packbits(np.asarray(mask, dtype=bool)).tobytes()).digest()
    return int(np.random.SeedSequence([seed, int.from_bytes(digest[:8], "little")])
               .generate_state(1)[0])


class CostCache:
    """Per-fold map ``(lo, hi) -> CostEntry``.

    The cost of an interval is the fitted model's squared error summed over
    the fold's samples whose action falls in the interval, divided by the
    fold size. Entries are computed on first request and never change.
    Intervals holding no samples cost 0 and carry the zero model.

    Parameters
    ----------
    dataset : Dataset
    rows : array of int
        Training-fold row indices into ``dataset``.
    m : int
        Grid resolution.
    spec : MlpSpec
    seed : int
    clamp : float, optional
        Output bound for every interval model; defaults to ``2 * max|Y|``
        over the fold.
    """

    def __init__(self, dataset: Dataset, rows, m: int, spec: MlpSpec, seed: int = 0,
                 clamp: Optional[float] = None):
        rows = np.asarray(rows, dtype=int)
        if rows.size == 0:
            raise ValidationError("training rows must be non-empty")
        if m < 1:
            raise ValidationError("grid resolution must be positive")
        self.dataset = dataset
        self.rows = rows
        self.m = m
        self.spec = spec
        self.seed = seed
        self.features = dataset.features[rows]
        self.rewards = dataset.rewards[rows]
        self.cells = grid_index(dataset.actions[rows], m)
        if clamp is None:
            clamp = 2.0 * float(np.max(np.abs(self.rewards)))
        self.clamp = max(clamp, np.finfo(float).tiny)
        self._entries: dict = {}
        self._lock = threading.Lock()
        self.n_fits = 0

    def __len__(self):
        return len(self._entries)

    def mask(self, lo: int, hi: int) -> np.ndarray:
        return (self.cells >= lo) & (self.cells < hi)

    def _key(self, iv) -> tuple:
        if isinstance(iv, Interval):
            if iv.m != self.m:
                raise ValidationError(f"interval grid {iv.m} does not match cache grid {self.m}")
            return iv.lo, iv.hi
        lo, hi = iv
        Interval(lo, hi, self.m)
        return int(lo), int(hi)

    def prefetch(self, intervals: Iterable) -> None:
        """Compute every missing entry among ``intervals`` in batched fits."""
        keys = list(dict.fromkeys(self._key(iv) for iv in intervals))
        with self._lock:
            missing = [k for k in keys if k not in self._entries]
        if not missing:
            return
        computed = {}
        to_fit = []
        for lo, hi in missing:
            mask = self.mask(lo, hi)
            if not mask.any():
                computed[(lo, hi)] = CostEntry(0.0, 0, zero_model())
            else:
                to_fit.append(((lo, hi), mask))
        total = len(self.rows)
        for start in range(0, len(to_fit), MAX_BATCH):
            chunk = to_fit[start:start + MAX_BATCH]
            masks = np.stack([mk for _, mk in chunk])
            seeds = [interval_seed(self.seed, mk) for _, mk in chunk]
            models = fit_batch(self.features, self.rewards, masks, self.spec, seeds,
                               clamp=self.clamp)
            for ((lo, hi), mk), model in zip(chunk, models):
                resid = model.predict_many(self.features[mk]) - self.rewards[mk]
                computed[(lo, hi)] = CostEntry(float(resid @ resid) / total, int(mk.sum()), model)
        with self._lock:
            for key, entry in computed.items():
                if key not in self._entries:
                    self._entries[key] = entry
                    if entry.n_samples:
                        self.n_fits += 1

    def entry(self, iv) -> CostEntry:
        key = self._key(iv)
        found = self._entries.get(key)
        if found is None:
            self.prefetch([key])
            found = self._entries[key]
        return found

    def cost(self, iv) -> CostEntry:
        return self.entry(iv)

    def model_for(self, iv) -> FittedModel:
        return self.entry(iv).model

    def segment_cost(self, lo: int, hi: int) -> float:
        """Cost of ``[lo/m, hi/m)``; the empty segment ``lo == hi`` costs 0."""
        if lo == hi:
            return 0.0
        return self.entry((lo, hi)).cost

    def prefetch_segments(self, pairs) -> None:
        self.prefetch([(lo, hi) for lo, hi in pairs if lo != hi])

    def precompute_all(self) -> None:
        """Eagerly fill all ``m(m+1)/2`` entries."""
        self.prefetch([(lo, hi) for hi in range(1, self.m + 1) for lo in range(hi)])

    def items(self):
        with self._lock:
            return sorted(self._entries.items())

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lo", "hi", "cost", "n_samples"])
            for (lo, hi), e in self.items():
                w.writerow([lo, hi, repr(e.cost), e.n_samples])
