"""Feature-only regressors for interval outcome and propensity models.

A small multilayer perceptron with ``tanh`` hidden units, trained by
full-batch Adam on the masked squared loss. Optional early stopping on a
seeded holdout of each mask's rows is controlled by
``MlpSpec.validation_fraction`` and is off by default. Many masks over the same
feature matrix can be trained together (:func:`fit_batch`); each model
only ever sees its own mask weights, so the result for a mask does not
depend on what else is in the batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import MlpSpec, ValidationError


# below this many rows a held-out check is meaningless and the constant mean is kept
MIN_HOLDOUT_ROWS = 10


class EmptyIntervalError(ValueError):
    """A fit or loss was requested on an empty mask."""


class TrainingDivergedError(ArithmeticError):
    """Training produced non-finite values and the constant fallback failed too."""


@dataclass(frozen=True)
class FittedModel:
    """Immutable fitted regressor.

    For ``kind == "mlp"`` the network acts on standardized inputs
    ``(x - x_shift) / x_scale`` and its raw output is mapped back through
    ``y_shift + y_scale * out``; predictions are clamped to ``[-clamp, clamp]``.
    """

    kind: str
    clamp: float
    value: float = 0.0
    weights: tuple = ()
    biases: tuple = ()
    x_shift: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None
    y_shift: float = 0.0
    y_scale: float = 1.0

    @property
    def n_inputs(self) -> Optional[int]:
        return None if self.kind == "constant_mean" else self.weights[0].shape[0]

    def predict_many(self, features) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        if self.kind == "constant_mean":
            return np.full(x.shape[0], min(max(self.value, -self.clamp), self.clamp))
        if x.shape[1] != self.n_inputs:
            raise ValidationError(f"expected {self.n_inputs} features, got {x.shape[1]}")
        h = (x - self.x_shift) / self.x_scale
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
        out = (h @ self.weights[-1] + self.biases[-1])[:, 0]
        return np.clip(self.y_shift + self.y_scale * out, -self.clamp, self.clamp)

    def to_json(self) -> str:
        """Self-describing dump for debugging; not meant to be loaded back."""
        doc = {"kind": self.kind, "clamp": self.clamp}
        if self.kind == "constant_mean":
            doc["value"] = self.value
        else:
            doc.update(
                shapes=[list(w.shape) for w in self.weights],
                weights=[w.tolist() for w in self.weights],
                biases=[b.tolist() for b in self.biases],
                x_shift=self.x_shift.tolist(), x_scale=self.x_scale.tolist(),
                y_shift=self.y_shift, y_scale=self.y_scale)
        return json.dumps(doc)


def constant_model(value: float, clamp: float = 1.0) -> FittedModel:
    clamp = max(float(clamp), abs(float(value)), np.finfo(float).tiny)
    return FittedModel(kind="constant_mean", clamp=clamp, value=float(value))


def zero_model() -> FittedModel:
    return constant_model(0.0)


def predict(model: FittedModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("predict expects a single feature vector")
    if model.n_inputs is not None and x.shape[0] != model.n_inputs:
        raise ValidationError(f"expected {model.n_inputs} features, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("features must be finite")
    return float(model.predict_many(x[None, :])[0])


def masked_mse(model: FittedModel, features, targets, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyIntervalError("mask selects no rows")
    resid = model.predict_many(np.asarray(features)[mask]) - np.asarray(targets, dtype=float)[mask]
    return float(np.mean(resid ** 2))


def fit(features, targets, mask, spec: MlpSpec, seed: int = 0) -> FittedModel:
    """Fit one model minimizing the squared loss over rows where ``mask`` is true."""
    return fit_batch(features, targets, np.asarray(mask, dtype=bool)[None, :], spec, [seed])[0]


def _init_params(fan: Sequence[int], seed: int):
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(fan, fan[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def fit_batch(features, targets, masks, spec: MlpSpec, seeds: Sequence[int],
              clamp: Optional[float] = None) -> list:
    """Fit one model per row of ``masks`` on a shared feature matrix.

    Parameters
    ----------
    features : array, shape (n, p)
    targets : array, shape (n,)
    masks : bool array, shape (k, n)
    spec : MlpSpec
    seeds : sequence of int, length k
        Initialization seed of each model.
    clamp : float, optional
        Output bound; overrides ``spec.output_clamp``. Defaults to
        ``2 * max|y|`` over the union of masked rows.

    Returns
    -------
    list of FittedModel
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    k, n = masks.shape
    if x.ndim != 2 or x.shape[0] != n or y.shape != (n,):
        raise ValidationError("features, targets and masks disagree in shape")
    if len(seeds) != k:
        raise ValidationError("need one seed per mask")
    counts = masks.sum(axis=1)
    if np.any(counts == 0):
        raise EmptyIntervalError("mask selects no rows")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("inputs must be finite")
    if clamp is None:
        clamp = spec.output_clamp
    if clamp is None:
        clamp = 2.0 * float(np.max(np.abs(y[masks.any(axis=0)])))
    clamp = max(float(clamp), np.finfo(float).tiny)

    wts = masks / counts[:, None]
    # row-wise products keep each model's statistics independent of the batch
    y_mean = np.array([w @ y for w in wts])
    const_mse = np.array([np.mean((y[masks[j]] - y_mean[j]) ** 2) for j in range(k)])
    if not np.all(np.isfinite(const_mse)):
        raise TrainingDivergedError("constant fit is not finite")

    models = [constant_model(y_mean[j], clamp) for j in range(k)]
    scale_ref = max(float(np.max(np.abs(y_mean))), 1.0)
    min_rows = MIN_HOLDOUT_ROWS if spec.validation_fraction > 0 else 2
    train = np.flatnonzero((const_mse > 1e-24 * scale_ref ** 2) & (counts >= min_rows))
    if train.size == 0 or spec.epochs == 0:
        return models

    fit_masks, val_masks = _holdout_split(masks[train], [seeds[j] for j in train],
                                          spec.validation_fraction)
    fit_w = fit_masks / fit_masks.sum(axis=1, keepdims=True)
    x_shift = np.array([w @ x for w in fit_w])
    x_var = np.maximum(np.array([w @ (x * x) for w in fit_w]) - x_shift ** 2, 0.0)
    x_scale = np.where(x_var > 1e-24, np.sqrt(x_var), 1.0)
    y_shift = np.array([w @ y for w in fit_w])
    y_var = np.maximum(np.array([w @ (y * y) for w in fit_w]) - y_shift ** 2, 0.0)
    y_scale = np.where(y_var > 1e-24, np.sqrt(y_var), 1.0)
    xs = (x[None, :, :] - x_shift[:, None, :]) / x_scale[:, None, :]
    ys = ((y[None, :] - y_shift[:, None]) / y_scale[:, None])[:, :, None]
    sw = fit_w[:, :, None]
    val_counts = val_masks.sum(axis=1)
    has_val = val_counts > 0
    val_w = (val_masks / np.maximum(val_counts, 1)[:, None])[:, :, None]

    fan = [x.shape[1]] + [spec.hidden_width] * spec.hidden_layers + [1]
    per_model = [_init_params(fan, seeds[j]) for j in train]
    weights = [np.stack([pm[0][l] for pm in per_model]) for l in range(len(fan) - 1)]
    biases = [np.stack([pm[1][l] for pm in per_model])[:, None, :] for l in range(len(fan) - 1)]
    params = weights + biases
    best = [p.copy() for p in params]
    best_val = np.full(len(train), np.inf)
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    lr, wd = spec.learning_rate, spec.weight_decay
    n_layers = len(weights)
    full_batch = spec.batch_size is None or spec.batch_size >= n
    order_rng = np.random.default_rng(n)

    def track(out):
        # keep, per model, the parameters with the lowest held-out loss seen so far
        loss = np.where(has_val, ((out - ys) ** 2 * val_w).sum(axis=(1, 2)), 0.0)
        better = np.isfinite(loss) & (loss < best_val)
        if better.any():
            best_val[better] = loss[better]
            for b, p in zip(best, params):
                b[better] = p[better]

    with np.errstate(over="ignore", invalid="ignore"):
        step = 0
        for _ in range(spec.epochs):
            if full_batch:
                epoch_batches = [None]
            else:
                track(_forward(xs, weights, biases)[-1])
                perm = order_rng.permutation(n)
                epoch_batches = [perm[i:i + spec.batch_size] for i in range(0, n, spec.batch_size)]
            for rows in epoch_batches:
                if rows is None:
                    xb, yb, wb = xs, ys, sw
                else:
                    xb, yb = xs[:, rows], ys[:, rows]
                    wb = sw[:, rows] * (n / len(rows))
                acts = _forward(xb, weights, biases)
                out = acts.pop()
                if rows is None:
                    track(out)
                delta = 2.0 * wb * (out - yb)
                grads_w = [None] * n_layers
                grads_b = [None] * n_layers
                for l in range(n_layers - 1, -1, -1):
                    grads_w[l] = np.matmul(acts[l].transpose(0, 2, 1), delta) + 2.0 * wd * weights[l]
                    grads_b[l] = delta.sum(axis=1, keepdims=True)
                    if l > 0:
                        delta = np.matmul(delta, weights[l].transpose(0, 2, 1)) * (1.0 - acts[l] ** 2)
                step += 1
                c1 = 1.0 - beta1 ** step
                c2 = 1.0 - beta2 ** step
                for p, g, a, b in zip(params, grads_w + grads_b, m1, m2):
                    a *= beta1
                    a += (1.0 - beta1) * g
                    b *= beta2
                    b += (1.0 - beta2) * g * g
                    p -= lr * (a / c1) / (np.sqrt(b / c2) + eps)
        track(_forward(xs, weights, biases)[-1])

    final = [np.where(has_val.reshape((-1,) + (1,) * (b.ndim - 1)), b, p)
             for b, p in zip(best, params)]
    weights, biases = final[:n_layers], final[n_layers:]
    for idx, j in enumerate(train):
        w_j = tuple(w[idx].copy() for w in weights)
        b_j = tuple(b[idx, 0].copy() for b in biases)
        if not all(np.all(np.isfinite(a)) for a in w_j + b_j):
            continue
        candidate = FittedModel(kind="mlp", clamp=clamp, weights=w_j, biases=b_j,
                                x_shift=x_shift[idx].copy(), x_scale=x_scale[idx].copy(),
                                y_shift=float(y_shift[idx]), y_scale=float(y_scale[idx]))
        for a in (*w_j, *b_j, candidate.x_shift, candidate.x_scale):
            a.setflags(write=False)
        if has_val[idx]:
            held = val_masks[idx]
            const_val = np.mean((y[held] - y_shift[idx]) ** 2)
            if not masked_mse(candidate, x, y, held) < const_val:
                continue
        mse = masked_mse(candidate, x, y, masks[j])
        if np.isfinite(mse) and mse <= const_mse[j]:
            models[j] = candidate
    return models


def _forward(xs, weights, biases) -> list:
    acts = [xs]
    h = xs
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(np.matmul(h, w) + b)
        acts.append(h)
    acts.append(np.matmul(h, weights[-1]) + biases[-1])
    return acts


def _holdout_split(masks, seeds, fraction: float):
    """Per-model seeded split of each mask into fitting and held-out rows.

    With ``fraction == 0`` every row is kept for fitting.
    """
    fit_masks = masks.copy()
    val_masks = np.zeros_like(masks)
    if fraction <= 0:
        return fit_masks, val_masks
    for j, (mask, seed) in enumerate(zip(masks, seeds)):
        rows = np.flatnonzero(mask)
        n_val = int(round(fraction * rows.size))
        if n_val < 1:
            continue
        held = np.random.default_rng([seed, 1]).permutation(rows)[:n_val]
        fit_masks[j, held] = False
        val_masks[j, held] = True
    return fit_masks, val_masks
