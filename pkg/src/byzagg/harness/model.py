"""Multinomial logistic regression on flat parameter vectors.

Parameters are a ``(classes, features + 1)`` matrix, bias in the last
column, flattened row-major into a vector of length ``classes * (features + 1)``.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset


def model_dim(features: int, classes: int) -> int:
    return classes * (features + 1)


def _unflatten(w, features: int, classes: int) -> np.ndarray:
    return np.asarray(w, dtype=np.float64).reshape(classes, features + 1)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _probs(W: np.ndarray, xa: np.ndarray) -> np.ndarray:
    logits = xa @ W.T
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def logreg_loss(w, data: Dataset) -> float:
    """Mean softmax cross-entropy."""
    W = _unflatten(w, data.x.shape[1], data.num_classes)
    xa = _augment(data.x)
    logits = xa @ W.T
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(data.y)), data.y]))


def logreg_gradient(w, data: Dataset) -> np.ndarray:
    """Gradient of :func:`logreg_loss`, flattened like ``w``."""
    W = _unflatten(w, data.x.shape[1], data.num_classes)
    xa = _augment(data.x)
    p = _probs(W, xa)
    p[np.arange(len(data.y)), data.y] -= 1.0
    return (p.T @ xa / len(data.y)).ravel()


def predict(w, x: np.ndarray, classes: int) -> np.ndarray:
    W = _unflatten(w, x.shape[1], classes)
    return np.argmax(_augment(x) @ W.T, axis=1)


def accuracy(w, data: Dataset) -> float:
    return float(np.mean(predict(w, data.x, data.num_classes) == data.y))
