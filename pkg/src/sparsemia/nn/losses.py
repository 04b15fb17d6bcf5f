"""Loss functions. Each returns ``(loss, grad)`` with grad w.r.t. its first input."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .functional import log_softmax, softmax

BCE_CLAMP = 1e-7


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-softmax probability of the true class."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError("cross_entropy: label out of range")
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -log_softmax(logits)[rows, labels].mean()
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def binary_cross_entropy(prob: np.ndarray, label: np.ndarray):
    """Mean of -[y log p + (1-y) log(1-p)], with p clamped to [1e-7, 1-1e-7].

    The gradient is zero where the clamp is active.
    """
    prob = np.asarray(prob, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64).reshape(prob.shape)
    p = np.clip(prob, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(label * np.log(p) + (1.0 - label) * np.log1p(-p)).mean()
    grad = (p - label) / (p * (1.0 - p)) / prob.size
    grad[(prob < BCE_CLAMP) | (prob > 1.0 - BCE_CLAMP)] = 0.0
    return float(max(loss, 0.0)), grad
