"""Loss functions returning ``(loss, gradient)`` pairs; losses are batch means."""
from __future__ import annotations

import numpy as np


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy with log-sum-exp stabilization.

    Returns the mean loss and its gradient with respect to ``logits``.
    """
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def contrastive(e1: np.ndarray, e2: np.ndarray, same: np.ndarray,
                margin: float = 1.0) -> tuple[float, np.ndarray, np.ndarray]:
    """Contrastive loss: d**2 for same-subject pairs, max(0, margin - d)**2 otherwise.

    Returns the mean loss and gradients with respect to both embeddings. At
    ``d == 0`` on a negative pair the direction is undefined and the gradient
    is taken as zero.
    """
    e1 = np.atleast_2d(e1)
    e2 = np.atleast_2d(e2)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    same = np.asarray(same, dtype=bool).reshape(-1)
    n = e1.shape[0]
    diff = e1 - e2
    d = np.sqrt((diff * diff).sum(axis=1))
    hinge = np.maximum(0.0, margin - d)
    per_pair = np.where(same, d * d, hinge * hinge)
    safe_d = np.where(d > 0, d, 1.0)
    coef = np.where(same, 2.0, np.where(d > 0, -2.0 * hinge / safe_d, 0.0))
    g1 = coef[:, None] * diff / n
    return float(per_pair.mean()), g1, -g1
