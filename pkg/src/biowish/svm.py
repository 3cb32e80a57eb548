"""Binary soft-margin SVM with an RBF kernel, trained by SMO."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConvergenceError(RuntimeError):
    pass


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # standardized, (n_sv, d)
    dual_coef: np.ndarray        # alpha_i * y_i, (n_sv,)
    bias: float
    gamma: float
    C: float
    mean: np.ndarray             # per-dimension standardization
    scale: np.ndarray
    n_iter: int = 0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ValueError(f"probe dimension {x.shape[1]} does not match model dimension {self.dim}")
        return (x - self.mean) / self.scale

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        z = self.standardize(x)
        return rbf_kernel(z, self.support_vectors, self.gamma) @ self.dual_coef + self.bias


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    """Dual objective being maximized: sum(alpha) - 1/2 (alpha*y)^T K (alpha*y)."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def _snap(a: float, C: float) -> float:
    """Clip to [0, C], snapping round-off residue onto the bounds.

    A value like 1e-17 left by cancellation would otherwise count as a free
    variable and could be selected forever without moving.
    """
    eps = 1e-12 * C
    if a < eps:
        return 0.0
    if a > C - eps:
        return C
    return a


def smo(K: np.ndarray, y: np.ndarray, C: float = 1.0, tol: float = 1e-3,
        max_iter: int = 100_000) -> tuple[np.ndarray, float, int]:
    """Solve the SVM dual for a precomputed kernel matrix.

    Working-set selection takes the maximal violating pair. Stops once the
    violation gap drops below ``tol``; returns ``(alpha, bias, iterations)``.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a^T Q a - e^T a
    diag = np.diag(K)
    for it in range(max_iter):
        minus_yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        i = int(np.argmax(np.where(up, minus_yg, -np.inf)))
        j = int(np.argmin(np.where(low, minus_yg, np.inf)))
        gap = minus_yg[i] - minus_yg[j]
        if gap < tol:
            break
        eta = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        # errors without bias: E_k = f(x_k) - y_k = y_k * grad_k
        e_i, e_j = y[i] * grad[i], y[j] * grad[j]
        if y[i] != y[j]:
            lo, hi = max(0.0, alpha[j] - alpha[i]), min(C, C + alpha[j] - alpha[i])
        else:
            lo, hi = max(0.0, alpha[i] + alpha[j] - C), min(C, alpha[i] + alpha[j])
        aj = min(max(alpha[j] + y[j] * (e_i - e_j) / eta, lo), hi)
        ai = alpha[i] + y[i] * y[j] * (alpha[j] - aj)
        ai, aj = _snap(ai, C), _snap(aj, C)
        d_i, d_j = ai - alpha[i], aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        grad += y * (y[i] * K[:, i] * d_i + y[j] * K[:, j] * d_j)
    else:
        raise ConvergenceError(f"SMO did not reach tolerance {tol} within {max_iter} iterations")
    minus_yg = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(minus_yg[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        bias = 0.5 * (minus_yg[up].max() + minus_yg[low].min())
    return alpha, bias, it


def train_rbf_svm(positives: np.ndarray, negatives: np.ndarray, C: float = 1.0,
                  gamma: float | None = None, tol: float = 1e-3,
                  max_iter: int = 100_000) -> SvmModel:
    """User-vs-others RBF SVM over flattened feature vectors.

    Inputs are standardized per dimension with training statistics. The
    default ``gamma`` is ``1 / (d * mean per-dimension variance)`` of the
    standardized data.
    """
    pos = np.asarray(positives, dtype=np.float64).reshape(len(positives), -1)
    neg = np.asarray(negatives, dtype=np.float64).reshape(len(negatives), -1)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes need at least one sample")
    if pos.shape[1] != neg.shape[1]:
        raise ValueError("positive and negative samples differ in dimension")
    x = np.concatenate([pos, neg])
    y = np.r_[np.ones(len(pos)), -np.ones(len(neg))]
    if {row.tobytes() for row in pos} == {row.tobytes() for row in neg}:
        raise ConvergenceError("positive and negative classes are identical: no separating surface")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    z = (x - mean) / scale
    if gamma is None:
        var = float(z.var(axis=0).mean())
        gamma = 1.0 / (z.shape[1] * (var if var > 0 else 1.0))
    K = rbf_kernel(z, z, gamma)
    alpha, bias, n_iter = smo(K, y, C, tol, max_iter)
    sv = alpha > 0
    return SvmModel(z[sv], (alpha * y)[sv], bias, float(gamma), float(C), mean, scale, n_iter)


def svm_dissimilarity(model: SvmModel, probe: np.ndarray) -> np.ndarray:
    """Negated decision value: lower means more likely the enrolled user."""
    return -model.decision_function(probe)
