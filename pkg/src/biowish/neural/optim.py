from __future__ import annotations

import numpy as np


class SGDM:
    """Stochastic gradient descent with momentum.

    ``v <- momentum * v - lr * g``; ``p <- p + v``. Velocities are created
    lazily and keyed by position, so the parameter list order must be stable.
    """

    def __init__(self, lr: float, momentum: float = 0.9) -> None:
        self.lr = lr
        self.momentum = momentum
        self.velocity: list[np.ndarray] = []

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if len(params) != len(grads):
            raise ValueError("parameter and gradient lists differ in length")
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in params]
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape or p.shape != self.velocity[i].shape:
                raise ValueError(f"shape mismatch at parameter {i}: {p.shape} vs {g.shape}")
            v = self.momentum * self.velocity[i] - self.lr * g
            self.velocity[i] = v
            out.append(p + v)
        return out
