"""Training loops: softmax cross-entropy classification and siamese contrastive learning."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .losses import contrastive, cross_entropy
from .network import Network
from .optim import SGDM

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch: int = 16
    epochs: int = 10
    seed: int = 0
    momentum: float = 0.9
    margin: float = 1.0
    # siamese only: mini-batches per epoch (pairs are resampled every batch)
    steps_per_epoch: int = 20


def _apply_step(net: Network, opt: SGDM) -> None:
    pairs = net.trainable()
    params = [layer.params[k] for layer, k in pairs]
    grads = [layer.grads[k] for layer, k in pairs]
    for (layer, k), p in zip(pairs, opt.step(params, grads)):
        layer.params[k] = p


def train_classifier(net: Network, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                     n_classes: int | None = None) -> list[float]:
    """Train ``net`` (adding a softmax head if it has none) with SGDM on labelled inputs.

    Returns the mean training loss of every epoch. The network is left in eval mode.
    """
    y = np.asarray(y, dtype=int)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("training set must contain at least two classes")
    n_classes = n_classes or int(y.max()) + 1
    if not net.n_classes:
        net.add_head(n_classes)
        rng = np.random.default_rng([cfg.seed, 2])
        dense = net.layers[-1]
        limit = np.sqrt(6.0 / dense.n_in)
        dense.params["W"] = rng.uniform(-limit, limit, dense.params["W"].shape).astype(net.dtype)
        dense.params["b"] = np.zeros(dense.n_out, dtype=net.dtype)
    if cfg.epochs <= 0:
        return []
    net.fit_input_normalization(x)
    net.reseed(cfg.seed)
    net.mode = "train"
    opt = SGDM(cfg.lr, cfg.momentum)
    order_rng = np.random.default_rng([cfg.seed, 3])
    history = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(x))
        losses = []
        for start in range(0, len(order), cfg.batch):
            idx = order[start:start + cfg.batch]
            if len(idx) < 2:
                continue
            logits = net.forward(x[idx], train=True)
            loss, dlogits = cross_entropy(logits, y[idx])
            net.backward(dlogits.astype(net.dtype))
            _apply_step(net, opt)
            losses.append(loss * len(idx))
        history.append(float(np.sum(losses) / len(order)))
        log.debug("ce epoch %d loss %.5f", epoch, history[-1])
    net.mode = "eval"
    return history


class PairSampler:
    """Draws balanced siamese pairs from labelled frames.

    Positive pairs join two frames of the same subject from different
    sessions; negative pairs join frames of two different subjects. When
    ``groups`` is given (e.g. the activity of each frame), both frames of a
    pair always come from the same group.
    """

    def __init__(self, x: np.ndarray, subjects, sessions, groups=None) -> None:
        self.x = np.asarray(x)
        self.subjects = np.asarray(subjects)
        self.sessions = np.asarray(sessions)
        self.groups = np.zeros(len(self.subjects), int) if groups is None else np.asarray(groups)
        if not len(self.subjects) == len(self.sessions) == len(self.groups) == len(self.x):
            raise ValueError("frames, subjects, sessions and groups must have equal lengths")
        index: dict = {}
        for i, key in enumerate(zip(self.groups.tolist(), self.subjects.tolist(),
                                    self.sessions.tolist())):
            index.setdefault(key, []).append(i)
        self._cells = {k: np.array(v) for k, v in index.items()}
        # (group, subject) -> sessions present, for subjects usable in positive pairs
        sessions_of: dict = {}
        for g, s, ss in self._cells:
            sessions_of.setdefault((g, s), []).append(ss)
        self._positive = sorted((k, tuple(sorted(v))) for k, v in sessions_of.items() if len(v) >= 2)
        self._by_group = {}
        for g in sorted(set(self.groups.tolist())):
            idx = np.flatnonzero(self.groups == g)
            if len(set(self.subjects[idx].tolist())) >= 2:
                self._by_group[g] = idx
        self._negative_groups = sorted(self._by_group)
        self.all_subjects = sorted(set(self.subjects.tolist()))

    def sample(self, rng: np.random.Generator, n_pos: int, n_neg: int):
        if n_pos and not self._positive:
            raise ValueError("no subject has frames from two sessions: cannot form positive pairs")
        if n_neg and not self._negative_groups:
            raise ValueError("fewer than two subjects: cannot form negative pairs")
        left, right = [], []
        for _ in range(n_pos):
            (g, s), sess = self._positive[rng.integers(len(self._positive))]
            a, b = rng.choice(len(sess), size=2, replace=False)
            left.append(rng.choice(self._cells[(g, s, sess[a])]))
            right.append(rng.choice(self._cells[(g, s, sess[b])]))
        for _ in range(n_neg):
            idx = self._by_group[self._negative_groups[rng.integers(len(self._negative_groups))]]
            i = idx[rng.integers(len(idx))]
            while True:
                j = idx[rng.integers(len(idx))]
                if self.subjects[j] != self.subjects[i]:
                    break
            left.append(i)
            right.append(j)
        same = np.r_[np.ones(n_pos, bool), np.zeros(n_neg, bool)]
        return self.x[left], self.x[right], same


def _match_margin(net: Network, sampler: PairSampler, rng: np.random.Generator,
                  margin: float, n_pairs: int = 64) -> None:
    """Rescale the last trunk convolution so initial negative-pair distances sit near the margin."""
    last = [layer for layer in net.layers[: net.n_embed] if "W" in layer.params][-1]
    x1, x2, _ = sampler.sample(rng, 0, n_pairs)
    h = net.forward(np.concatenate([x1, x2]), train=False, upto=net.n_embed).reshape(2 * n_pairs, -1)
    d = np.median(np.linalg.norm(h[:n_pairs] - h[n_pairs:], axis=1))
    if d > 0:
        last.params["W"] = (last.params["W"] * (margin / d)).astype(net.dtype)
        last.params["b"] = (last.params["b"] * (margin / d)).astype(net.dtype)


def train_siamese(net: Network, sampler: PairSampler, cfg: TrainConfig) -> list[float]:
    """Contrastive training of one weight-tied network; both twins are ``net`` itself.

    Every mini-batch holds ``cfg.batch`` pairs, half positive and half negative.
    Returns per-epoch mean loss; the network is left in eval mode.
    """
    if cfg.epochs <= 0:
        return []
    net.fit_input_normalization(sampler.x)
    net.reseed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 4])
    _match_margin(net, sampler, rng, cfg.margin)
    net.mode = "train"
    opt = SGDM(cfg.lr, cfg.momentum)
    n_pos = cfg.batch // 2
    history = []
    for epoch in range(cfg.epochs):
        losses = []
        for _ in range(cfg.steps_per_epoch):
            x1, x2, same = sampler.sample(rng, n_pos, cfg.batch - n_pos)
            # one forward over both halves: the twins share every parameter array
            h = net.forward(np.concatenate([x1, x2]), train=True, upto=net.n_embed)
            emb = h.reshape(len(h), -1)
            e1, e2 = emb[: len(x1)], emb[len(x1):]
            loss, g1, g2 = contrastive(e1, e2, same, cfg.margin)
            grad = np.concatenate([g1, g2]).reshape(h.shape).astype(net.dtype)
            net.backward(grad, upto=net.n_embed)
            _apply_step(net, opt)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.debug("siamese epoch %d loss %.5f", epoch, history[-1])
    net.mode = "eval"
    return history
