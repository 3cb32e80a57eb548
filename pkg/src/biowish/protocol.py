"""Cross-validated evaluation: verification EER tables, probe-duration curves,
activity recognition and the two-stage activity-then-verify pipeline.

Every iteration draws a new split of the subjects: ``train_subjects`` of them
train the shared models (siamese networks, activity classifiers) and serve as
negatives and z-norm cohort; each remaining subject is enrolled in turn and
attacked by the other held-out subjects.
"""
from __future__ import annotations

import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from . import features
from .activity import ConfusionMatrix, confusion, train_activity_classifier, window_labels
from .config import RunConfig
from .neural import (WISHNET_T, WISHNET_TF, PairSampler, TrainConfig, build_network, train_classifier,
                     train_siamese)
from .signals import ACTIVITIES, FramingConfig, frame_count
from .svm import train_rbf_svm
from .verification import (ARCH_OF, FUSED, Calibration, EnrollmentGallery, RepresentationTag,
                           compute_roc_eer, network_input, score_vectors, sliding_mean)

log = logging.getLogger(__name__)

FUSED_REP = "FUSED"
BOTH = "SCG+GCG"
ROUTINGS = ("known", "two_stage", "forced_wrong")


class ProtocolError(ValueError):
    pass


def derived_seed(*parts) -> int:
    return zlib.crc32("/".join(str(p) for p in parts).encode())


def split_subjects(subjects, n_train: int, seed: int, iteration: int) -> tuple[list, list]:
    rng = np.random.default_rng([seed, 7, iteration])
    perm = rng.permutation(len(subjects))
    train = sorted(subjects[i] for i in perm[:n_train])
    test = sorted(subjects[i] for i in perm[n_train:])
    return train, test


def enrollment_start(n_frames: int, n_enroll: int, seed: int, iteration: int, user: str,
                     activity: str, position: str) -> int:
    """First frame of the seeded contiguous enrolment span inside session 1."""
    if n_enroll > n_frames:
        raise ProtocolError(f"session 1 holds {n_frames} frames, enrolment needs {n_enroll}")
    rng = np.random.default_rng([seed, 11, iteration, derived_seed(user, activity, position)])
    return int(rng.integers(0, n_frames - n_enroll + 1))


@dataclass
class IterationResult:
    # (signal, position, activity, representation) -> per-user EERs / trial counts
    user_eer: dict = field(default_factory=dict)
    trials: dict = field(default_factory=dict)
    # same key -> (genuine z-scores, impostor z-scores), pooled for ROC output
    roc_scores: dict = field(default_factory=dict)
    # (position, activity, duration_s) -> per-user EERs of fused SCG+GCG multi-frame scores
    duration_eer: dict = field(default_factory=dict)
    # (position, signal_set, duration_s) -> ConfusionMatrix
    activity_confusion: dict = field(default_factory=dict)
    # (position, routing) -> per-(user, activity) EERs; (position, "accuracy") -> [correct, total]
    two_stage: dict = field(default_factory=dict)

    def add(self, store: dict, key, value) -> None:
        store.setdefault(key, []).append(value)


@dataclass
class ProtocolResult:
    cfg: RunConfig
    iterations: list[IterationResult]

    def _merged(self, name: str) -> dict:
        out: dict = {}
        for it in self.iterations:
            for key, values in getattr(it, name).items():
                out.setdefault(key, []).extend(values)
        return out

    def eer_table(self) -> dict:
        """(signal, position, activity, representation) -> (mean %, std %, n_trials)."""
        eers, trials = self._merged("user_eer"), self._merged("trials")
        return {k: (100 * float(np.mean(v)), 100 * float(np.std(v)), int(np.sum(trials[k])))
                for k, v in sorted(eers.items())}

    def duration_table(self) -> dict:
        """(position, activity, duration_s) -> (mean %, std %)."""
        return {k: (100 * float(np.mean(v)), 100 * float(np.std(v)))
                for k, v in sorted(self._merged("duration_eer").items())}

    def confusion_matrices(self) -> dict:
        out: dict = {}
        for it in self.iterations:
            for key, cm in it.activity_confusion.items():
                out[key] = cm if key not in out else out[key] + cm
        return dict(sorted(out.items()))

    def two_stage_table(self) -> dict:
        """(position, routing) -> (mean EER %, std %); (position, 'accuracy') -> activity accuracy."""
        merged: dict = {}
        for it in self.iterations:
            for key, values in it.two_stage.items():
                merged.setdefault(key, []).extend(values)
        out = {}
        for (pos, what), values in sorted(merged.items()):
            if what == "accuracy":
                correct, total = np.sum(values, axis=0)
                out[(pos, what)] = float(correct / total) if total else float("nan")
            else:
                out[(pos, what)] = (100 * float(np.mean(values)), 100 * float(np.std(values)))
        return out

    def roc(self, key) -> object:
        g, i = [], []
        for it in self.iterations:
            for gg, ii in it.roc_scores.get(key, []):
                g.append(gg)
                i.append(ii)
        return compute_roc_eer(np.concatenate(g), np.concatenate(i))

    def roc_keys(self) -> list:
        keys = set()
        for it in self.iterations:
            keys.update(it.roc_scores)
        return sorted(keys)


# ---------------------------------------------------------------------------

@dataclass
class _Verifier:
    """One user's gallery under one representation, plus its z-norm calibration."""
    gallery: EnrollmentGallery
    vectors: object  # callable: recording key -> representation vectors
    calibration: Calibration = Calibration()

    def zscores(self, rk) -> np.ndarray:
        return self.calibration.apply(score_vectors(self.vectors(rk), self.gallery))


class Iteration:
    """One cross-validation split and every model trained for it.

    ``train`` overrides the seeded split (the remaining subjects are held out).
    """

    def __init__(self, store, cfg: RunConfig, iteration: int = 0, train=None):
        self.store = store
        self.cfg = cfg
        self.it = iteration
        p = cfg.protocol
        if train is None:
            self.train, self.test = split_subjects(store.subjects, p.train_subjects, cfg.seed, iteration)
        else:
            unknown = set(train) - set(store.subjects)
            if unknown:
                raise ProtocolError(f"unknown training subject(s): {', '.join(sorted(unknown))}")
            self.train = sorted(train)
            self.test = sorted(set(store.subjects) - set(train))
        self.framing = FramingConfig(cfg.framing.frame_len_s, cfg.framing.overlap_fraction,
                                     cfg.framing.rate_hz)
        self.n_enroll = frame_count(p.enroll_s, self.framing)
        self.dtype = np.dtype(cfg.network.dtype)
        self.result = IterationResult()
        self._vec_cache: dict = {}

    # -- helpers ------------------------------------------------------------
    def frames(self, pos, sig, rk):
        subject, session, activity = rk
        return self.store.frames(subject, session, activity, pos, sig)

    def seed(self, *parts) -> int:
        return derived_seed(self.cfg.seed, self.it, *parts)

    def new_net(self, arch: str, *seed_parts):
        width = self.cfg.network.t_width if arch == WISHNET_T else self.cfg.network.tf_width
        return build_network(arch, width=width, dropout=self.cfg.network.dropout,
                             seed=self.seed("init", arch, *seed_parts), dtype=self.dtype)

    def net_input(self, arch, phis):
        return network_input(arch, phis).astype(self.dtype, copy=False)

    def vectors(self, model_key, model, rep, pos, sig, rk, rows=None):
        """Cached representation vectors of one recording (optionally a row slice)."""
        if rep == "SVM":  # large and cheap to recompute: not cached
            phis = self.frames(pos, sig, rk)
            phis = phis if rows is None else phis[rows]
            return features.stft_tensor(phis).reshape(len(phis), -1)
        key = (model_key, pos, sig, rk)
        if key not in self._vec_cache:
            phis = self.frames(pos, sig, rk)
            if rep == "L2":
                vec = features.avg_psd(phis)
            else:
                vec = model.embed(self.net_input(model.arch, phis))
            self._vec_cache[key] = vec
        vec = self._vec_cache[key]
        return vec if rows is None else vec[rows]

    # -- shared models --------------------------------------------------------
    def train_siamese_net(self, arch, pos, sig):
        c = self.cfg.siamese
        x, subjects, sessions, groups = [], [], [], []
        for a in self.cfg.protocol.activities:
            for s in self.train:
                for sess in (1, 2):
                    f = self.frames(pos, sig, (s, sess, a))[:: c.frame_stride]
                    x.append(f)
                    subjects += [s] * len(f)
                    sessions += [sess] * len(f)
                    groups += [a] * len(f)
        net = self.new_net(arch, "siamese", pos, sig)
        sampler = PairSampler(self.net_input(arch, np.concatenate(x)), subjects, sessions, groups)
        train_siamese(net, sampler, TrainConfig(lr=c.lr, batch=c.batch, epochs=c.epochs,
                                                seed=self.seed("siamese", arch, pos, sig),
                                                momentum=c.momentum, margin=c.margin,
                                                steps_per_epoch=c.steps_per_epoch))
        return net

    def train_activity_model(self, arch, pos, sig):
        c = self.cfg.activity
        by_activity = {a: np.concatenate([self.frames(pos, sig, (s, sess, a))[:: c.frame_stride]
                                          for s in self.train for sess in (1, 2)])
                       for a in ACTIVITIES}
        net = self.new_net(arch, "activity", pos, sig)
        return train_activity_classifier(
            net, by_activity, TrainConfig(lr=c.lr, batch=c.batch, epochs=c.epochs,
                                          seed=self.seed("activity", arch, pos, sig),
                                          momentum=c.momentum), sig, pos)

    # -- per-user models -----------------------------------------------------------
    def enrollment_rows(self, pos, activity, user) -> slice:
        n1 = len(self.frames(pos, self.cfg.protocol.signals[0], (user, 1, activity)))
        start = enrollment_start(n1, self.n_enroll, self.cfg.seed, self.it, user, activity, pos)
        return slice(start, start + self.n_enroll)

    def train_user_svm(self, pos, sig, activity, user, rows: slice):
        stride = self.cfg.svm.negative_stride
        pos_vec = self.vectors("SVM", None, "SVM", pos, sig, (user, 1, activity), rows)
        neg_vec = np.concatenate([self.vectors("SVM", None, "SVM", pos, sig, (s, 1, activity))[::stride]
                                  for s in self.train])
        return train_rbf_svm(pos_vec, neg_vec, C=self.cfg.svm.C, tol=self.cfg.svm.tol)

    def train_user_network(self, rep, pos, sig, activity, user, rows: slice):
        """User-vs-training-subjects classifier on session-1 frames."""
        arch = ARCH_OF[rep]
        c = self.cfg.ce
        pos_x = self.frames(pos, sig, (user, 1, activity))[rows]
        neg_x = np.concatenate([self.frames(pos, sig, (s, 1, activity))[:: c.negative_stride]
                                for s in self.train])
        x = self.net_input(arch, np.concatenate([pos_x, neg_x]))
        y = np.r_[np.ones(len(pos_x), int), np.zeros(len(neg_x), int)]
        net = self.new_net(arch, "ce", rep, pos, sig, activity, user)
        train_classifier(net, x, y, TrainConfig(lr=c.lr, batch=c.batch, epochs=c.epochs,
                                                seed=self.seed("ce", rep, pos, sig, activity, user),
                                                momentum=c.momentum), 2)
        return net

    def build_verifier(self, rep, pos, sig, activity, user, rows: slice, siamese):
        tag = RepresentationTag(rep, sig, pos, activity)
        user_rk = (user, 1, activity)
        if rep == "SVM":
            model_key, model = "SVM", None
            svm = self.train_user_svm(pos, sig, activity, user, rows)
            gallery = EnrollmentGallery(user, tag, svm=svm, K=rows.stop - rows.start)
        else:
            if rep == "L2" or rep.endswith("_C"):
                model_key, model = rep, siamese.get(rep)
            else:
                model_key = ("CE", rep, activity, user)
                model = self.train_user_network(rep, pos, sig, activity, user, rows)
            refs = self.vectors(model_key, model, rep, pos, sig, user_rk, rows)
            gallery = EnrollmentGallery(user, tag, references=refs, K=len(refs), model=model)

        def vectors(rk, _key=model_key, _model=model):
            return self.vectors(_key, _model, rep, pos, sig, rk)

        verifier = _Verifier(gallery, vectors)
        stride = self.cfg.protocol.cohort_stride
        cohort = np.concatenate([score_vectors(vectors((s, 2, activity))[::stride], gallery)
                                 for s in self.train])
        verifier.calibration = Calibration.fit(cohort)
        return verifier

    # -- main loop ----------------------------------------------------------------
    def run(self) -> IterationResult:
        p = self.cfg.protocol
        for pos in p.positions:
            self.run_position(pos)
        return self.result

    def run_position(self, pos):
        p, res = self.cfg.protocol, self.result
        reps = list(p.representations)
        fused_reps = [r for r in FUSED if r in reps]
        siamese = {sig: {} for sig in p.signals}
        for sig in p.signals:
            for rep in reps:
                if rep.endswith("_C"):
                    log.info("iteration %d: siamese %s %s %s", self.it, rep, pos, sig)
                    siamese[sig][rep] = self.train_siamese_net(ARCH_OF[rep], pos, sig)
        activity_models: dict = {}
        if p.evaluate_activity:
            for sig in p.signals:
                for arch in (WISHNET_T, WISHNET_TF):
                    log.info("iteration %d: activity model %s %s %s", self.it, arch, pos, sig)
                    activity_models[(sig, arch)] = self.train_activity_model(arch, pos, sig)

        verifiers: dict = {}  # (user, activity, sig, rep) -> _Verifier
        for activity in p.activities:
            log.info("iteration %d: verification %s %s", self.it, pos, activity)
            for user in self.test:
                rows = self.enrollment_rows(pos, activity, user)
                impostors = [v for v in self.test if v != user]
                fused = {}
                for sig in p.signals:
                    fused_sig = None
                    for rep in reps:
                        ver = self.build_verifier(rep, pos, sig, activity, user, rows, siamese[sig])
                        verifiers[(user, activity, sig, rep)] = ver
                        g = ver.zscores((user, 2, activity))
                        imp = [ver.zscores((v, 2, activity)) for v in impostors]
                        self._record((sig, pos, activity, rep), g, imp)
                        if rep in fused_reps:
                            fused_sig = _add(fused_sig, g, imp)
                    if fused_sig is not None:
                        self._record((sig, pos, activity, FUSED_REP), *fused_sig)
                        fused[sig] = fused_sig
                if fused:
                    both = None
                    for sig in p.signals:
                        both = _add(both, *fused[sig])
                    if len(p.signals) > 1:
                        self._record((BOTH, pos, activity, FUSED_REP), *both)
                    g, imp = both
                    for d in p.probe_durations_s:
                        n = frame_count(d, self.framing)
                        gw = sliding_mean(g, n)
                        iw = np.concatenate([sliding_mean(s, n) for s in imp])
                        res.add(res.duration_eer, (pos, activity, float(d)), compute_roc_eer(gw, iw).eer)
        if p.evaluate_activity:
            probs = self.activity_probabilities(pos, activity_models)
            self.evaluate_activity(pos, probs)
            if set(p.activities) == set(ACTIVITIES) and fused_reps:
                self.evaluate_two_stage(pos, probs, verifiers, fused_reps)

    def _record(self, key, g, imp):
        res = self.result
        imp_all = np.concatenate(imp)
        res.add(res.user_eer, key, compute_roc_eer(g, imp_all).eer)
        res.add(res.trials, key, len(g) + len(imp_all))
        res.add(res.roc_scores, key, (g, imp_all))

    # -- activity recognition ----------------------------------------------------
    def activity_probabilities(self, pos, models) -> dict:
        """(subject, session, activity) -> {(sig, arch): (K, 4) softmax} for held-out subjects."""
        out = {}
        for s in self.test:
            for sess in (1, 2):
                for a in ACTIVITIES:
                    out[(s, sess, a)] = {key: m.probabilities(self.frames(pos, key[0], (s, sess, a)))
                                         for key, m in models.items()}
        return out

    def signal_sets(self):
        sigs = list(self.cfg.protocol.signals)
        sets = [(s, [s]) for s in sigs]
        if len(sigs) > 1:
            sets.append((BOTH, sigs))
        return sets

    def evaluate_activity(self, pos, probs):
        res = self.result
        for name, sigs in self.signal_sets():
            for d in self.cfg.protocol.probe_durations_s:
                n = frame_count(d, self.framing)
                cm = ConfusionMatrix(np.zeros((4, 4), dtype=np.int64))
                for (s, sess, a), by_model in probs.items():
                    sets = [p for (sig, _), p in by_model.items() if sig in sigs]
                    pred = window_labels(sets, n)
                    cm = cm + confusion(pred, np.full(len(pred), ACTIVITIES.index(a)))
                res.activity_confusion[(pos, name, float(d))] = cm

    # -- two-stage pipeline ---------------------------------------------------------
    def evaluate_two_stage(self, pos, probs, verifiers, fused_reps):
        p, res = self.cfg.protocol, self.result
        n = frame_count(p.two_stage_duration_s, self.framing)
        frame_cache: dict = {}

        def fused_frames(user, route, rk):
            key = (user, route, rk)
            if key not in frame_cache:
                frame_cache[key] = sum(verifiers[(user, route, sig, rep)].zscores(rk)
                                       for sig in p.signals for rep in fused_reps)
            return frame_cache[key]

        correct = total = 0
        for user in self.test:
            for a in ACTIVITIES:
                probes = [(user, 2, a)] + [(v, 2, a) for v in self.test if v != user]
                windows = {mode: [] for mode in ROUTINGS}
                for rk in probes:
                    labels = window_labels(list(probs[rk].values()), n)
                    wrong = ACTIVITIES[(ACTIVITIES.index(a) + 1) % len(ACTIVITIES)]
                    known = sliding_mean(fused_frames(user, a, rk), n)
                    forced = sliding_mean(fused_frames(user, wrong, rk), n)
                    routed = known.copy()
                    for b in set(labels.tolist()) - {ACTIVITIES.index(a)}:
                        sel = labels == b
                        routed[sel] = sliding_mean(fused_frames(user, ACTIVITIES[b], rk), n)[sel]
                    windows["known"].append(known)
                    windows["two_stage"].append(routed)
                    windows["forced_wrong"].append(forced)
                    correct += int(np.sum(labels == ACTIVITIES.index(a)))
                    total += len(labels)
                for mode, w in windows.items():
                    res.add(res.two_stage, (pos, mode),
                            compute_roc_eer(w[0], np.concatenate(w[1:])).eer)
        res.add(res.two_stage, (pos, "accuracy"), (correct, total))


def _add(acc, g, imp):
    if acc is None:
        return g.copy(), [i.copy() for i in imp]
    return acc[0] + g, [a + b for a, b in zip(acc[1], imp)]


# ---------------------------------------------------------------------------

_WORKER_STATE: dict = {}


def _run_in_worker(iteration: int) -> IterationResult:
    return Iteration(_WORKER_STATE["store"], _WORKER_STATE["cfg"], iteration).run()


def worker_count(n_jobs: int) -> int:
    env = os.environ.get("BIOWISH_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def run_protocol(store, cfg: RunConfig, workers: int | None = None) -> ProtocolResult:
    """Run every cross-validation iteration; results are merged in iteration order.

    ``store`` is a ``FrameStore``. Iterations run in forked worker processes
    when more than one worker is allowed (``BIOWISH_THREADS`` caps the count).
    """
    p = cfg.protocol
    if len(store.subjects) < p.train_subjects + 2:
        raise ProtocolError(f"need at least {p.train_subjects + 2} subjects "
                            f"({p.train_subjects} for training, 2 held out), got {len(store.subjects)}")
    sessions = tuple(getattr(store.corpus, "sessions", (1, 2)))
    if not {1, 2} <= set(sessions):
        raise ProtocolError(f"protocol needs sessions 1 and 2, corpus has {sessions}")
    workers = worker_count(p.iterations) if workers is None else max(1, min(workers, p.iterations))
    if workers == 1:
        results = [Iteration(store, cfg, it).run() for it in range(p.iterations)]
    else:
        _WORKER_STATE.update(store=store, cfg=cfg)
        try:
            with ProcessPoolExecutor(workers, mp_context=get_context("fork")) as pool:
                results = list(pool.map(_run_in_worker, range(p.iterations)))
        finally:
            _WORKER_STATE.clear()
    return ProtocolResult(cfg, results)

