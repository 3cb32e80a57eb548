"""Open-set verification: galleries, min-distance scoring, score fusion and EER."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import features
from .neural import WISHNET_T, WISHNET_TF, Network
from .svm import SvmModel, svm_dissimilarity, train_rbf_svm

REPRESENTATIONS = ("L2", "SVM", "WT_CE", "WT_C", "WTF_CE", "WTF_C")
# the four network representations combined by sum fusion
FUSED = ("WTF_CE", "WTF_C", "WT_CE", "WT_C")
ARCH_OF = {"WT_CE": WISHNET_T, "WT_C": WISHNET_T, "WTF_CE": WISHNET_TF, "WTF_C": WISHNET_TF}
EMBED_DIM = {"L2": 75, "WT_CE": 128, "WT_C": 128, "WTF_CE": 1024, "WTF_C": 1024}


@dataclass(frozen=True)
class RepresentationTag:
    rep: str
    signal_kind: str = "SCG"
    position: str = "Pulmonary"
    activity: str = "Lying"

    def __post_init__(self):
        if self.rep not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.rep!r}")

    def __str__(self) -> str:
        return f"{self.rep}/{self.signal_kind}/{self.position}/{self.activity}"

    @property
    def training(self) -> str | None:
        if self.rep.endswith("_CE"):
            return "CE"
        if self.rep.endswith("_C"):
            return "C"
        return None


def network_input(arch: str, phis: np.ndarray) -> np.ndarray:
    """Map framed signals (N, 3, 300) to the input tensor a WISHNET architecture expects."""
    phis = np.asarray(phis, dtype=np.float64)
    if phis.ndim == 2:
        phis = phis[None]
    if arch == WISHNET_T:
        return phis[..., None]
    if arch == WISHNET_TF:
        return features.stft_tensor(phis)
    raise ValueError(f"unknown architecture {arch!r}")


def represent(tag: RepresentationTag, phis: np.ndarray, model=None) -> np.ndarray:
    """Comparable feature vectors for frames under an embedding-type representation."""
    if tag.rep == "L2":
        return features.avg_psd(np.asarray(phis, dtype=np.float64).reshape(-1, 3, 300))
    if tag.rep == "SVM":
        return features.stft_tensor(np.asarray(phis, dtype=np.float64).reshape(-1, 3, 300)).reshape(
            -1, 25 * 41 * 3)
    if not isinstance(model, Network):
        raise TypeError(f"representation {tag.rep} needs a trained network")
    if model.arch != ARCH_OF[tag.rep]:
        raise ValueError(f"{tag.rep} expects {ARCH_OF[tag.rep]}, got a {model.arch} network")
    return model.embed(network_input(model.arch, phis))


@dataclass
class EnrollmentGallery:
    user_id: str
    tag: RepresentationTag
    references: np.ndarray | None = None  # (K, D) for embedding representations
    svm: SvmModel | None = None
    K: int = 0
    model: object = field(default=None, repr=False)


def enroll(user_id: str, phis: np.ndarray, tag: RepresentationTag, model=None,
           negatives: np.ndarray | None = None, **svm_kwargs) -> EnrollmentGallery:
    """Build a user's gallery from enrolment frames.

    Embedding representations store one reference vector per frame. The SVM
    representation stores a user model: either ``model`` (already trained)
    or one trained here against ``negatives`` frames.
    """
    phis = np.asarray(phis)
    if phis.ndim == 2:
        phis = phis[None]
    if len(phis) == 0:
        raise ValueError("cannot enrol from an empty frame list")
    if tag.rep == "SVM":
        if model is None:
            if negatives is None:
                raise ValueError("SVM enrolment needs a trained model or negative frames")
            model = train_rbf_svm(represent(tag, phis), represent(tag, negatives), **svm_kwargs)
        if not isinstance(model, SvmModel):
            raise TypeError("SVM enrolment needs an SvmModel")
        return EnrollmentGallery(user_id, tag, svm=model, K=len(phis))
    refs = represent(tag, phis, model)
    return EnrollmentGallery(user_id, tag, references=refs, K=len(refs), model=model)


def min_distance(probes: np.ndarray, references: np.ndarray) -> np.ndarray:
    """Smallest Euclidean distance from each probe vector to any reference."""
    probes = np.atleast_2d(probes)
    if probes.shape[1] != references.shape[1]:
        raise ValueError(f"probe dimension {probes.shape[1]} != reference dimension {references.shape[1]}")
    out = np.empty(len(probes))
    for start in range(0, len(probes), 512):
        out[start:start + 512] = cdist(probes[start:start + 512], references).min(axis=1)
    return out


def score_vectors(vectors: np.ndarray, gallery: EnrollmentGallery) -> np.ndarray:
    if gallery.tag.rep == "SVM":
        return svm_dissimilarity(gallery.svm, vectors)
    return min_distance(vectors, gallery.references)


def score_probe(phis: np.ndarray, gallery: EnrollmentGallery) -> np.ndarray:
    """Dissimilarity of each probe frame to the gallery (lower = more genuine)."""
    return score_vectors(represent(gallery.tag, phis, gallery.model), gallery)


@dataclass(frozen=True)
class Calibration:
    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, scores) -> "Calibration":
        scores = np.asarray(scores, dtype=np.float64)
        std = float(scores.std())
        return cls(float(scores.mean()), std if std > 1e-12 else 1.0)

    def apply(self, scores):
        return (np.asarray(scores, dtype=np.float64) - self.mean) / self.std


def fuse_scores(scores: dict, calibration: dict) -> np.ndarray:
    """Sum of z-normalized scores over every key in ``scores``."""
    if not scores:
        raise ValueError("nothing to fuse")
    total = 0.0
    for key, value in scores.items():
        if key not in calibration:
            raise KeyError(f"no calibration for {key}")
        total = total + calibration[key].apply(value)
    return np.asarray(total, dtype=np.float64)


def multi_frame_score(frame_scores) -> float:
    """Mean of per-frame scores over a run of consecutive frames."""
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    if frame_scores.size == 0:
        raise ValueError("multi-frame score needs at least one frame")
    return float(frame_scores.mean())


def sliding_mean(frame_scores, n: int) -> np.ndarray:
    """Means of every run of ``n`` consecutive frame scores."""
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    if n < 1 or n > len(frame_scores):
        raise ValueError(f"cannot average {n} consecutive frames out of {len(frame_scores)}")
    csum = np.concatenate([[0.0], np.cumsum(frame_scores)])
    return (csum[n:] - csum[:-n]) / n


@dataclass
class RocResult:
    eer: float
    threshold: float
    far: np.ndarray
    frr: np.ndarray
    thresholds: np.ndarray

    @property
    def roc(self) -> list[tuple[float, float]]:
        return list(zip(self.far.tolist(), self.frr.tolist()))


def compute_roc_eer(genuine, impostor) -> RocResult:
    """Threshold sweep over observed scores, accepting when ``score <= threshold``.

    The EER is read where FAR - FRR changes sign, interpolating linearly
    between the two adjacent sweep points.
    """
    g = np.sort(np.asarray(genuine, dtype=np.float64).ravel())
    i = np.sort(np.asarray(impostor, dtype=np.float64).ravel())
    if g.size == 0 or i.size == 0:
        raise ValueError("EER needs non-empty genuine and impostor score lists")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
        raise ValueError("scores must be finite")
    thr = np.unique(np.concatenate([g, i]))
    far = np.searchsorted(i, thr, side="right") / i.size
    frr = 1.0 - np.searchsorted(g, thr, side="right") / g.size
    # leading point rejects everything
    thr = np.concatenate([[-np.inf], thr])
    far = np.concatenate([[0.0], far])
    frr = np.concatenate([[1.0], frr])
    diff = far - frr  # strictly increasing along the sweep
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        eer, threshold = far[k], thr[k]
    else:
        t = -diff[k - 1] / (diff[k] - diff[k - 1])
        eer = far[k - 1] + t * (far[k] - far[k - 1])
        threshold = thr[k] if k == 1 else thr[k - 1] + t * (thr[k] - thr[k - 1])
    return RocResult(float(eer), float(threshold), far, frr, thr)
