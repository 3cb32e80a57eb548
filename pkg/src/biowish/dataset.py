"""Corpus access: on-disk CSV datasets and cached framed signals."""
from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import numpy as np

from .signals import (ACTIVITIES, CUTOFF_HZ, POSITIONS, FramingConfig, RecordingError, RecordingMeta,
                      frame_array, load_recording, preprocess)


class DatasetCorpus:
    """``root/<subject>/<session>/<activity>/<position>.csv`` with a ``manifest.json``."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
        else:
            manifest = {}
        self.sample_rate_hz = manifest.get("sample_rate_hz")
        if "subjects" in manifest:
            self.subjects = list(manifest["subjects"])
        else:
            self.subjects = sorted(p.name for p in self.root.iterdir() if p.is_dir())
        if not self.subjects:
            raise RecordingError(f"{self.root}: no subjects found")
        self.sessions = tuple(manifest.get("sessions", (1, 2)))
        self.activities = tuple(manifest.get("activities", ACTIVITIES))
        self.positions = tuple(manifest.get("positions", POSITIONS))

    def path(self, subject: str, session: int, activity: str, position: str) -> Path:
        return self.root / subject / str(session) / activity / f"{position}.csv"

    @lru_cache(maxsize=None)
    def recording(self, subject: str, session: int, activity: str, position: str):
        meta = RecordingMeta(subject, session, activity, position)
        return load_recording(self.path(subject, session, activity, position), meta,
                              self.sample_rate_hz)


class FrameStore:
    """Preprocessed, framed signals keyed by (subject, session, activity, position, kind)."""

    def __init__(self, corpus, framing: FramingConfig = FramingConfig(),
                 cutoff_hz: float = CUTOFF_HZ):
        self.corpus = corpus
        self.framing = framing
        self.cutoff_hz = cutoff_hz
        self._cache: dict = {}

    @property
    def subjects(self) -> list[str]:
        return list(self.corpus.subjects)

    def frames(self, subject: str, session: int, activity: str, position: str,
               kind: str) -> np.ndarray:
        key = (subject, session, activity, position)
        if key not in self._cache:
            scg, gcg = self.corpus.recording(*key)
            self._cache[key] = {
                rec.meta.signal_kind: np.ascontiguousarray(frame_array(
                    preprocess(rec, self.framing.rate_hz, self.cutoff_hz), self.framing))
                for rec in (scg, gcg)
            }
        return self._cache[key][kind]
