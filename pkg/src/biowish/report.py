"""CSV emission for protocol results. Every file opens with the config digest."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .config import dumps
from .protocol import ProtocolResult
from .signals import ACTIVITIES

ROC_MAX_POINTS = 500


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def _write_csv(path: Path, digest: str, header: list[str], rows) -> Path:
    buf = io.StringIO()
    buf.write(f"# config_sha256={digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[str, list[dict]]:
    """Return ``(digest, rows)`` of a file written here."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# config_sha256="):
        raise ValueError(f"{path}: missing config digest line")
    digest = lines[0].split("=", 1)[1]
    return digest, list(csv.DictReader(lines[1:]))


def _decimate(n: int, keep: int) -> np.ndarray:
    if n <= keep:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, keep).round().astype(int))


def write_results(result: ProtocolResult, outdir) -> list[Path]:
    cfg = result.cfg
    digest = cfg.digest()
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    (out / "run_config.toml").write_text(f"# config_sha256={digest}\n" + dumps(cfg))
    written.append(out / "run_config.toml")

    rows = [(*key, *val) for key, val in result.eer_table().items()]
    written.append(_write_csv(out / "verification_eer.csv", digest,
                              ["signal", "position", "activity", "representation",
                               "eer_mean", "eer_std", "n_trials"], rows))

    rows = [(pos, dur, act, m, s) for (pos, act, dur), (m, s) in result.duration_table().items()]
    rows.sort(key=lambda r: (r[0], r[1], ACTIVITIES.index(r[2])))
    written.append(_write_csv(out / "eer_vs_duration.csv", digest,
                              ["position", "duration_s", "activity", "eer", "eer_std"], rows))

    cms = result.confusion_matrices()
    if cms:
        rows = [(pos, dur, name, 100 * cm.accuracy) for (pos, name, dur), cm in cms.items()]
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        written.append(_write_csv(out / "activity_accuracy.csv", digest,
                                  ["position", "duration_s", "signal_set", "accuracy"], rows))
        for (pos, name, dur), cm in cms.items():
            rows = [[f"pred_{ACTIVITIES[i]}", *cm.counts[i].tolist(), int(cm.counts[i].sum()),
                     100 * cm.precision[i]] for i in range(len(ACTIVITIES))]
            rows.append(["total", *cm.counts.sum(axis=0).tolist(), cm.total, 100 * cm.accuracy])
            rows.append(["recall", *(100 * cm.recall).tolist(), "", ""])
            tag = name.replace("+", "_")
            written.append(_write_csv(out / "confusion" / f"{pos}_{tag}_{dur:g}s.csv", digest,
                                      ["row", *[f"true_{a}" for a in ACTIVITIES], "total", "precision"],
                                      rows))

    two = result.two_stage_table()
    if two:
        rows = []
        for (pos, what), val in two.items():
            if what == "accuracy":
                continue
            rows.append((pos, what, val[0], val[1], 100 * two[(pos, "accuracy")]))
        written.append(_write_csv(out / "two_stage.csv", digest,
                                  ["position", "routing", "eer_mean", "eer_std", "activity_accuracy"],
                                  rows))

    for key in result.roc_keys():
        roc = result.roc(key)
        idx = _decimate(len(roc.thresholds), ROC_MAX_POINTS)
        rows = [(roc.thresholds[i], roc.far[i], roc.frr[i]) for i in idx]
        name = "_".join(str(k) for k in key).replace("+", "_")
        written.append(_write_csv(out / "roc" / f"{name}.csv", digest, ["threshold", "far", "frr"], rows))
    return written
