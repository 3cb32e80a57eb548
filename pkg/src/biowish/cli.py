"""``biowish`` command line: corpus generation, training, enrolment, verification, evaluation.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
Relative paths are resolved against ``--root``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import features, persist
from .config import ConfigError, RunConfig, load_config
from .dataset import DatasetCorpus, FrameStore
from .persist import ModelFileError
from .protocol import Iteration, ProtocolError, run_protocol, split_subjects
from .report import write_results
from .signals import (ACTIVITIES, POSITIONS, SIGNAL_KINDS, FramingConfig, RecordingError, ZeroFramesError,
                      frame_array, load_recording, preprocess)
from .svm import ConvergenceError, SvmModel
from .synth import write_corpus
from .verification import (ARCH_OF, REPRESENTATIONS, EnrollmentGallery, RepresentationTag, enroll,
                           score_probe)

log = logging.getLogger("biowish")

DATA_ERRORS = (RecordingError, ZeroFramesError, ModelFileError, ConfigError, ProtocolError,
               ConvergenceError, OSError, ValueError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers

def _path(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(args.root) / p


def _config(args) -> RunConfig:
    cfg = load_config(_path(args, args.config)) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _framing(cfg: RunConfig) -> FramingConfig:
    f = cfg.framing
    return FramingConfig(f.frame_len_s, f.overlap_fraction, f.rate_hz)


def _store(args, cfg: RunConfig) -> FrameStore:
    return FrameStore(DatasetCorpus(args.root), _framing(cfg), cfg.framing.cutoff_hz)


def _tag(text: str) -> RepresentationTag:
    parts = text.split("/")
    if len(parts) != 4:
        raise UsageError(f"--tag must be REP/SIGNAL/POSITION/ACTIVITY, got {text!r}")
    rep, sig, pos, act = parts
    for value, allowed, what in ((rep, REPRESENTATIONS, "representation"),
                                 (sig, SIGNAL_KINDS, "signal"), (pos, POSITIONS, "position"),
                                 (act, ACTIVITIES, "activity")):
        if value not in allowed:
            raise UsageError(f"unknown {what} {value!r} in --tag (choose from {', '.join(allowed)})")
    return RepresentationTag(rep, sig, pos, act)


def _iteration(args, store, cfg) -> Iteration:
    train = args.train_subjects.split(",") if getattr(args, "train_subjects", None) else None
    return Iteration(store, cfg, iteration=0, train=train)


def _need_user(args, it: Iteration) -> str:
    if not args.user:
        raise UsageError("this strategy needs --user")
    if args.user not in it.store.subjects:
        raise ProtocolError(f"unknown subject {args.user!r}")
    if args.user in it.train:
        raise ProtocolError(f"{args.user} is a training subject; pick a held-out user "
                            f"({', '.join(it.test)})")
    return args.user


def _probe_frames(path, cfg: RunConfig, kind: str) -> np.ndarray:
    scg, gcg = load_recording(path)
    rec = scg if kind == "SCG" else gcg
    return frame_array(preprocess(rec, cfg.framing.rate_hz, cfg.framing.cutoff_hz), _framing(cfg))


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> None:
    positions = tuple(args.positions.split(",")) if args.positions else POSITIONS
    bad = set(positions) - set(POSITIONS)
    if bad:
        raise UsageError(f"unknown position(s): {', '.join(sorted(bad))}")
    if args.subjects < 1 or args.duration <= 0:
        raise UsageError("--subjects and --duration must be positive")
    root = write_corpus(args.root, args.subjects, args.seed, duration_s=args.duration,
                        positions=positions)
    _emit({"root": str(root), "subjects": args.subjects, "positions": list(positions)})


def cmd_preprocess(args) -> None:
    cfg = _config(args)
    corpus = DatasetCorpus(args.root)
    out = _path(args, args.out)
    n = 0
    for subject in corpus.subjects:
        for session in corpus.sessions:
            for activity in corpus.activities:
                for position in corpus.positions:
                    src = corpus.path(subject, session, activity, position)
                    if not src.exists():
                        continue
                    for rec in corpus.recording(subject, session, activity, position):
                        frames = frame_array(preprocess(rec, cfg.framing.rate_hz, cfg.framing.cutoff_hz),
                                             _framing(cfg))
                        dst = out / subject / str(session) / activity / f"{position}_{rec.meta.signal_kind}.f64"
                        dst.parent.mkdir(parents=True, exist_ok=True)
                        features.write_feature_dump(dst, frames)
                        n += 1
    _emit({"cache": str(out), "files": n, "config_sha256": cfg.digest()})


def cmd_train(args) -> None:
    cfg = _config(args)
    tag = _tag(args.tag)
    store = _store(args, cfg)
    it = _iteration(args, store, cfg)
    extra = {"tag": str(tag), "config_sha256": cfg.digest(), "train_subjects": it.train}
    if args.strategy == "svm":
        if tag.rep != "SVM":
            raise UsageError("--strategy svm needs an SVM tag")
        user = _need_user(args, it)
        rows = it.enrollment_rows(tag.position, tag.activity, user)
        model = it.train_user_svm(tag.position, tag.signal_kind, tag.activity, user, rows)
        data = persist.svm_bytes(model, {**extra, "user": user})
    else:
        if tag.rep not in ARCH_OF:
            raise UsageError(f"--strategy {args.strategy} needs a network tag "
                             f"({', '.join(ARCH_OF)})")
        arch = ARCH_OF[tag.rep]
        if args.strategy == "siamese":
            if not tag.rep.endswith("_C"):
                raise UsageError("--strategy siamese needs a contrastive tag (WT_C or WTF_C)")
            net = it.train_siamese_net(arch, tag.position, tag.signal_kind)
            hyper, training = vars(cfg.siamese), "C"
        elif args.strategy == "ce":
            if not tag.rep.endswith("_CE"):
                raise UsageError("--strategy ce needs a cross-entropy tag (WT_CE or WTF_CE)")
            user = _need_user(args, it)
            rows = it.enrollment_rows(tag.position, tag.activity, user)
            net = it.train_user_network(tag.rep, tag.position, tag.signal_kind, tag.activity, user, rows)
            hyper, training = vars(cfg.ce), "CE"
            extra["user"] = user
        else:  # activity
            net = it.train_activity_model(arch, tag.position, tag.signal_kind).net
            hyper, training = vars(cfg.activity), "activity"
            extra["classes"] = list(ACTIVITIES)
        data = persist.network_bytes(net, training=training, seed=cfg.seed,
                                     hyperparameters=dict(hyper), extra=extra)
    digest = persist.save(_path(args, args.out), data)
    _emit({"model": str(_path(args, args.out)), "sha256": digest, "tag": str(tag)})


def _load_network(args, tag):
    if not args.model:
        raise UsageError(f"representation {tag.rep} needs --model")
    path = _path(args, args.model)
    obj, manifest = persist.load(path)
    if manifest.get("kind") != "network" or obj.arch != ARCH_OF[tag.rep]:
        raise ModelFileError(f"{path}: expected a {ARCH_OF[tag.rep]} network for {tag.rep}")
    return obj, hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_enroll(args) -> None:
    cfg = _config(args)
    tag = _tag(args.tag)
    if args.recording:
        phis = _probe_frames(_path(args, args.recording), cfg, tag.signal_kind)
        source = str(args.recording)
    else:
        store = _store(args, cfg)
        it = _iteration(args, store, cfg)
        user = _need_user(args, it)
        rows = it.enrollment_rows(tag.position, tag.activity, user)
        phis = store.frames(user, 1, tag.activity, tag.position, tag.signal_kind)[rows]
        source = f"session 1 frames {rows.start}..{rows.stop - 1}"
    user = args.user or "user"
    out = _path(args, args.out)
    extra = {"tag": str(tag), "user": user, "K": int(len(phis)), "source": source,
             "config_sha256": cfg.digest()}
    if tag.rep == "SVM":
        if not args.model:
            raise UsageError("SVM enrolment needs --model (train one with --strategy svm)")
        model, _ = persist.load(_path(args, args.model))
        if not isinstance(model, SvmModel):
            raise ModelFileError(f"{args.model}: not an SVM model")
        data = persist.svm_bytes(model, {**extra, "gallery": True})
    else:
        model, model_sha = (None, None) if tag.rep == "L2" else _load_network(args, tag)
        gallery = enroll(user, phis, tag, model)
        data = persist.gallery_bytes(gallery.references, {**extra, "model_sha256": model_sha})
    digest = persist.save(out, data)
    _emit({"gallery": str(out), "sha256": digest, "K": int(len(phis))})


def cmd_verify(args) -> None:
    cfg = _config(args)
    obj, manifest = persist.load(_path(args, args.gallery))
    if "tag" not in manifest:
        raise ModelFileError(f"{args.gallery}: not an enrolment gallery")
    tag = _tag(manifest["tag"])
    if isinstance(obj, SvmModel):
        gallery = EnrollmentGallery(manifest.get("user", ""), tag, svm=obj, K=manifest.get("K", 0))
    else:
        model = None
        if tag.rep != "L2":
            model, sha = _load_network(args, tag)
            if manifest.get("model_sha256") not in (None, sha):
                raise ModelFileError("model file differs from the one used at enrolment")
        gallery = EnrollmentGallery(manifest.get("user", ""), tag, references=obj, K=len(obj),
                                    model=model)
    phis = _probe_frames(_path(args, args.probe), cfg, tag.signal_kind)
    frame_scores = score_probe(phis, gallery)
    score = float(np.mean(frame_scores))
    _emit({"user": gallery.user_id, "tag": str(tag), "frames": int(len(phis)), "score": score,
           "threshold": args.threshold, "accept": bool(score <= args.threshold)})


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    if args.iterations is not None:
        cfg = replace(cfg, protocol=replace(cfg.protocol, iterations=args.iterations))
    store = _store(args, cfg)
    result = run_protocol(store, cfg, workers=args.workers)
    out = _path(args, args.out or cfg.output)
    written = write_results(result, out)
    _emit({"output": str(out), "files": len(written), "config_sha256": cfg.digest()})


def cmd_inspect(args) -> None:
    manifest = persist.read_manifest(_path(args, args.model))
    print(json.dumps(manifest, sort_keys=True, indent=2))


def cmd_split(args) -> None:
    cfg = _config(args)
    corpus = DatasetCorpus(args.root)
    train, test = split_subjects(corpus.subjects, cfg.protocol.train_subjects, cfg.seed, args.iteration)
    _emit({"train": train, "test": test})


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="biowish", description=__doc__.splitlines()[0])
    p.add_argument("--root", default=".", help="dataset root; relative paths resolve against it")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic two-session corpus")
    s.add_argument("--subjects", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=120.0, help="seconds per recording")
    s.add_argument("--positions", help="comma-separated sensor positions (default: all)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="filter, resample and frame every recording into a cache")
    s.add_argument("--config")
    s.add_argument("--out", default="cache")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("split", help="print the training/held-out subject split")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--iteration", type=int, default=0)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--strategy", required=True, choices=("ce", "siamese", "svm", "activity"))
    s.add_argument("--tag", required=True, help="REP/SIGNAL/POSITION/ACTIVITY")
    s.add_argument("--user", help="held-out user (ce and svm strategies)")
    s.add_argument("--train-subjects", help="comma-separated training subjects (default: seeded split)")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("enroll", help="build a gallery from a recording or a dataset user")
    s.add_argument("--tag", required=True)
    s.add_argument("--user")
    s.add_argument("--recording", help="CSV recording; every frame is enrolled")
    s.add_argument("--model", help="network (or SVM) model file")
    s.add_argument("--train-subjects")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("verify", help="accept or reject one identity claim")
    s.add_argument("--gallery", required=True)
    s.add_argument("--model")
    s.add_argument("--probe", required=True, help="CSV recording")
    s.add_argument("--threshold", type=float, required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("evaluate", help="run the cross-validated protocol and write result CSVs")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--workers", type=int, help="worker processes (default: BIOWISH_THREADS or CPU count)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("inspect", help="print a model file's manifest")
    s.add_argument("model")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"biowish: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
