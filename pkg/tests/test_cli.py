import json

import numpy as np
import pytest

from biowish.cli import main
from biowish.features import read_feature_dump


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _split(capsys, root):
    code, out, _ = run(capsys, "--root", root, "split", "--config", "tiny.toml")
    assert code == 0
    return json.loads(out)


def test_usage_errors_exit_1(capsys, tiny_corpus):
    code, _, err = run(capsys, "evaluate", "--bogus")
    assert code == 1 and "usage" in err
    assert run(capsys)[0] == 1
    code, _, err = run(capsys, "--root", tiny_corpus, "train", "--strategy", "ce", "--tag", "WT_CE/SCG",
                       "--out", "m.bin")
    assert code == 1 and "REP/SIGNAL/POSITION/ACTIVITY" in err
    code, _, err = run(capsys, "--root", tiny_corpus, "train", "--strategy", "siamese",
                       "--tag", "WT_CE/SCG/Pulmonary/Lying", "--out", "m.bin")
    assert code == 1 and "contrastive" in err


def test_data_errors_exit_2(capsys, tiny_corpus, tmp_path):
    code, _, err = run(capsys, "--root", tmp_path / "missing", "split")
    assert code == 2 and "error" in err
    code, _, _ = run(capsys, "--root", tiny_corpus, "inspect", tmp_path / "nope.bin")
    assert code == 2
    train = _split(capsys, tiny_corpus)["train"]
    code, _, err = run(capsys, "--root", tiny_corpus, "train", "--strategy", "svm", "--config", "tiny.toml",
                       "--tag", "SVM/SCG/Pulmonary/Lying", "--user", train[0], "--out", tmp_path / "s.bin")
    assert code == 2 and "training subject" in err


def test_split_is_seeded(capsys, tiny_corpus):
    a = _split(capsys, tiny_corpus)
    assert len(a["train"]) == 3 and len(a["test"]) == 2
    assert a == _split(capsys, tiny_corpus)


def test_preprocess_writes_frame_dumps(capsys, tiny_corpus, tmp_path):
    code, out, _ = run(capsys, "--root", tiny_corpus, "preprocess", "--out", tmp_path / "cache")
    assert code == 0 and json.loads(out)["files"] == 5 * 2 * 4 * 2
    frames = read_feature_dump(tmp_path / "cache" / "S01" / "1" / "Lying" / "Pulmonary_SCG.f64")
    assert frames.shape == (26, 3, 300)


def test_train_is_byte_deterministic_and_inspectable(capsys, tiny_corpus, tmp_path):
    args = ["--root", tiny_corpus, "train", "--strategy", "siamese", "--config", "tiny.toml",
            "--tag", "WT_C/GCG/Pulmonary/Sitting"]
    assert run(capsys, *args, "--out", tmp_path / "a.bin")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "b.bin")[0] == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    code, out, _ = run(capsys, "inspect", tmp_path / "a.bin")
    manifest = json.loads(out)
    assert code == 0 and manifest["kind"] == "network" and manifest["training"] == "C"
    assert manifest["tag"] == "WT_C/GCG/Pulmonary/Sitting"
    test = _split(capsys, tiny_corpus)["test"]
    for strategy, tag in (("ce", "WTF_CE/SCG/Pulmonary/Lying"), ("svm", "SVM/SCG/Pulmonary/Lying")):
        a = ["--root", tiny_corpus, "train", "--strategy", strategy, "--config", "tiny.toml", "--tag", tag,
             "--user", test[0]]
        assert run(capsys, *a, "--out", tmp_path / "c.bin")[0] == 0
        assert run(capsys, *a, "--out", tmp_path / "d.bin")[0] == 0
        assert (tmp_path / "c.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()


def test_enroll_then_verify_same_recording(capsys, tiny_corpus, tmp_path):
    root = tiny_corpus
    rec = "S04/1/Walking/Pulmonary.csv"
    assert run(capsys, "--root", root, "train", "--strategy", "siamese", "--config", "tiny.toml",
               "--tag", "WT_C/SCG/Pulmonary/Walking", "--out", tmp_path / "net.bin")[0] == 0
    code, out, _ = run(capsys, "--root", root, "enroll", "--tag", "WT_C/SCG/Pulmonary/Walking",
                       "--user", "S04", "--recording", rec, "--model", tmp_path / "net.bin",
                       "--out", tmp_path / "gal.bin")
    assert code == 0 and json.loads(out)["K"] == 26
    code, out, _ = run(capsys, "--root", root, "verify", "--gallery", tmp_path / "gal.bin",
                       "--model", tmp_path / "net.bin", "--probe", rec, "--threshold", 1e-9)
    res = json.loads(out)
    assert code == 0 and res["score"] == 0.0 and res["accept"] is True
    code, out, _ = run(capsys, "--root", root, "verify", "--gallery", tmp_path / "gal.bin",
                       "--model", tmp_path / "net.bin", "--probe", "S05/2/Walking/Pulmonary.csv",
                       "--threshold", 1e-9)
    assert code == 0 and json.loads(out)["score"] > 0 and json.loads(out)["accept"] is False
    # L2 needs no model
    assert run(capsys, "--root", root, "enroll", "--tag", "L2/GCG/Pulmonary/Walking", "--recording", rec,
               "--out", tmp_path / "l2.bin")[0] == 0
    code, out, _ = run(capsys, "--root", root, "verify", "--gallery", tmp_path / "l2.bin", "--probe", rec,
                       "--threshold", 0.5)
    assert code == 0 and json.loads(out)["score"] == 0.0


def test_verify_rejects_a_different_model(capsys, tiny_corpus, tmp_path):
    root, rec = tiny_corpus, "S04/1/Lying/Pulmonary.csv"
    for seed in (1, 2):
        assert run(capsys, "--root", root, "train", "--strategy", "siamese", "--config", "tiny.toml",
                   "--seed", seed, "--tag", "WT_C/SCG/Pulmonary/Lying",
                   "--out", tmp_path / f"n{seed}.bin")[0] == 0
    assert run(capsys, "--root", root, "enroll", "--tag", "WT_C/SCG/Pulmonary/Lying", "--recording", rec,
               "--model", tmp_path / "n1.bin", "--out", tmp_path / "g.bin")[0] == 0
    code, _, err = run(capsys, "--root", root, "verify", "--gallery", tmp_path / "g.bin", "--model",
                       tmp_path / "n2.bin", "--probe", rec, "--threshold", 1.0)
    assert code == 2 and "differs" in err


def test_evaluate_twice_is_byte_identical(capsys, tiny_corpus, tmp_path):
    outs = []
    for name in ("r1", "r2"):
        code, out, _ = run(capsys, "--root", tiny_corpus, "evaluate", "--config", "tiny.toml", "--seed", 7,
                           "--iterations", 1, "--workers", 1, "--out", tmp_path / name)
        assert code == 0
        outs.append(tmp_path / name)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert len(files) > 10
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
    head = (outs[0] / "verification_eer.csv").read_text().splitlines()[0]
    assert head.startswith("# config_sha256=")
    assert np.isfinite(float((outs[0] / "eer_vs_duration.csv").read_text().splitlines()[2].split(",")[3]))
