import numpy as np
import pytest

from biowish.neural import WISHNET_T, TrainConfig, build_network, train_classifier
from biowish.persist import (ModelFileError, gallery_bytes, load, network_bytes, read_manifest, save,
                             svm_bytes)
from biowish.svm import train_rbf_svm


def _trained_net():
    rng = np.random.default_rng(0)
    net = build_network(WISHNET_T, width=0.125, seed=1)
    x = rng.normal(size=(8, 3, 300, 1))
    train_classifier(net, x, np.r_[np.zeros(4, int), np.ones(4, int)], TrainConfig(epochs=1, batch=4))
    return net, x


def test_network_round_trip(tmp_path):
    net, x = _trained_net()
    digest = save(tmp_path / "m.bin", network_bytes(net, "CE", seed=5, extra={"tag": "WT_CE/SCG"}))
    assert len(digest) == 64
    back, manifest = load(tmp_path / "m.bin")
    assert manifest["kind"] == "network" and manifest["tag"] == "WT_CE/SCG" and manifest["seed"] == 5
    np.testing.assert_array_equal(back.embed(x), net.embed(x))
    np.testing.assert_array_equal(back.predict_proba(x), net.predict_proba(x))
    assert read_manifest(tmp_path / "m.bin") == manifest


def test_serialization_is_deterministic():
    a, _ = _trained_net()
    b, _ = _trained_net()
    assert network_bytes(a, "CE", 0) == network_bytes(b, "CE", 0)


def test_svm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    m = train_rbf_svm(rng.normal(1, 1, (10, 4)), rng.normal(-1, 1, (10, 4)))
    save(tmp_path / "s.bin", svm_bytes(m, {"tag": "SVM"}))
    back, manifest = load(tmp_path / "s.bin")
    assert manifest["kind"] == "svm-rbf"
    probes = rng.normal(size=(5, 4))
    np.testing.assert_array_equal(back.decision_function(probes), m.decision_function(probes))


def test_gallery_round_trip(tmp_path):
    refs = np.random.default_rng(2).normal(size=(86, 128))
    save(tmp_path / "g.bin", gallery_bytes(refs, {"user": "S03"}))
    back, manifest = load(tmp_path / "g.bin")
    np.testing.assert_array_equal(back, refs)
    assert manifest["user"] == "S03" and manifest["arrays"] == [["references", [86, 128]]]


def test_corrupt_files(tmp_path):
    refs = np.zeros((2, 3))
    raw = gallery_bytes(refs, {})
    (tmp_path / "a").write_bytes(b"NOTMODEL" + raw[8:])
    (tmp_path / "b").write_bytes(raw[:-8])
    (tmp_path / "c").write_bytes(raw + b"\0")
    for name, message in (("a", "magic"), ("b", "truncated"), ("c", "trailing")):
        with pytest.raises(ModelFileError, match=message):
            load(tmp_path / name)
