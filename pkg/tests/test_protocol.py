import numpy as np
import pytest

from biowish.config import load_config
from biowish.dataset import DatasetCorpus, FrameStore
from biowish.protocol import (Iteration, ProtocolError, enrollment_start, run_protocol, split_subjects)
from biowish.report import read_csv, write_results


@pytest.fixture(scope="module")
def tiny(tiny_corpus):
    cfg = load_config(tiny_corpus / "tiny.toml")
    return FrameStore(DatasetCorpus(tiny_corpus)), cfg


@pytest.fixture(scope="module")
def result(tiny):
    store, cfg = tiny
    return run_protocol(store, cfg, workers=1)


def test_split_is_seeded_partition():
    subjects = [f"S{i:02d}" for i in range(1, 17)]
    train, test = split_subjects(subjects, 10, 0, 0)
    assert len(train) == 10 and len(test) == 6 and set(train) | set(test) == set(subjects)
    assert (train, test) == split_subjects(subjects, 10, 0, 0)
    assert train != split_subjects(subjects, 10, 0, 1)[0]


def test_enrollment_span():
    starts = {enrollment_start(116, 86, 0, it, "S01", "Lying", "Pulmonary") for it in range(20)}
    assert all(0 <= s <= 30 for s in starts) and len(starts) > 1
    with pytest.raises(ProtocolError):
        enrollment_start(10, 86, 0, 0, "S01", "Lying", "Pulmonary")


def test_explicit_training_subjects(tiny):
    store, cfg = tiny
    it = Iteration(store, cfg, train=["S01", "S02", "S03"])
    assert it.test == ["S04", "S05"]
    with pytest.raises(ProtocolError, match="S99"):
        Iteration(store, cfg, train=["S99"])


def test_insufficient_subjects(tiny):
    store, cfg = tiny
    from dataclasses import replace
    with pytest.raises(ProtocolError, match="subjects"):
        run_protocol(store, replace(cfg, protocol=replace(cfg.protocol, train_subjects=4)))


def test_result_tables_are_complete_and_in_range(result):
    table = result.eer_table()
    # 2 signals x 4 activities x (6 representations + fused) plus the joint fused rows
    assert len(table) == 2 * 4 * 7 + 4
    for mean, std, n in table.values():
        assert 0.0 <= mean <= 100.0 and std >= 0 and n > 0
    durations = result.duration_table()
    assert {k[2] for k in durations} == {5.0, 10.0}
    cms = result.confusion_matrices()
    assert {k[1] for k in cms} == {"SCG", "GCG", "SCG+GCG"}
    for cm in cms.values():
        assert cm.total > 0
    two = result.two_stage_table()
    assert {k[1] for k in two} == {"known", "two_stage", "forced_wrong", "accuracy"}


def test_seeded_run_is_repeatable(tiny, result):
    store, cfg = tiny
    again = run_protocol(store, cfg, workers=1)
    assert again.eer_table() == result.eer_table()
    assert again.two_stage_table() == result.two_stage_table()


def test_forked_workers_match_serial_run(tiny, result):
    store, cfg = tiny
    parallel = run_protocol(store, cfg, workers=2)
    assert parallel.eer_table() == result.eer_table()
    assert parallel.duration_table() == result.duration_table()


def test_result_files_carry_config_digest(tmp_path, result):
    files = write_results(result, tmp_path)
    names = {p.name for p in files}
    assert {"verification_eer.csv", "eer_vs_duration.csv", "activity_accuracy.csv",
            "two_stage.csv", "run_config.toml"} <= names
    digest, rows = read_csv(tmp_path / "verification_eer.csv")
    assert digest == result.cfg.digest()
    assert set(rows[0]) == {"signal", "position", "activity", "representation", "eer_mean", "eer_std",
                            "n_trials"}
    digest, rows = read_csv(tmp_path / "eer_vs_duration.csv")
    assert [float(r["duration_s"]) for r in rows[:4]] == [5.0] * 4
    for p in files:
        if p.suffix == ".csv":
            assert read_csv(p)[0] == result.cfg.digest()
    second = tmp_path / "again"
    write_results(result, second)
    for p in files:
        assert p.read_bytes() == (second / p.relative_to(tmp_path)).read_bytes()
