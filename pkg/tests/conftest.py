import sys

import pytest

TINY_CONFIG = """
seed = 3

[network]
t_width = 0.125
tf_width = 0.0625

[ce]
epochs = 1
negative_stride = 4

[siamese]
batch = 16
epochs = 1
steps_per_epoch = 2

[activity]
epochs = 1
frame_stride = 2

[svm]
negative_stride = 4

[protocol]
train_subjects = 3
iterations = 2
enroll_s = 15.0
probe_durations_s = [5.0, 10.0]
two_stage_duration_s = 10.0
cohort_stride = 2
"""


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Five subjects, 30 s per recording, one sensor position, written to disk."""
    from biowish.synth import write_corpus

    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, n_subjects=5, seed=0, duration_s=30.0, positions=("Pulmonary",))
    (root / "tiny.toml").write_text(TINY_CONFIG)
    return root


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for module in list(sys.modules.values()):
        lines.update(getattr(module, "ACCEPTANCE_LINES", None) or {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
