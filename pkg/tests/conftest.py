import pytest

from posdiff.data import DatasetSpec, generate
from posdiff.training import TrainConfig, task_instances

TINY_MODEL = dict(width=16, heads=2, e=8, d=16)


def tiny_config(task="sequence", **kw) -> TrainConfig:
    base = dict(task=task, T=30, inference_ratio=3, epochs=1, batch_size=4, puzzle_sizes=(2, 3),
                log_every=0, **TINY_MODEL)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def seq_dataset():
    return generate(DatasetSpec(kind="synthetic-sequence", count=40, seed=0, k_min=3, k_max=5))


@pytest.fixture(scope="session")
def img_dataset():
    return generate(DatasetSpec(kind="procedural-image", count=10, seed=0, image_size=64, puzzle_sizes=(2, 3)))


@pytest.fixture(scope="session")
def seq_train(seq_dataset):
    return task_instances(seq_dataset, "train", "sequence")


@pytest.fixture(scope="session")
def puzzle_train(img_dataset):
    return task_instances(img_dataset, "train", "puzzle", (2, 3))


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
