import numpy as np
import pytest

from cocoimc.data import MaskSpec, apply_mask, normalize, synth_two_view
from cocoimc.trainer import TrainConfig

ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def record():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(**kw):
    """A network small enough for sub-second runs."""
    base = dict(
        n_clusters=3,
        pretrain_epochs=3,
        epochs=8,
        batch_size=32,
        latent_dim=6,
        hidden=(12,),
        proj_hidden=8,
        proj_dim=5,
        pred_hidden=8,
        cross_hidden=8,
        n_init=3,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def small_ds():
    ds = synth_two_view(90, 3, 7, 5, 0.2, seed=3)
    return normalize(apply_mask(ds, MaskSpec(0.5, 3)))
