import logging

import pytest
import torch

from diatom.experiments import load_synthetic
from diatom.synthetic import GenConfig

TINY = dict(K_star=3, S_star=2, V=200, n_train=120, n_dev=30, n_test=30, n_neutral=1,
            block_size=20, doc_length=40, plot_length=100, sentences_per_label=20, seed=3)


@pytest.fixture(scope="session")
def tiny():
    """(synthetic, corpus, annotations, embedding table) for a small planted corpus."""
    return load_synthetic(GenConfig(**TINY))


@pytest.fixture(autouse=True)
def _quiet_torch():
    torch.set_default_dtype(torch.float32)
    logging.getLogger("diatom").setLevel(logging.WARNING)
    yield


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    def record(number: int, passed: bool | None, detail: str) -> bool:
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"criterion {number}: {status}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
