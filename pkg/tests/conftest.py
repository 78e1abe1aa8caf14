import numpy as np
import pytest

from mmbridge.data import DatasetSpec, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_spec():
    return DatasetSpec(num_classes=4, codebook_size=4, seq_len=3, code_dim=4,
                       src_dim=6, tgt_dim=5, train_per_class=6, test_per_class=3)


@pytest.fixture(scope="session")
def tiny_data(tiny_spec):
    return generate_dataset(tiny_spec)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
