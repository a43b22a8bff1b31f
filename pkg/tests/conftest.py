import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from ids4nr.dataset import build_dataset, load_interactions, select_cold_items, split_train_test
from ids4nr.synthetic import write_synthetic

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synthetic")
    write_synthetic(d, num_users=30, num_items=40, per_user=8, seed=3)
    return d


@pytest.fixture(scope="session")
def synthetic_dataset(synthetic_dir):
    d = Path(synthetic_dir)
    log = load_interactions(d / "interactions.tsv")
    return build_dataset(log, d / "user_attrs.tsv", d / "item_attrs.tsv", k_core=1,
                         name="synthetic")


@pytest.fixture(scope="session")
def synthetic_split(synthetic_dataset):
    cold = select_cold_items(synthetic_dataset)
    return split_train_test(synthetic_dataset, cold, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
