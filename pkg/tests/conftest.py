import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthgen import embedding_table_for, planted_corpus  # noqa: E402


@pytest.fixture(scope="session")
def planted():
    """200-train / 60-test planted-evidence corpus and its ground truth."""
    return planted_corpus(n_train=200, n_test=60, seed=7)


@pytest.fixture(scope="session")
def small_planted():
    """Fast 60-train / 20-test variant for pipeline unit tests."""
    return planted_corpus(n_train=60, n_test=20, seed=19)


@pytest.fixture()
def toy_table():
    from u3e import EmbeddingTable
    import numpy as np

    vectors = {
        "q": np.array([1.0, 0.0, 0.0]),
        "a": np.array([0.8, 0.6, 0.0]),
        "b": np.array([0.0, 1.0, 0.0]),
        "c": np.array([1.0, 0.0, 0.0]),
        "d": np.array([1.0, 1.0, 0.0]),
    }
    return EmbeddingTable(vectors, dim=3)
