import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from draftverify import MarkovOracle, VocabSpec  # noqa: E402


@pytest.fixture
def sticky_chain() -> MarkovOracle:
    """Two-token chain that strongly prefers repeating the previous token."""
    return MarkovOracle([0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]])


@pytest.fixture
def vocab2() -> VocabSpec:
    return VocabSpec(2)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
