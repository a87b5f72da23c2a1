"""Shared pytest fixtures and configuration."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.core.cmdp import Policy  # noqa: E402
from tests.fixtures.sample_data import get_sample_bandit_cmdp, get_sample_chain_cmdp  # noqa: E402


@pytest.fixture
def chain_cmdp():
    """Two-state chain with budget 0.6 and horizon 2."""
    return get_sample_chain_cmdp()


@pytest.fixture
def bandit_cmdp():
    """Single-state bandit with budget 0.5."""
    return get_sample_bandit_cmdp()


@pytest.fixture
def uniform_chain_policy():
    """Uniform policy matching the chain's sizes."""
    return Policy.uniform(2, 2, 2)


@pytest.fixture
def rng():
    """Seeded generator for sampling tests."""
    return np.random.default_rng(0)
