import numpy as np
import pytest
from hypothesis import settings

from harfuse.data import SkeletonTopology, SyntheticSpec, generate_synthetic

settings.register_profile("harfuse", deadline=None, max_examples=50)
settings.load_profile("harfuse")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def chain3():
    return SkeletonTopology(3, ((0, 1), (1, 2)), (0, 0, 1))


@pytest.fixture(scope="session")
def tiny_split():
    """Small synthetic task for fast training tests (K=3, J=8, T=24)."""
    spec = SyntheticSpec(K=3, T=24, per_class_count=4, seed=3)
    return generate_synthetic(spec)
