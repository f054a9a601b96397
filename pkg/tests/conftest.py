import math

import numpy as np
import pytest

from rffmmd import KernelSpec, sample_frequencies


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def spec1():
    return KernelSpec(gamma=1.0, dim=1)


@pytest.fixture
def small_spectral():
    return sample_frequencies(KernelSpec(gamma=0.5, dim=3), 16, seed=11)


def binary_decomposition(n):
    """Distinct powers of two summing to n, largest first."""
    return [1 << k for k in range(n.bit_length() - 1, -1, -1) if n >> k & 1]


@pytest.fixture
def decompose():
    return binary_decomposition
