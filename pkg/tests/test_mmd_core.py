import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rffmmd.kernel_features import KernelSpec, feature_matrix, sample_frequencies
from rffmmd.mmd_core import MeanEmbedding, mmd_exact, mmd_exact_rff_kernel, mmd_rff, normalized_stat


def _embed(X, s):
    return MeanEmbedding.from_sample(X, s)


class TestMmdExact:
    def test_identical(self, rng):
        X = rng.normal(size=(20, 2))
        assert mmd_exact(X, X, KernelSpec(0.5, 2)) == pytest.approx(0.0, abs=1e-9)

    def test_singletons(self, spec1):
        # sqrt(2 - 2 e^-1)
        assert mmd_exact([[0.0]], [[1.0]], spec1) == pytest.approx(1.1243847729568004, rel=1e-12)

    def test_symmetry(self, rng):
        spec = KernelSpec(0.3, 3)
        X, Y = rng.normal(size=(15, 3)), rng.normal(1, size=(9, 3))
        assert mmd_exact(X, Y, spec) == pytest.approx(mmd_exact(Y, X, spec), rel=1e-12)

    def test_empty(self, spec1):
        with pytest.raises(ValueError):
            mmd_exact(np.empty((0, 1)), [[1.0]], spec1)

    def test_dimension_mismatch(self, spec1):
        with pytest.raises(ValueError):
            mmd_exact([[0.0, 1.0]], [[1.0, 2.0]], spec1)


class TestMmdRff:
    def test_matches_pairwise_oracle(self, rng):
        s = sample_frequencies(KernelSpec(0.4, 2), 32, seed=3)
        for _ in range(100):
            n, m = rng.integers(1, 33, size=2)
            X, Y = rng.normal(size=(n, 2)), rng.normal(0.5, size=(m, 2))
            oracle = mmd_exact_rff_kernel(X, Y, s)
            fast = mmd_rff(_embed(X, s), _embed(Y, s))
            assert abs(fast - oracle) <= 1e-9 * max(1.0, oracle)

    def test_identity(self, rng, small_spectral):
        X = rng.normal(size=(10, 3))
        a = _embed(X, small_spectral)
        assert mmd_rff(a, a) == 0.0
        assert mmd_exact_rff_kernel(X, X, small_spectral) == pytest.approx(0.0, abs=1e-9)

    def test_shuffle_invariance(self, rng, small_spectral):
        X, Y = rng.normal(size=(12, 3)), rng.normal(size=(7, 3))
        base = mmd_exact_rff_kernel(X, Y, small_spectral)
        shuffled = mmd_exact_rff_kernel(rng.permutation(X), rng.permutation(Y), small_spectral)
        assert shuffled == pytest.approx(base, rel=1e-12, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(1, 20), st.floats(0.1, 50))
    def test_range(self, seed, n, m, spread):
        r = np.random.default_rng(seed)
        s = sample_frequencies(KernelSpec(1.0, 2), 8, seed=seed)
        v = mmd_rff(_embed(spread * r.normal(size=(n, 2)), s), _embed(-spread * r.normal(size=(m, 2)), s))
        assert 0.0 <= v <= 2.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mmd_rff(MeanEmbedding(np.zeros(4), 1), MeanEmbedding(np.zeros(6), 1))

    def test_embedding_norm_bounded(self, rng, small_spectral):
        e = _embed(rng.normal(size=(40, 3)), small_spectral)
        assert np.linalg.norm(e.z_mean) <= 1.0 + 1e-12

    def test_consistency_with_exact_kernel(self, rng):
        spec = KernelSpec(0.5, 2)
        s = sample_frequencies(spec, 100_000, seed=17)
        for shift in (0.0, 0.5, 2.0):
            X, Y = rng.normal(size=(12, 2)), rng.normal(shift, size=(10, 2))
            exact = mmd_exact(X, Y, spec)
            assert abs(mmd_rff(_embed(X, s), _embed(Y, s)) - exact) <= 0.05


class TestNormalizedStat:
    def test_unit(self):
        assert normalized_stat(2, 2, 1.0) == 1.0

    def test_zero(self):
        assert normalized_stat(17, 3, 0.0) == 0.0

    @settings(max_examples=300)
    @given(st.integers(1, 10**6), st.integers(1, 10**6))
    def test_min_bound(self, c1, c2):
        h = c1 * c2 / (c1 + c2)
        assert 0.5 * min(c1, c2) <= h * (1 + 1e-15)
        assert h <= min(c1, c2)

    def test_dyadic_normalization(self):
        n = 1000
        for j in range(1, 9):
            c1 = 2**j
            assert normalized_stat(c1, n - c1, 1.0) == math.sqrt(c1 * (n - c1) / n)

    def test_infinite_reference(self):
        assert normalized_stat(16, math.inf, 0.5) == pytest.approx(2.0)

    def test_zero_count(self):
        with pytest.raises(ValueError):
            normalized_stat(0, 3, 1.0)


def test_null_tail_small():
    """Exceedance of sqrt(2) + eps stays under 1.5 exp(-eps^2 / 2) (2000 reps)."""
    s = sample_frequencies(KernelSpec(0.5, 2), 32, seed=1)
    rng = np.random.default_rng(99)
    n = m = 24
    stats = []
    for _ in range(2000):
        Z = feature_matrix(rng.normal(size=(n + m, 2)), s)
        stats.append(normalized_stat(n, m, np.linalg.norm(Z[:n].mean(0) - Z[n:].mean(0))))
    stats = np.array(stats)
    for eps in (1.0, 2.0, 3.0):
        assert np.mean(stats > math.sqrt(2) + eps) <= 1.5 * math.exp(-eps**2 / 2)
