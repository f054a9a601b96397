"""Plug-in MMD (quadratic-time reference) and the linear-time RFF-MMD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernel_features import KernelSpec, SpectralSample, _as_matrix, feature_matrix


@dataclass(frozen=True)
class MeanEmbedding:
    """Mean feature vector of ``count`` points.

    ``count`` may be ``math.inf`` for an embedding of a known distribution,
    which drops that side from the finite-sample normalization.
    """

    z_mean: np.ndarray = field(repr=False)
    count: float

    def __post_init__(self):
        if not self.count > 0:
            raise ValueError(f"count must be positive, got {self.count}")

    @classmethod
    def from_sample(cls, X, s: SpectralSample, count=None):
        Z = feature_matrix(X, s)
        if Z.shape[0] == 0:
            raise ValueError("cannot embed an empty sample")
        return cls(Z.mean(axis=0), Z.shape[0] if count is None else count)


def _check_pair(X, Y, dim):
    X, Y = _as_matrix(X, dim), _as_matrix(Y, dim)
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("both samples must be nonempty")
    return X, Y


def _plug_in(kxx, kyy, kxy):
    sq = kxx.mean() + kyy.mean() - 2.0 * kxy.mean()
    return math.sqrt(max(sq, 0.0))


def mmd_exact(X, Y, spec: KernelSpec) -> float:
    """Biased (V-statistic) MMD with the exact kernel; O((n + m)^2)."""
    X, Y = _check_pair(X, Y, spec.dim)
    return _plug_in(spec.gram(X, X), spec.gram(Y, Y), spec.gram(X, Y))


def mmd_exact_rff_kernel(X, Y, s: SpectralSample) -> float:
    """Same three double sums with the approximate kernel, pairwise."""
    X, Y = _check_pair(X, Y, s.dim)
    ZX, ZY = feature_matrix(X, s), feature_matrix(Y, s)
    return _plug_in(ZX @ ZX.T, ZY @ ZY.T, ZX @ ZY.T)


def mmd_rff(a: MeanEmbedding, b: MeanEmbedding) -> float:
    if a.z_mean.shape != b.z_mean.shape:
        raise ValueError(
            f"embedding lengths differ: {a.z_mean.shape[0]} vs {b.z_mean.shape[0]}"
        )
    return float(np.linalg.norm(a.z_mean - b.z_mean))


def normalized_stat(c1, c2, mmd) -> float:
    """``sqrt(c1 c2 / (c1 + c2)) * mmd``; an infinite side reduces to ``sqrt(c)``."""
    if not (c1 > 0 and c2 > 0):
        raise ValueError(f"counts must be positive, got {c1}, {c2}")
    if math.isinf(c1) and math.isinf(c2):
        raise ValueError("at most one side may be infinite")
    if math.isinf(c1):
        scale = c2
    elif math.isinf(c2):
        scale = c1
    else:
        scale = c1 * c2 / (c1 + c2)
    return math.sqrt(scale) * mmd
