"""Gaussian kernel, spectral sampling and random Fourier feature maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

# Beyond this many points the median heuristic and sigma-tilde work on a
# fixed-seed subsample.
MAX_PAIRWISE_POINTS = 2000
SUBSAMPLE_SEED = 0


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel ``K(x, y) = exp(-gamma * ||x - y||^2)`` on R^dim.

    The spectral measure of this kernel is a centered normal with variance
    ``2 * gamma`` per coordinate; ``sample_spectral`` draws from it. Other
    translation-invariant kernels only need to provide the same three methods.
    """

    gamma: float
    dim: int

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")

    def evaluate(self, x, y):
        x, y = _as_vector(x, self.dim), _as_vector(y, self.dim)
        diff = x - y
        return float(np.exp(-self.gamma * np.dot(diff, diff)))

    def gram(self, X, Y):
        """Kernel matrix between the rows of ``X`` and ``Y``."""
        X, Y = _as_matrix(X, self.dim), _as_matrix(Y, self.dim)
        sq = (
            np.sum(X * X, axis=1)[:, None]
            + np.sum(Y * Y, axis=1)[None, :]
            - 2.0 * X @ Y.T
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-self.gamma * sq)

    def sample_spectral(self, r, rng):
        return rng.normal(0.0, math.sqrt(2.0 * self.gamma), size=(r, self.dim))

    @property
    def spectral_sigma(self):
        """sqrt(E ||omega||^2) under the spectral measure."""
        return math.sqrt(2.0 * self.gamma * self.dim)


@dataclass(frozen=True)
class SpectralSample:
    """``r`` frequencies drawn from the kernel's spectral measure."""

    frequencies: np.ndarray = field(repr=False)
    r: int
    seed: int
    kernel: KernelSpec

    @property
    def dim(self):
        return self.kernel.dim

    @property
    def n_features(self):
        return 2 * self.r


def _as_vector(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1 or x.shape[0] != dim:
        raise ValueError(f"expected a vector of length {dim}, got shape {x.shape}")
    return x


def _as_matrix(X, dim):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1 and dim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"expected rows of length {dim}, got shape {X.shape}")
    return X


def as_points(sample):
    """Coerce a list of points (or a 1-d sequence of scalars) to an (n, d) array."""
    X = np.asarray(sample, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"expected a list of d-vectors, got shape {X.shape}")
    return X


def _subsample(X):
    if X.shape[0] <= MAX_PAIRWISE_POINTS:
        return X
    rng = np.random.default_rng(SUBSAMPLE_SEED)
    idx = rng.choice(X.shape[0], size=MAX_PAIRWISE_POINTS, replace=False)
    return X[np.sort(idx)]


def gaussian_kernel(x, y, spec: KernelSpec) -> float:
    return spec.evaluate(x, y)


def median_heuristic(sample) -> KernelSpec:
    """Bandwidth from the median pairwise distance ``m``: ``gamma = 1 / (2 m^2)``.

    The median runs over distinct unordered pairs, on a fixed-seed subsample
    of 2000 points for larger inputs.
    """
    X = as_points(sample)
    if X.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 points")
    m = float(np.median(pdist(_subsample(X))))
    if m <= 0.0:
        raise ValueError("median pairwise distance is zero; sample is degenerate")
    return KernelSpec(gamma=1.0 / (2.0 * m * m), dim=X.shape[1])


def sample_frequencies(spec: KernelSpec, r: int, seed: int) -> SpectralSample:
    if int(r) != r or r < 1:
        raise ValueError(f"need at least one random feature, got r={r}")
    rng = np.random.default_rng(seed)
    freqs = spec.sample_spectral(int(r), rng)
    freqs.setflags(write=False)
    return SpectralSample(frequencies=freqs, r=int(r), seed=seed, kernel=spec)


def feature_matrix(X, s: SpectralSample) -> np.ndarray:
    """Feature map applied row-wise; returns an (n, 2r) array.

    Columns interleave ``sin(w_j . x)`` and ``cos(w_j . x)``, scaled by
    ``1/sqrt(r)`` so every row has unit norm.
    """
    X = _as_matrix(X, s.dim)
    # einsum rather than BLAS: each row's value must not depend on batch shape
    proj = np.einsum("nk,rk->nr", X, s.frequencies)
    out = np.empty((X.shape[0], 2 * s.r))
    np.sin(proj, out=out[:, 0::2])
    np.cos(proj, out=out[:, 1::2])
    out *= 1.0 / math.sqrt(s.r)
    return out


def feature_map(x, s: SpectralSample) -> np.ndarray:
    x = _as_vector(x, s.dim)
    return feature_matrix(x.reshape(1, -1), s)[0]


def approx_kernel(x, y, s: SpectralSample) -> float:
    return float(np.dot(feature_map(x, s), feature_map(y, s)))


def h_function(d, domain_measure, sigma) -> float:
    """Dimension/domain term of the uniform RFF approximation bound."""
    if d <= 0 or domain_measure <= 0 or sigma <= 0:
        raise ValueError("h_function arguments must be positive")
    L = math.log(2.0 * domain_measure + 1.0)
    return (
        23.0 * math.sqrt(2.0 * d * L)
        + 32.0 * math.sqrt(2.0 * d * math.log(sigma + 1.0))
        + 16.0 * math.sqrt(2.0 * d / L)
    )


def detection_constants():
    """Absolute constants (C1, C2, C3) of the detection-delay guarantee.

    C2 evaluates negative as displayed; ``required_features`` uses its
    magnitude.
    """
    s2, s6, s50, s54 = (math.sqrt(v) for v in (2.0, 6.0, 50.0, 54.0))
    c3 = (s6 + s50 + s54) ** 2 / (4.0 / (s2 - 1.0)) ** 2
    c2 = ((s2 - 1.0) / 4.0 - (s50 + s6) / math.sqrt(c3)) / 3.0
    return 2.0 * c3, c2, c3


def required_features(alpha, mmd_gap, d, domain_measure, spec: KernelSpec) -> int:
    """Smallest ``r`` meeting the feature-count condition for level ``alpha``.

    ``mmd_gap`` is the (unknown in practice) kernel MMD between pre- and
    post-change laws; ``domain_measure`` the Lebesgue measure of the compact
    support.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if mmd_gap <= 0:
        raise ValueError(f"mmd_gap must be positive, got {mmd_gap}")
    sigma = math.sqrt(2.0 * spec.gamma * d)
    _, c2, _ = detection_constants()
    root = abs(c2) * (h_function(d, domain_measure, sigma) + math.sqrt(2.0 * math.log(2.0 / alpha)))
    root /= mmd_gap**2
    r = max(1, math.ceil(root * root))
    # guard the ceil against rounding on either side
    while r > 1 and math.sqrt(r - 1) >= root:
        r -= 1
    while math.sqrt(r) < root:
        r += 1
    return r
