"""Online RFF-MMD change detection over a self-merging dyadic window list.

Each observation becomes a count-1 window holding its feature vector. After
every insert the detector sweeps all window boundaries, comparing the mean
embedding of the older windows with that of the newer ones, and then merges
the two newest windows while their counts agree. Window counts therefore
always spell out the binary decomposition of the number of retained
observations, so both memory and per-insert work are O(r log n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .kernel_features import KernelSpec, SpectralSample, feature_map, sample_frequencies
from .mmd_core import MeanEmbedding
from .thresholds import ThresholdPolicy

TWO_SAMPLE = "two-sample"
WITH_HISTORY = "with-history"
KNOWN_PRECHANGE = "known-prechange"
MODES = (TWO_SAMPLE, WITH_HISTORY, KNOWN_PRECHANGE)

DROP_PRECHANGE = "drop-prechange"
CLEAR = "clear"


@dataclass
class WindowSummary:
    """A block of consecutive observations: summed feature vectors and their count."""

    z_sum: np.ndarray = field(repr=False)
    count: int


@dataclass(frozen=True)
class Verdict:
    detected: bool
    t: int
    peak_stat: float
    detection_time: int | None = None
    estimated_change: int | None = None
    threshold_used: float = math.nan
    stat: float = math.nan  # statistic of the reported split


@dataclass(frozen=True)
class SweepResult:
    """Per-split statistics of one sweep.

    ``splits[k] = i`` means windows ``1..i`` form the older side (count
    ``c2``) and windows ``i+1..|W|`` the newer side (count ``c1``). Split 0
    (all windows on the newer side) only occurs when a reference embedding is
    available.
    """

    splits: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    stats: np.ndarray

    @property
    def best(self):
        k = int(np.argmax(self.stats))
        return int(self.splits[k]), float(self.stats[k])


class Detector:
    """Mutable detector state. Single writer: call :meth:`insert` from one thread."""

    def __init__(self, spectral: SpectralSample, policy: ThresholdPolicy, mode=TWO_SAMPLE,
                 history: MeanEmbedding | None = None,
                 prechange: MeanEmbedding | None = None, reset=DROP_PRECHANGE):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
        if mode == WITH_HISTORY and history is None:
            raise ValueError("with-history mode needs a history sample")
        if mode == KNOWN_PRECHANGE and prechange is None:
            raise ValueError("known-prechange mode needs a pre-change embedding")
        if reset not in (DROP_PRECHANGE, CLEAR):
            raise ValueError(f"unknown reset behaviour {reset!r}")
        for ref in (history, prechange):
            if ref is not None and ref.z_mean.shape != (spectral.n_features,):
                raise ValueError("reference embedding does not match the feature map")
        self.spectral = spectral
        self.policy = policy
        self.mode = mode
        self.history = history
        self.prechange = prechange
        self.reset = reset
        self.windows: list[WindowSummary] = []
        self.t = 0
        self.origin = 1
        self._work = 0

    # ------------------------------------------------------------ queries

    @property
    def counts(self):
        return [w.count for w in self.windows]

    @property
    def retained(self):
        return self.t - self.origin + 1

    @property
    def work_counter(self):
        """Cumulative window visits (appends, sweep steps, merge pops, drops)."""
        return self._work

    def estimated_change_index(self, split):
        """Absolute index of the last observation on the older side of ``split``."""
        if not 0 <= split < len(self.windows) or (split == 0 and self.mode == TWO_SAMPLE):
            raise ValueError(f"invalid split {split} for {len(self.windows)} windows")
        return self.origin - 1 + sum(w.count for w in self.windows[:split])

    # ------------------------------------------------------------ algorithm

    def detect_sweep(self) -> SweepResult:
        W = len(self.windows)
        if W < 2 and not (self.mode != TWO_SAMPLE and W >= 1):
            raise ValueError(f"too few windows ({W}) to sweep in {self.mode} mode")
        Z = np.array([w.z_sum for w in self.windows])
        counts = np.array(self.counts, dtype=np.float64)
        self._work += W
        # older side = windows[:i], newer side = windows[i:]
        prefix_z = np.cumsum(Z, axis=0)
        suffix_z = np.cumsum(Z[::-1], axis=0)[::-1]
        prefix_c = np.cumsum(counts)
        suffix_c = np.cumsum(counts[::-1])[::-1]

        first = 1 if self.mode == TWO_SAMPLE else 0
        splits = np.arange(first, W)
        newer_z = suffix_z[splits]
        c1 = suffix_c[splits]
        if self.mode == KNOWN_PRECHANGE:
            older_mean = self.prechange.z_mean[None, :]
            c2 = np.full(splits.shape, math.inf)
            scale = c1
        else:
            older_z = np.zeros((splits.size, Z.shape[1]))
            older_c = np.zeros(splits.size)
            has_prefix = splits > 0
            older_z[has_prefix] = prefix_z[splits[has_prefix] - 1]
            older_c[has_prefix] = prefix_c[splits[has_prefix] - 1]
            if self.mode == WITH_HISTORY:
                older_z += self.history.z_mean * self.history.count
                older_c += self.history.count
            older_mean = older_z / older_c[:, None]
            c2 = older_c
            scale = c1 * c2 / (c1 + c2)
        mmd = np.linalg.norm(newer_z / c1[:, None] - older_mean, axis=1)
        stats = np.sqrt(scale) * mmd
        return SweepResult(splits=splits, c1=c1, c2=c2, stats=stats)

    def maintain(self):
        """Merge the two newest windows while their counts agree."""
        ws = self.windows
        while len(ws) >= 2:
            w1 = ws.pop()
            w2 = ws.pop()
            self._work += 2
            if w1.count == w2.count:
                ws.append(WindowSummary(w2.z_sum + w1.z_sum, w1.count + w2.count))
            else:
                ws.append(w2)
                ws.append(w1)
                break
        return self

    def insert(self, x) -> Verdict:
        return self.insert_features(feature_map(x, self.spectral))

    def insert_features(self, z) -> Verdict:
        """Insert a precomputed feature vector (see :func:`feature_matrix`)."""
        self.t += 1
        self.windows.append(WindowSummary(np.array(z, dtype=np.float64), 1))
        self._work += 1
        verdict = Verdict(False, self.t, math.nan)
        W = len(self.windows)
        if W >= 2 or (self.mode != TWO_SAMPLE and W >= 1):
            sweep = self.detect_sweep()
            lam = np.broadcast_to(self.policy(self.t, sweep.c1, sweep.c2), sweep.stats.shape)
            peak = float(sweep.stats.max())
            hit = sweep.stats >= lam
            if hit.any():
                candidates = np.where(hit, sweep.stats, -np.inf)
                k = int(np.argmax(candidates))
                split = int(sweep.splits[k])
                change = self.estimated_change_index(split)
                verdict = Verdict(True, self.t, peak, self.t, change,
                                  float(lam[k]), float(sweep.stats[k]))
                self._drop(split)
            else:
                verdict = Verdict(False, self.t, peak)
        self.maintain()
        return verdict

    def _drop(self, split):
        if self.reset == CLEAR:
            self._work += len(self.windows)
            self.windows.clear()
            self.origin = self.t + 1
        else:
            dropped = self.windows[:split]
            self._work += len(dropped)
            self.origin += sum(w.count for w in dropped)
            del self.windows[:split]
        # the reference no longer describes the stream after a change
        self.mode = TWO_SAMPLE
        self.history = None
        self.prechange = None


def new_detector(spec: KernelSpec, r, seed, policy: ThresholdPolicy, mode=TWO_SAMPLE,
                 history=None, prechange=None, reset=DROP_PRECHANGE) -> Detector:
    """Build a detector; ``history`` is a sample of pre-change points, ``prechange``
    either a :class:`MeanEmbedding` or a large reference sample of the pre-change law."""
    spectral = sample_frequencies(spec, r, seed)
    hist = None
    if history is not None:
        X = np.asarray(history, dtype=np.float64)
        if X.size == 0:
            raise ValueError("history sample is empty")
        hist = MeanEmbedding.from_sample(X, spectral)
    pre = None
    if prechange is not None:
        if isinstance(prechange, MeanEmbedding):
            pre = replace(prechange, count=math.inf)
        else:
            pre = MeanEmbedding.from_sample(prechange, spectral, count=math.inf)
    return Detector(spectral, policy, mode, hist, pre, reset)


@dataclass(frozen=True)
class DetectorConfig:
    """Everything needed to rebuild a two-sample detector reproducibly."""

    kernel: KernelSpec
    features: int
    feature_seed: int
    policy: ThresholdPolicy

    @cached_property
    def spectral(self) -> SpectralSample:
        return sample_frequencies(self.kernel, self.features, self.feature_seed)

    def build(self, reset=DROP_PRECHANGE) -> Detector:
        return Detector(self.spectral, self.policy, reset=reset)

    def with_policy(self, policy) -> DetectorConfig:
        return replace(self, policy=policy)

    def describe(self) -> dict:
        return {
            "gamma": self.kernel.gamma, "dim": self.kernel.dim,
            "features": self.features, "feature_seed": self.feature_seed,
            "policy": self.policy.describe(),
        }
