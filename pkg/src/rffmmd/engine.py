"""Lockstep simulation of many independent detectors.

Replications that have not alarmed share the same window layout (it only
depends on t), so their window sums can be stacked and swept together. Each
replication stops at its first alarm; this is the regime of every ARL/EDD
experiment and of threshold calibration. The per-replication arithmetic
does not depend on how replications are grouped, which keeps results
identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .detector import DetectorConfig
from .kernel_features import feature_matrix
from .streams import ChangeStreamSpec, DistributionSpec, StreamReader

# Upper bound on the size (in float64 entries) of one block of precomputed features.
FEATURE_BLOCK_ENTRIES = 2_000_000
MASK64 = (1 << 64) - 1


def replication_seed(master_seed, index):
    return (int(master_seed) ^ int(index)) & MASK64


@dataclass(frozen=True)
class SpecSource:
    """Picklable ``seed -> reader`` factory for a change-stream spec."""

    spec: ChangeStreamSpec

    def __call__(self, seed):
        return StreamReader(self.spec, seed)


def as_source_factory(source):
    if isinstance(source, DistributionSpec):
        return SpecSource(ChangeStreamSpec(pre=source))
    if isinstance(source, ChangeStreamSpec):
        return SpecSource(source)
    if callable(source):
        return source
    raise TypeError(f"cannot build stream readers from {type(source).__name__}")


@dataclass
class BatchResult:
    """Per-replication outcome; ``stop_times[i] == 0`` means no alarm before the horizon."""

    stop_times: np.ndarray
    changes: np.ndarray
    peaks: np.ndarray | None
    horizon: int


def run_batch(config: DetectorConfig, source, reps, horizon, master_seed,
              record_peaks=False, workers=1) -> BatchResult:
    """Run ``reps`` replications for up to ``horizon`` inserts each.

    Replication ``i`` reads its stream from ``factory(master_seed ^ i)``.
    With ``record_peaks`` the maximal split statistic of every insert is
    kept (NaN where no split exists, i.e. t = 1).
    """
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}")
    factory = as_source_factory(source)
    workers = max(1, min(int(workers), reps))
    chunks = [c for c in np.array_split(np.arange(reps), workers) if c.size]
    args = [(config, factory, c, int(horizon), master_seed, record_peaks) for c in chunks]
    if workers == 1:
        parts = [_run_chunk(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk_args, args))
    stop = np.concatenate([p[0] for p in parts])
    change = np.concatenate([p[1] for p in parts])
    peaks = np.concatenate([p[2] for p in parts]) if record_peaks else None
    return BatchResult(stop, change, peaks, int(horizon))


def _run_chunk_args(args):
    return _run_chunk(*args)


def _run_chunk(config, factory, indices, horizon, master_seed, record_peaks):
    spectral = config.spectral
    policy = config.policy
    readers = [factory(replication_seed(master_seed, i)) for i in indices]
    R, F = len(readers), spectral.n_features
    max_windows = int(math.floor(math.log2(horizon))) + 2
    prefix = np.zeros((max_windows, R, F))  # prefix[i] = sum of windows 0..i
    work = np.empty((max_windows, R, F))
    counts: list[int] = []
    cum: list[int] = []  # cum[i] = counts[0] + ... + counts[i]
    alive = np.ones(R, dtype=bool)
    stop = np.zeros(R, dtype=np.int64)
    change = np.zeros(R, dtype=np.int64)
    peaks = np.full((R, horizon), np.nan) if record_peaks else None
    block = max(1, min(1024, FEATURE_BLOCK_ENTRIES // (R * F)))

    t = 0
    while t < horizon and alive.any():
        k = min(block, horizon - t)
        feats = np.zeros((k, R, F))
        for j in np.flatnonzero(alive):
            feats[:, j, :] = feature_matrix(readers[j].take(k), spectral)
        for s in range(k):
            t += 1
            W = len(counts)
            if W:
                np.add(prefix[W - 1], feats[s], out=prefix[W])
            else:
                prefix[0] = feats[s]
            counts.append(1)
            cum.append((cum[-1] if cum else 0) + 1)
            W += 1
            if W >= 2:
                c2 = np.asarray(cum[:-1], dtype=np.float64)
                c1 = cum[-1] - c2
                B = work[:W - 1]
                # c1 * (newer mean - older mean) = total - prefix * (1 + c1/c2)
                np.multiply(prefix[:W - 1], (1.0 + c1 / c2)[:, None, None], out=B)
                np.subtract(prefix[W - 1], B, out=B)
                sq = np.einsum("wrf,wrf->wr", B, B)
                stat = np.sqrt(sq) * (np.sqrt(c1 * c2 / (c1 + c2)) / c1)[:, None]
                lam = np.broadcast_to(policy(t, c1, c2), c1.shape)
                if record_peaks:
                    peaks[:, t - 1] = stat.max(axis=0)
                hit = (stat >= lam[:, None]) & alive[None, :]
                fired = np.flatnonzero(hit.any(axis=0))
                for j in fired:
                    best = int(np.argmax(np.where(hit[:, j], stat[:, j], -np.inf)))
                    stop[j] = t
                    change[j] = cum[best]
                    alive[j] = False
            while len(counts) >= 2 and counts[-1] == counts[-2]:
                W = len(counts)
                prefix[W - 2] = prefix[W - 1]
                counts.pop()
                counts[-1] *= 2
                del cum[-2]
            if not alive.any():
                break
    return stop, change, peaks
