import math

import numpy as np
import pytest

from rffmmd.detector import DetectorConfig
from rffmmd.engine import replication_seed, run_batch
from rffmmd.kernel_features import KernelSpec
from rffmmd.streams import ChangeStreamSpec, StreamReader, gaussian
from rffmmd.thresholds import Constant, FixedARL, ScaleARL, UniformFA


def single_runs(config, spec, reps, horizon, master):
    stops, changes = [], []
    for i in range(reps):
        det = config.build()
        X = StreamReader(spec, replication_seed(master, i)).take(horizon)
        for x in X:
            v = det.insert(x)
            if v.detected:
                stops.append(v.detection_time)
                changes.append(v.estimated_change)
                break
        else:
            stops.append(0)
            changes.append(0)
    return stops, changes


@pytest.mark.parametrize("policy", [Constant(1.0), ScaleARL(1.01, 0.1), UniformFA(0.5), FixedARL(5)])
def test_matches_single_detector(policy):
    cfg = DetectorConfig(KernelSpec(0.5, 2), 8, 3, policy)
    spec = ChangeStreamSpec(gaussian(2), gaussian(2, 1.5), eta=40)
    res = run_batch(cfg, spec, 12, 150, 21)
    stops, changes = single_runs(cfg, spec, 12, 150, 21)
    assert res.stop_times.tolist() == stops
    assert res.changes.tolist() == changes


def test_worker_count_irrelevant():
    cfg = DetectorConfig(KernelSpec(0.5, 3), 16, 2, Constant(math.inf))
    a = run_batch(cfg, gaussian(3), 7, 300, 5, record_peaks=True, workers=1)
    b = run_batch(cfg, gaussian(3), 7, 300, 5, record_peaks=True, workers=3)
    assert np.array_equal(a.peaks, b.peaks, equal_nan=True)
    assert np.isnan(a.peaks[:, 0]).all() and np.isfinite(a.peaks[:, 1:]).all()


def test_seed_derivation():
    assert replication_seed(0b1010, 0b0110) == 0b1100
    assert replication_seed(2**64 - 1, 1) == 2**64 - 2


def test_invalid():
    cfg = DetectorConfig(KernelSpec(0.5, 3), 4, 2, Constant(1.0))
    with pytest.raises(ValueError):
        run_batch(cfg, gaussian(3), 0, 10, 0)
    with pytest.raises(TypeError):
        run_batch(cfg, 3.0, 1, 10, 0)
