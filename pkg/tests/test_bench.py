import json
import math

import numpy as np
import pytest

from rffmmd.bench import (
    ExperimentReport, bernstein_bound, distribution_free_bound, run_arl, run_edd,
    run_threshold_comparison,
)
from rffmmd.detector import DetectorConfig
from rffmmd.kernel_features import KernelSpec
from rffmmd.streams import ChangeStreamSpec, gaussian, uniform
from rffmmd.thresholds import Constant, FixedARL


def cfg(policy, dim=2, r=16):
    return DetectorConfig(KernelSpec(0.5, dim), r, 1, policy)


def parse_report(text):
    lines = text.splitlines()
    config = json.loads(lines[0][len("# config "):])
    header = lines[1].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[2:] if not ln.startswith("#")]
    aggs = dict(ln[2:].split("=", 1) for ln in lines[2:] if ln.startswith("# "))
    return config, rows, aggs


class TestArl:
    def test_censored(self):
        rep = run_arl(cfg(Constant(math.inf)), gaussian(2), 5, 50, 0)
        assert rep.aggregates["arl"] == 50 and rep.aggregates["censored"] == 5

    def test_immediate(self):
        rep = run_arl(cfg(Constant(0.0)), gaussian(2), 5, 50, 0)
        assert rep.aggregates["arl"] == 2 and rep.aggregates["censored"] == 0

    def test_guarantee_small(self):
        rep = run_arl(cfg(FixedARL(50)), gaussian(2), 40, 1000, 3)
        assert rep.aggregates["arl"] >= 50

    def test_aggregates_recomputable(self):
        rep = run_arl(cfg(FixedARL(5)), gaussian(2), 30, 200, 4)
        _, rows, aggs = parse_report(rep.to_csv())
        stops = np.array([int(r["stop_time"]) for r in rows], dtype=float)
        assert float(aggs["arl"]) == stops.sum() / stops.size
        assert float(aggs["stderr"]) == stops.std(ddof=1) / math.sqrt(stops.size)
        assert int(aggs["censored"]) == sum(r["censored"] == "1" for r in rows)

    def test_workers(self):
        a = run_arl(cfg(FixedARL(5)), gaussian(2), 9, 100, 8, workers=1).to_csv()
        b = run_arl(cfg(FixedARL(5)), gaussian(2), 9, 100, 8, workers=2).to_csv()
        assert a == b


class TestEdd:
    def test_null_all_censored(self):
        spec = ChangeStreamSpec(gaussian(2), gaussian(2), eta=64)
        rep = run_edd(cfg(Constant(math.inf)), spec, reps=10, max_delay=64)
        assert rep.aggregates["censored"] == 10 and rep.aggregates["detections"] == 0
        assert math.isnan(rep.aggregates["edd"])

    def test_delay_floor(self):
        # far-apart supports: the statistic saturates as soon as a post-change point arrives
        spec = ChangeStreamSpec(uniform(1), uniform(1, shift=50.0), eta=64)
        rep = run_edd(cfg(Constant(1.0), dim=1, r=64), spec, reps=10, max_delay=64)
        delays = [r["delay"] for r in rep.records if r["delay"] != ""]
        assert delays and min(delays) >= 1

    def test_false_alarms_excluded(self):
        spec = ChangeStreamSpec(gaussian(2), gaussian(2, 3.0), eta=64)
        rep = run_edd(cfg(Constant(0.0)), spec, reps=6, max_delay=32)
        assert rep.aggregates["false_alarms"] == 6 and rep.aggregates["detections"] == 0

    def test_aggregates_recomputable(self):
        spec = ChangeStreamSpec(gaussian(2), gaussian(2, 4.0), eta=64)
        rep = run_edd(cfg(FixedARL(100), r=32), spec, reps=20, max_delay=512)
        _, rows, aggs = parse_report(rep.to_csv())
        delays = [int(r["delay"]) for r in rows if r["delay"]]
        assert float(aggs["edd"]) == sum(delays) / len(delays)
        assert int(aggs["detections"]) == len(delays) > 0


class TestBounds:
    def test_distribution_free(self):
        assert distribution_free_bound(0.01, 1000, 1000) == pytest.approx(0.19896836169166982, rel=1e-12)

    def test_bernstein(self):
        assert bernstein_bound(0.01, 1000, 1000, 1.0) == pytest.approx(0.119010959558309, abs=1e-9)
        assert bernstein_bound(0.01, 1000, 1000, 1.5) == pytest.approx(0.170121346942668, abs=1e-9)

    def test_bernstein_root(self):
        eps = bernstein_bound(0.05, 200, 300, 1.2)
        lhs = 2 * math.exp(-0.5 * 200 * eps**2 / (1.44 + 2 * math.sqrt(2) * eps))
        assert lhs == pytest.approx(0.05, rel=1e-7)

    def test_bernstein_monotone(self):
        assert bernstein_bound(0.01, 500, 500, 1.0) < bernstein_bound(0.001, 500, 500, 1.0)
        assert bernstein_bound(0.01, 2000, 2000, 1.0) < bernstein_bound(0.01, 500, 500, 1.0)


def test_comparison_small():
    rep = run_threshold_comparison(gaussian(1), n=200, r=100, rounds=200, alpha=0.05, master_seed=1)
    agg = rep.aggregates
    assert len(rep.records) == 200
    assert set(agg["ordering"].split("<")) == {"resampling", "permutation", "distribution_free", "bernstein"}
    assert agg["distribution_free_bound"] >= max(agg["resampling_quantile"], agg["permutation_quantile"])
    again = run_threshold_comparison(gaussian(1), n=200, r=100, rounds=200, alpha=0.05, master_seed=1)
    assert again.to_csv() == rep.to_csv()


def test_report_layout():
    rep = ExperimentReport("x", {"a": 1}, ["u", "v"], [{"u": 1, "v": 0.5}], {"m": 2.0})
    assert rep.to_csv() == '# config {"a": 1, "kind": "x"}\nu,v\n1,0.5\n# m=2.0\n'
