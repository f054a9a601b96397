"""Run-length, detection-delay and threshold-tightness experiments.

Reports serialize to CSV: a ``# config`` line echoing the configuration,
one header line, one row per replication, and a trailing block of
``# key=value`` aggregate lines.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import bisect

from .detector import DetectorConfig
from .engine import replication_seed, run_batch
from .kernel_features import feature_matrix, median_heuristic, sample_frequencies
from .streams import ChangeStreamSpec, DistributionSpec, gaussian
from .thresholds import SQRT2, estimate_sigma_tilde, nearest_rank_quantile


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    columns: list
    records: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# config {json.dumps({'kind': self.kind, **self.config}, sort_keys=True)}\n")
        out.write(",".join(self.columns) + "\n")
        for rec in self.records:
            out.write(",".join(_fmt(rec[c]) for c in self.columns) + "\n")
        for key, value in self.aggregates.items():
            out.write(f"# {key}={_fmt(value)}\n")
        return out.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def column(self, name):
        return np.array([rec[name] for rec in self.records])


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _mean_se(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.sum() / v.size), se


def _spec_config(spec):
    if isinstance(spec, ChangeStreamSpec):
        return {
            "pre": _dist_config(spec.pre),
            "post": _dist_config(spec.post) if spec.post is not None else None,
            "eta": spec.eta if math.isfinite(spec.eta) else "inf",
        }
    return {"pre": _dist_config(spec)}


def _dist_config(d: DistributionSpec):
    out = {"family": d.family, "dim": d.dim, "mean": list(d.mean), "scale": d.scale}
    if d.components:
        out["components"] = [list(c) for c in d.components]
        out["weights"] = list(d.weights)
    return out


def run_arl(config: DetectorConfig, null_spec, reps, horizon, master_seed,
            workers=1) -> ExperimentReport:
    """Mean stopping time under no change; runs without an alarm count as ``horizon``."""
    res = run_batch(config, null_spec, reps, horizon, master_seed, workers=workers)
    report = ExperimentReport(
        "arl",
        {**config.describe(), "stream": _spec_config(null_spec), "reps": reps,
         "horizon": horizon, "master_seed": master_seed},
        ["rep", "seed", "stop_time", "censored"],
    )
    for i in range(reps):
        censored = res.stop_times[i] == 0
        report.records.append({
            "rep": i, "seed": replication_seed(master_seed, i),
            "stop_time": int(horizon if censored else res.stop_times[i]),
            "censored": bool(censored),
        })
    arl, se = _mean_se(report.column("stop_time"))
    report.aggregates = {
        "arl": arl, "stderr": se,
        "censored": int(report.column("censored").sum()),
        "reps": reps, "horizon": horizon,
    }
    return report


def run_edd(config: DetectorConfig, change_spec: ChangeStreamSpec, reps=100, master_seed=0,
            max_delay=1024, workers=1) -> ExperimentReport:
    """Mean delay ``N - eta`` over replications that alarm after the change.

    Alarms at or before ``eta`` are false alarms: counted, excluded from the
    delay mean. Runs end ``max_delay`` observations after the change.
    """
    eta = change_spec.eta
    if not math.isfinite(eta):
        horizon = int(max_delay)
    else:
        horizon = int(eta + max_delay)
    res = run_batch(config, change_spec, reps, horizon, master_seed, workers=workers)
    report = ExperimentReport(
        "edd",
        {**config.describe(), "stream": _spec_config(change_spec), "reps": reps,
         "max_delay": max_delay, "master_seed": master_seed},
        ["rep", "seed", "stop_time", "detected", "false_alarm", "delay", "estimated_change"],
    )
    for i in range(reps):
        n = int(res.stop_times[i])
        detected = n > 0
        false_alarm = detected and n <= eta
        delay = int(n - eta) if detected and not false_alarm else ""
        report.records.append({
            "rep": i, "seed": replication_seed(master_seed, i), "stop_time": n if detected else "",
            "detected": detected, "false_alarm": false_alarm, "delay": delay,
            "estimated_change": int(res.changes[i]) if detected else "",
        })
    delays = [r["delay"] for r in report.records if r["delay"] != ""]
    edd, se = _mean_se(delays)
    n_det = len(delays)
    n_fa = sum(r["false_alarm"] for r in report.records)
    report.aggregates = {
        "edd": edd, "stderr": se, "detections": n_det, "false_alarms": n_fa,
        "censored": reps - n_det - n_fa, "detection_rate": n_det / reps,
        "reps": reps, "horizon": horizon,
    }
    return report


def distribution_free_bound(alpha, m, n) -> float:
    """Upper (1 - alpha) bound on the unnormalized RFF-MMD from the McDiarmid tail."""
    return (SQRT2 + math.sqrt(2.0 * math.log(1.0 / alpha))) * math.sqrt((m + n) / (m * n))


def bernstein_bound(alpha, m, n, sigma_tilde) -> float:
    """Solve ``2 exp(-min(m, n) eps^2 / (2 (sigma^2 + 2 sqrt(2) eps))) = alpha`` for eps."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    k = min(m, n)
    s2 = sigma_tilde**2

    def gap(eps):
        return 2.0 * math.exp(-0.5 * k * eps * eps / (s2 + 2.0 * SQRT2 * eps)) - alpha

    hi = 1.0
    while gap(hi) > 0:
        hi *= 2.0
    return bisect(gap, 0.0, hi, xtol=1e-10)


def run_threshold_comparison(spec: DistributionSpec | None = None, n=1000, r=1000, rounds=1000,
                             alpha=0.01, master_seed=0) -> ExperimentReport:
    """Empirical null quantiles of RFF-MMD against the two theoretical bounds.

    A fixed pooled sample of ``2n`` points sets the bandwidth (median
    heuristic) and sigma-tilde. Resampling draws fresh pairs of size ``n``
    each round; permutation reshuffles the fixed pooled sample.
    """
    spec = spec or gaussian(1)
    rng = np.random.default_rng(master_seed)
    pooled = spec.sample(rng, 2 * n)
    kernel = median_heuristic(pooled)
    spectral = sample_frequencies(kernel, r, replication_seed(master_seed, 0x5EED))
    sigma_tilde = estimate_sigma_tilde(pooled, kernel)

    Zp = feature_matrix(pooled, spectral)
    total = Zp.sum(axis=0)
    resample, permute = np.empty(rounds), np.empty(rounds)
    for i in range(rounds):
        rr = np.random.default_rng(replication_seed(master_seed, i + 1))
        Z = feature_matrix(spec.sample(rr, 2 * n), spectral)
        resample[i] = np.linalg.norm(Z[:n].mean(axis=0) - Z[n:].mean(axis=0))
        idx = rr.permutation(2 * n)[:n]
        first = Zp[idx].sum(axis=0)
        permute[i] = np.linalg.norm(first / n - (total - first) / n)

    level = 1.0 - alpha
    q_resample = nearest_rank_quantile(resample, level)
    q_permute = nearest_rank_quantile(permute, level)
    free = distribution_free_bound(alpha, n, n)
    bern = bernstein_bound(alpha, n, n, sigma_tilde)
    values = {"resampling": q_resample, "permutation": q_permute,
              "distribution_free": free, "bernstein": bern}
    report = ExperimentReport(
        "compare",
        {"stream": _spec_config(spec), "n": n, "features": r, "rounds": rounds,
         "alpha": alpha, "master_seed": master_seed},
        ["round", "resample_mmd", "permutation_mmd"],
    )
    for i in range(rounds):
        report.records.append({"round": i, "resample_mmd": float(resample[i]),
                               "permutation_mmd": float(permute[i])})
    report.aggregates = {
        "gamma": kernel.gamma, "sigma_tilde": sigma_tilde,
        "resampling_quantile": q_resample, "permutation_quantile": q_permute,
        "distribution_free_bound": free, "bernstein_bound": bern,
        "ordering": "<".join(sorted(values, key=values.get)),
    }
    return report
