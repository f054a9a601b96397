"""Rejection thresholds for the online RFF-MMD stopping rule.

Every policy maps ``(t, c1, c2)`` (current time and the two side counts of a
split) to a threshold. ``c1``/``c2`` may be numpy arrays; an infinite count
stands for a known reference distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernel_features import KernelSpec, _subsample, as_points

SQRT2 = math.sqrt(2.0)
CALIBRATION_MAGIC = "# rffmmd-calibration v1"


def _check_gamma_run(gamma_run):
    if not gamma_run > 1:
        raise ValueError(f"target run length must exceed 1, got {gamma_run}")


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _check_sigma(sigma_tilde):
    if not (sigma_tilde >= 0 and math.isfinite(sigma_tilde)):
        raise ValueError(f"sigma_tilde must be finite and nonnegative, got {sigma_tilde}")


def arl_log_term(gamma_run):
    """``log(4 gamma log2(2 gamma))``."""
    _check_gamma_run(gamma_run)
    return math.log(4.0 * gamma_run * math.log2(2.0 * gamma_run))


def fa_log_term(alpha, n):
    """``log(n/alpha) + log(log2 n) + 0.5 log(log2 n)`` (scale-dependent variant)."""
    _check_alpha(alpha)
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    ll = math.log(math.log2(n))
    return math.log(n / alpha) + 1.5 * ll


def threshold_arl(gamma_run) -> float:
    return SQRT2 + math.sqrt(2.0 * arl_log_term(gamma_run))


def threshold_fa(alpha, n) -> float:
    _check_alpha(alpha)
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    inner = math.log(n / alpha) + 2.0 * math.log(math.log2(n)) + math.log(math.log2(2.0 * n))
    return SQRT2 + math.sqrt(2.0 * inner)


def _scale_form(f, min_side, sigma_tilde):
    min_side = np.asarray(min_side, dtype=np.float64)
    if np.any(min_side < 1):
        raise ValueError("min_side must be at least 1")
    _check_sigma(sigma_tilde)
    out = 4.0 * SQRT2 * f / np.sqrt(min_side) + sigma_tilde * math.sqrt(2.0 * f)
    return float(out) if out.ndim == 0 else out


def threshold_scale_arl(gamma_run, min_side, sigma_tilde):
    return _scale_form(arl_log_term(gamma_run), min_side, sigma_tilde)


def threshold_scale_fa(alpha, n, min_side, sigma_tilde):
    return _scale_form(fa_log_term(alpha, n), min_side, sigma_tilde)


def _min_side(c1, c2):
    return np.minimum(np.asarray(c1, dtype=np.float64), np.asarray(c2, dtype=np.float64))


def _broadcast(value, c1, c2):
    shape = np.broadcast_shapes(np.shape(c1), np.shape(c2))
    if shape == ():
        return float(value)
    return np.full(shape, float(value))


class ThresholdPolicy:
    """Base class; subclasses implement ``__call__(t, c1, c2)``."""

    #: True when the threshold depends on t (so a reset keeps indexing by t).
    time_indexed = False

    def __call__(self, t, c1, c2):
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(ThresholdPolicy):
    """A fixed threshold, e.g. ``inf`` to disable alarms or 0 to always alarm."""

    value: float

    def __call__(self, t, c1, c2):
        return _broadcast(self.value, c1, c2)

    def describe(self):
        return f"constant:{self.value!r}"


@dataclass(frozen=True)
class FixedARL(ThresholdPolicy):
    """Distribution-free constant threshold guaranteeing mean run length >= gamma_run."""

    gamma_run: float
    value: float = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "value", threshold_arl(self.gamma_run))

    def __call__(self, t, c1, c2):
        return _broadcast(self.value, c1, c2)

    def describe(self):
        return f"arl:{self.gamma_run!r}"


@dataclass(frozen=True)
class UniformFA(ThresholdPolicy):
    """Time-indexed threshold bounding the probability of ever alarming by alpha."""

    alpha: float
    time_indexed = True

    def __post_init__(self):
        _check_alpha(self.alpha)

    def __call__(self, t, c1, c2):
        # the stopping rule only tests from n = 2 on
        value = math.inf if t < 2 else threshold_fa(self.alpha, t)
        return _broadcast(value, c1, c2)

    def describe(self):
        return f"fa:{self.alpha!r}"


@dataclass(frozen=True)
class ScaleARL(ThresholdPolicy):
    gamma_run: float
    sigma_tilde: float

    def __post_init__(self):
        _check_gamma_run(self.gamma_run)
        _check_sigma(self.sigma_tilde)

    def __call__(self, t, c1, c2):
        return threshold_scale_arl(self.gamma_run, _min_side(c1, c2), self.sigma_tilde)

    def describe(self):
        return f"scale-arl:{self.gamma_run!r} sigma_tilde={self.sigma_tilde!r}"


@dataclass(frozen=True)
class ScaleFA(ThresholdPolicy):
    alpha: float
    sigma_tilde: float
    time_indexed = True

    def __post_init__(self):
        _check_alpha(self.alpha)
        _check_sigma(self.sigma_tilde)

    def __call__(self, t, c1, c2):
        if t < 2:
            return _broadcast(math.inf, c1, c2)
        return threshold_scale_fa(self.alpha, t, _min_side(c1, c2), self.sigma_tilde)

    def describe(self):
        return f"scale-fa:{self.alpha!r} sigma_tilde={self.sigma_tilde!r}"


@dataclass(frozen=True)
class MonteCarlo(ThresholdPolicy):
    """Constant threshold calibrated by simulation to a target run length."""

    lambda_: float
    target_arl: float
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __call__(self, t, c1, c2):
        return _broadcast(self.lambda_, c1, c2)

    def describe(self):
        return f"mc:{self.lambda_!r} target_arl={self.target_arl!r}"


def estimate_sigma_tilde(sample, spec: KernelSpec) -> float:
    """Plug-in ``sqrt(2 mean K(x_i, x_i) - mean_{i != j} K(x_i, x_j))``."""
    X = as_points(sample)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 points to estimate sigma_tilde")
    X = _subsample(X)
    G = spec.gram(X, X)
    n = G.shape[0]
    diag = np.trace(G) / n
    off = (G.sum() - np.trace(G)) / (n * (n - 1))
    return math.sqrt(max(2.0 * diag - off, 0.0))


def nearest_rank_quantile(values, p) -> float:
    """``ceil(p N)``-th smallest value (1-based), clamped to the sample range."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("no statistics to take a quantile of")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"quantile level must lie in [0, 1], got {p}")
    k = min(max(math.ceil(p * v.size), 1), v.size)
    return float(v[k - 1])


def calibrate_monte_carlo(null_source, target_arl, reps, config, master_seed,
                          stream_length=None, workers=1) -> MonteCarlo:
    """Constant threshold from the ``1 - 1/target_arl`` quantile of null peak statistics.

    ``null_source`` is anything accepted by :func:`rffmmd.engine.as_source_factory`
    (a distribution, a change-stream spec with infinite change index, or a
    callable ``seed -> reader``). Each replication runs ``stream_length``
    (default ``10 * target_arl``) observations with alarms disabled and
    contributes every per-insert peak statistic.
    """
    from .engine import run_batch

    if not target_arl > 1:
        raise ValueError(f"target_arl must exceed 1, got {target_arl}")
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}")
    length = int(stream_length or math.ceil(10 * target_arl))
    silent = config.with_policy(Constant(math.inf))
    result = run_batch(silent, null_source, reps, length, master_seed,
                       record_peaks=True, workers=workers)
    peaks = result.peaks[np.isfinite(result.peaks)]
    if peaks.size == 0:
        raise ValueError("null generator produced no statistics")
    level = 1.0 - 1.0 / target_arl
    lam = nearest_rank_quantile(peaks, level)
    meta = {
        "target_arl": target_arl, "reps": reps, "stream_length": length,
        "master_seed": master_seed, "level": level, "n_stats": int(peaks.size),
        **config.describe(),
    }
    return MonteCarlo(lambda_=lam, target_arl=target_arl, seed=master_seed, meta=meta)


def write_calibration(policy: MonteCarlo, path) -> None:
    """Versioned text table: one header line of parameters, then ``level,lambda`` rows."""
    # header tokens are space-separated, so values must not contain spaces
    params = " ".join(f"{k}={str(v).replace(' ', ';')}" for k, v in policy.meta.items()
                      if k != "level")
    level = policy.meta.get("level", 1.0 - 1.0 / policy.target_arl)
    text = (
        f"{CALIBRATION_MAGIC} target_arl={policy.target_arl!r} seed={policy.seed} {params}\n"
        "level,lambda\n"
        f"{level!r},{policy.lambda_!r}\n"
    )
    Path(path).write_text(text, encoding="utf-8")


def read_calibration(path) -> MonteCarlo:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(CALIBRATION_MAGIC):
        raise ValueError(f"{path}: not an rffmmd calibration table (v1)")
    meta = {}
    for tok in lines[0][len(CALIBRATION_MAGIC):].split():
        key, _, val = tok.partition("=")
        meta[key] = val
    if len(lines) < 3 or lines[1].strip() != "level,lambda":
        raise ValueError(f"{path}: missing 'level,lambda' rows")
    target = float(meta["target_arl"])
    wanted = 1.0 - 1.0 / target
    rows = [tuple(float(v) for v in ln.split(",")) for ln in lines[2:] if ln.strip()]
    level, lam = min(rows, key=lambda row: abs(row[0] - wanted))
    meta["level"] = level
    return MonteCarlo(lambda_=lam, target_arl=target, seed=int(meta.get("seed", 0)), meta=meta)
