"""Online change point detection with random-Fourier-feature MMD tests."""

from .detector import Detector, DetectorConfig, Verdict, WindowSummary, new_detector
from .kernel_features import (
    KernelSpec,
    SpectralSample,
    approx_kernel,
    feature_map,
    feature_matrix,
    gaussian_kernel,
    h_function,
    median_heuristic,
    required_features,
    sample_frequencies,
)
from .mmd_core import MeanEmbedding, mmd_exact, mmd_exact_rff_kernel, mmd_rff, normalized_stat
from .thresholds import (
    Constant,
    FixedARL,
    MonteCarlo,
    ScaleARL,
    ScaleFA,
    ThresholdPolicy,
    UniformFA,
    calibrate_monte_carlo,
    estimate_sigma_tilde,
    threshold_arl,
    threshold_fa,
    threshold_scale_arl,
    threshold_scale_fa,
)

__version__ = "0.1.0"
