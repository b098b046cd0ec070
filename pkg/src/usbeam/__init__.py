"""Ultrasound RF beamforming: simulation, classical and regularized methods.

The package covers the full synthetic pipeline: point/cyst phantom RF
simulation, analytic conversion and dynamic-focus delay compensation,
delay-and-sum plus adaptive (Capon-family, IAA) beamformers, sparse and
ridge regularized inverse beamforming over the emission dimension, and
image-quality metrics with file formats and a CLI tying it together.
"""

from .acquisition import RawDataCube, ScanPlan, analytic_signal, compensate_delays
from .adaptive import (
    CovarianceEstimate,
    SolverWarning,
    bs_capon_beamform,
    bs_capon_sample,
    estimate_covariance,
    iaa_beamform,
    iaa_scanline,
    multibeam_capon_beamform,
    multibeam_capon_scanline,
    mv_beamform,
    mv_weights,
)
from .classic import RfImage, apodization_window, das_beamform, extract_lateral_scanline
from .config import ExperimentConfig, config_from_dict, load_config, preset_names
from .errors import ConfigError, FormatError
from .geometry import (
    ProbeGeometry,
    SteeringSet,
    butler_matrix,
    centered_steering_matrix,
    decimation_matrix,
    element_positions,
    kept_emission_indices,
    low_order_beam_indices,
    steering_matrix,
    steering_vector,
)
from .imaging import BModeImage, envelope, log_compress, pixel_positions
from .inverse import (
    BpResult,
    ForwardModel,
    SolveConfig,
    bp_certificate,
    bp_solve,
    build_forward_model,
    decimate_observation,
    inverse_beamform,
    ls_solve,
    soft_threshold,
)
from .metrics import RegionSpec, cnr, region_values, resolution_gain, snr
from .phantom import (
    ExcitationPulse,
    Phantom,
    cyst_phantom,
    point_reflector_phantom,
    simulate_raw,
)

__version__ = "0.1.0"

__all__ = [
    "RawDataCube", "ScanPlan", "analytic_signal", "compensate_delays",
    "CovarianceEstimate", "SolverWarning", "estimate_covariance", "mv_weights",
    "bs_capon_sample", "multibeam_capon_scanline", "iaa_scanline",
    "mv_beamform", "bs_capon_beamform", "multibeam_capon_beamform", "iaa_beamform",
    "RfImage", "apodization_window", "das_beamform", "extract_lateral_scanline",
    "ExperimentConfig", "config_from_dict", "load_config", "preset_names",
    "ConfigError", "FormatError",
    "ProbeGeometry", "SteeringSet", "butler_matrix", "centered_steering_matrix",
    "decimation_matrix", "element_positions", "kept_emission_indices",
    "low_order_beam_indices", "steering_matrix", "steering_vector",
    "BModeImage", "envelope", "log_compress", "pixel_positions",
    "BpResult", "ForwardModel", "SolveConfig", "bp_certificate", "bp_solve",
    "build_forward_model", "decimate_observation", "inverse_beamform",
    "ls_solve", "soft_threshold",
    "RegionSpec", "cnr", "region_values", "resolution_gain", "snr",
    "ExcitationPulse", "Phantom", "cyst_phantom", "point_reflector_phantom",
    "simulate_raw",
    "__version__",
]
