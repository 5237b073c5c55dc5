"""Decoy-state BB84 simulation and key-rate analysis with weak coherent pulses."""

from decoyqkd.core_models import (
    ChannelDetector,
    IntensityClass,
    expected_gain_qber,
    poisson_pmf,
    transmittance,
    yield_n,
)
from decoyqkd.decoy_analysis import (
    AnomalyVerdict,
    DecoyEstimate,
    KeyRateReport,
    Y0Estimate,
    analyze,
    analyze_exact,
    baseline_key_rate,
    binary_entropy,
    detect_anomaly,
    estimate_e1_upper,
    estimate_y0,
    estimate_y1_lower,
    gllp_key_rate,
)
from decoyqkd.errors import ConfigurationError, DecoyQKDError, DomainError, EstimationError
from decoyqkd.simulation import (
    ClassTally,
    EveStrategy,
    ObservedStatistics,
    ProtocolConfig,
    PulseRecord,
    pns_decision,
    run_session,
    sift_and_tally,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyVerdict",
    "ChannelDetector",
    "ClassTally",
    "ConfigurationError",
    "DecoyEstimate",
    "DecoyQKDError",
    "DomainError",
    "EstimationError",
    "EveStrategy",
    "IntensityClass",
    "KeyRateReport",
    "ObservedStatistics",
    "ProtocolConfig",
    "PulseRecord",
    "Y0Estimate",
    "analyze",
    "analyze_exact",
    "baseline_key_rate",
    "binary_entropy",
    "detect_anomaly",
    "estimate_e1_upper",
    "estimate_y0",
    "estimate_y1_lower",
    "expected_gain_qber",
    "gllp_key_rate",
    "pns_decision",
    "poisson_pmf",
    "run_session",
    "sift_and_tally",
    "transmittance",
    "yield_n",
]
