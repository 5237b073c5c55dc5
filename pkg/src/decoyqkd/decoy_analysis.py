"""Decoy-state estimation, key rates and eavesdropping detection.

The vacuum decoy measures the dark-count yield ``Y0`` directly. The weak
decoy ``nu < mu`` together with the signal lower-bounds the single-photon
yield: eliminating the two-photon term between the gain expansions of both
intensities and dropping the non-negative higher-order remainder gives

    Y1 >= mu / (mu nu - nu^2) * (Q_nu e^nu - Q_mu e^mu nu^2/mu^2 - (mu^2 - nu^2)/mu^2 Y0)

and the weak decoy's error gain upper-bounds the single-photon error rate

    e1 <= (E_nu Q_nu e^nu - e0 Y0) / (nu Y1).

The key rate is the GLLP rate: error correction is paid on every sifted
signal bit, privacy amplification is credited only to single-photon bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from scipy import stats as _st

from decoyqkd.core_models import (
    DARK_COUNT_ERROR,
    HWANG_DECOY,
    SIGNAL,
    VACUUM_DECOY,
    WEAK_DECOY,
    ChannelDetector,
    expected_gain_qber,
    transmittance,
)
from decoyqkd.errors import DomainError, EstimationError
from decoyqkd.simulation import ClassTally, ObservedStatistics

DEFAULT_CONFIDENCE = 1.0 - 1e-6
DEFAULT_Z_THRESHOLD = 5.0
DEFAULT_F_EC = 1.22
DEFAULT_ABORT_QBER = 0.11
_TINY = 1e-300


@dataclass(frozen=True)
class Y0Estimate:
    """Dark-count yield estimate with its confidence interval."""

    value: float
    lo: float
    hi: float

    @classmethod
    def exact(cls, y0: float) -> Y0Estimate:
        return cls(y0, y0, y0)

    @classmethod
    def fallback(cls) -> Y0Estimate:
        """Conservative stand-in when no vacuum decoy was sent."""
        return cls(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class DecoyEstimate:
    y0: Y0Estimate
    y1_lower: float
    q1_lower: float
    e1_upper: float


@dataclass(frozen=True)
class AnomalyVerdict:
    flagged: bool
    z_scores: dict[str, tuple[float, float]] = field(default_factory=dict)
    details: tuple[str, ...] = ()

    @property
    def verdict(self) -> str:
        return "flagged" if self.flagged else "clean"


@dataclass(frozen=True)
class KeyRateReport:
    q: float
    f_ec: float
    r_decoy: float
    r_baseline: float
    anomaly: Optional[AnomalyVerdict] = None
    clamps: tuple[str, ...] = ()


def clopper_pearson(k: int, n: int, confidence: float = DEFAULT_CONFIDENCE) -> tuple[float, float]:
    """Exact binomial bounds on a proportion from ``k`` successes in ``n`` trials.

    Each bound is a one-sided bound at level ``confidence``, since the
    estimators consume them one side at a time.
    """
    if n < 1 or not 0 <= k <= n:
        raise DomainError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"confidence must lie in (0, 1), got {confidence}")
    alpha = 1.0 - confidence
    lo = 0.0 if k == 0 else float(_st.beta.ppf(alpha, k, n - k + 1))
    hi = 1.0 if k == n else float(_st.beta.isf(alpha, k + 1, n - k))
    return lo, hi


def estimate_y0(
    vacuum: Optional[ClassTally], confidence: float = DEFAULT_CONFIDENCE
) -> Y0Estimate:
    """Dark-count yield measured on the vacuum decoy.

    Raises:
        EstimationError: no vacuum class, or none of its pulses survived
            sifting. Callers should then use ``Y0Estimate.fallback()``
            (Y0 in [0, 1]).
    """
    if vacuum is None:
        raise EstimationError("no vacuum decoy statistics; fall back to Y0Estimate.fallback()")
    if vacuum.n_sifted < 1:
        raise EstimationError("vacuum decoy has no sifted pulses; fall back to Y0Estimate.fallback()")
    lo, hi = clopper_pearson(vacuum.n_detected_sifted, vacuum.n_sifted, confidence)
    return Y0Estimate(vacuum.n_detected_sifted / vacuum.n_sifted, lo, hi)


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def _y1_lower_unclamped(mu: float, q_mu: float, nu: float, q_nu: float, y0: float) -> float:
    if not 0.0 < nu < mu:
        raise DomainError(f"two-intensity bound needs 0 < nu < mu, got nu={nu}, mu={mu}")
    mu2, nu2 = mu * mu, nu * nu
    return (mu / (mu * nu - nu2)) * (
        q_nu * math.exp(nu) - q_mu * math.exp(mu) * nu2 / mu2 - (mu2 - nu2) / mu2 * y0
    )


def estimate_y1_lower(
    signal: tuple[float, float], decoy: tuple[float, float], y0: float
) -> tuple[float, float]:
    """Lower bounds on the single-photon yield and gain.

    Args:
        signal: ``(mu, Q_mu)``.
        decoy: ``(nu, Q_nu)`` of the weak decoy, ``0 < nu < mu``.
        y0: dark-count yield; pass a lower confidence bound for sampled data.

    Returns:
        ``(Y1_L, Q1_L)`` with ``Y1_L`` clamped to [0, 1] and
        ``Q1_L = Y1_L mu e^-mu``.
    """
    mu, q_mu = signal
    nu, q_nu = decoy
    y1 = _clamp(_y1_lower_unclamped(mu, q_mu, nu, q_nu, y0), 0.0, 1.0)
    return y1, y1 * mu * math.exp(-mu)


def _e1_upper_unclamped(nu, q_nu, e_nu, y0, e0, y1_lower) -> float:
    if y1_lower <= 0.0:
        return math.inf
    return (e_nu * q_nu * math.exp(nu) - e0 * y0) / (nu * y1_lower)


def estimate_e1_upper(
    decoy: tuple[float, float, float],
    y0: float,
    e0: float = DARK_COUNT_ERROR,
    y1_lower: float = 0.0,
) -> float:
    """Upper bound on the single-photon error rate from the weak decoy's errors.

    ``decoy`` is ``(nu, Q_nu, E_nu)``. The result is clamped to [0, 0.5];
    0.5 (no extractable key) is also returned when ``y1_lower`` is zero.
    """
    nu = decoy[0]
    if nu <= 0.0:
        raise DomainError(f"weak decoy intensity must be > 0, got {nu}")
    return _clamp(_e1_upper_unclamped(*decoy, y0, e0, y1_lower), 0.0, 0.5)


def binary_entropy(x: float) -> float:
    """Shannon entropy of a biased coin, in bits."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"binary entropy needs x in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    # evaluate through the smaller tail so H2(x) and H2(1 - x) run identical arithmetic
    small = min(x, 1.0 - x)
    return -(small * math.log2(small) + (1.0 - small) * math.log1p(-small) / math.log(2.0))


def _gllp_unclamped(q, f_ec, q_mu, e_mu, q1, e1) -> float:
    return q * (-q_mu * f_ec * binary_entropy(e_mu) + q1 * (1.0 - binary_entropy(e1)))


def _check_rate_inputs(q: float, f_ec: float) -> None:
    if not 0.0 < q <= 1.0:
        raise DomainError(f"sifting factor must lie in (0, 1], got {q}")
    if f_ec < 1.0:
        raise DomainError(f"error-correction inefficiency must be >= 1, got {f_ec}")


def gllp_key_rate(
    q: float,
    f_ec: float,
    signal: tuple[float, float],
    q1_lower: float,
    e1_upper: float,
) -> float:
    """Secure key per signal pulse; ``signal`` is ``(Q_mu, E_mu)``. Clamped at 0 (abort)."""
    _check_rate_inputs(q, f_ec)
    q_mu, e_mu = signal
    return max(0.0, _gllp_unclamped(q, f_ec, q_mu, e_mu, q1_lower, e1_upper))


def _baseline_unclamped(q, f_ec, q_mu, e_mu, mu) -> float:
    p_multi = -math.expm1(-mu) - mu * math.exp(-mu)
    q1_worst = max(0.0, q_mu - p_multi)
    e1_worst = min(0.5, e_mu * q_mu / max(q1_worst, _TINY))
    return _gllp_unclamped(q, f_ec, q_mu, e_mu, q1_worst, e1_worst)


def baseline_key_rate(q: float, f_ec: float, signal: tuple[float, float], mu: float) -> float:
    """Key rate without decoys: every multi-photon pulse is assumed to have been split
    and all observed errors are charged to the single-photon part."""
    _check_rate_inputs(q, f_ec)
    return max(0.0, _baseline_unclamped(q, f_ec, *signal, mu))


def _z(observed: float, predicted: float, n: int) -> float:
    var = predicted * (1.0 - predicted) / n
    if var <= 0.0:
        return 0.0 if observed == predicted else math.copysign(math.inf, observed - predicted)
    return (observed - predicted) / math.sqrt(var)


def detect_anomaly(
    observed: ObservedStatistics,
    reference_channel: ChannelDetector,
    z_threshold: float = DEFAULT_Z_THRESHOLD,
    qber_abort_threshold: float = DEFAULT_ABORT_QBER,
    decoy_abort: bool = False,
) -> AnomalyVerdict:
    """Compare every class's gain and error gain with the honest-channel prediction.

    A pulse-number-dependent attack cannot reproduce the Poisson-consistent
    gains of all intensities at once, so any ``|z| > z_threshold`` flags the
    session. The signal QBER above ``qber_abort_threshold`` also flags it;
    with ``decoy_abort`` the non-vacuum decoys' QBERs are held to the same
    threshold.
    """
    z_scores: dict[str, tuple[float, float]] = {}
    details: list[str] = []
    flagged = False
    if not any(label in observed for label in (VACUUM_DECOY, WEAK_DECOY, HWANG_DECOY)):
        details.append("no decoy class observed")
    for label, tally in observed.items():
        if tally.n_sifted == 0:
            details.append(f"{label}: no sifted pulses, skipped")
            continue
        q_pred, e_pred = expected_gain_qber(tally.mu, reference_channel)
        z_q = _z(tally.gain, q_pred, tally.n_sifted)
        z_eq = _z(tally.error_gain, e_pred * q_pred, tally.n_sifted)
        z_scores[label] = (z_q, z_eq)
        if abs(z_q) > z_threshold or abs(z_eq) > z_threshold:
            flagged = True
            details.append(f"{label}: z_Q={z_q:.3g} z_EQ={z_eq:.3g} beyond {z_threshold:g}")
        checks_qber = label == SIGNAL or (decoy_abort and label in (WEAK_DECOY, HWANG_DECOY))
        if checks_qber and tally.n_detected_sifted > 0 and tally.qber > qber_abort_threshold:
            flagged = True
            details.append(f"{label}: QBER {tally.qber:.4g} above abort threshold {qber_abort_threshold:g}")
    return AnomalyVerdict(flagged, z_scores, tuple(details))


def analyze_gains(
    mu: float,
    signal: tuple[float, float],
    y0: Y0Estimate,
    nu: Optional[float] = None,
    decoy: Optional[tuple[float, float]] = None,
    q: float = 0.5,
    f_ec: float = DEFAULT_F_EC,
    e0: float = DARK_COUNT_ERROR,
) -> tuple[DecoyEstimate, KeyRateReport]:
    """Bounds and key rates from signal ``(Q_mu, E_mu)`` and weak decoy ``(Q_nu, E_nu)``.

    ``y0.lo`` is used wherever the dark-count yield is subtracted. Without a
    weak decoy no single-photon bound is formed and the decoy rate falls back
    to the no-decoy rate.
    """
    _check_rate_inputs(q, f_ec)
    clamps: list[str] = []
    q_mu, e_mu = signal
    raw_baseline = _baseline_unclamped(q, f_ec, q_mu, e_mu, mu)
    if raw_baseline < 0.0:
        clamps.append("R_baseline<0")
    r_baseline = max(0.0, raw_baseline)

    if decoy is None or nu is None:
        clamps.append("no_weak_decoy")
        est = DecoyEstimate(y0, 0.0, 0.0, 0.5)
        return est, KeyRateReport(q, f_ec, r_baseline, r_baseline, clamps=tuple(clamps))

    q_nu, e_nu = decoy
    raw_y1 = _y1_lower_unclamped(mu, q_mu, nu, q_nu, y0.lo)
    if raw_y1 < 0.0:
        clamps.append("y1_lower<0")
    elif raw_y1 > 1.0:
        clamps.append("y1_lower>1")
    y1 = _clamp(raw_y1, 0.0, 1.0)
    q1 = y1 * mu * math.exp(-mu)
    raw_e1 = _e1_upper_unclamped(nu, q_nu, e_nu, y0.lo, e0, y1)
    if raw_e1 > 0.5:
        clamps.append("e1_upper>0.5")
    elif raw_e1 < 0.0:
        clamps.append("e1_upper<0")
    e1 = _clamp(raw_e1, 0.0, 0.5)
    raw_decoy = _gllp_unclamped(q, f_ec, q_mu, e_mu, q1, e1)
    if raw_decoy < 0.0:
        clamps.append("R_decoy<0")
    est = DecoyEstimate(y0, y1, q1, e1)
    return est, KeyRateReport(q, f_ec, max(0.0, raw_decoy), r_baseline, clamps=tuple(clamps))


def analyze(
    observed: ObservedStatistics,
    reference_channel: ChannelDetector,
    q: float = 0.5,
    f_ec: float = DEFAULT_F_EC,
    confidence: float = DEFAULT_CONFIDENCE,
    z_threshold: float = DEFAULT_Z_THRESHOLD,
    qber_abort_threshold: float = DEFAULT_ABORT_QBER,
    decoy_abort: bool = False,
    bound_gains: bool = False,
) -> tuple[DecoyEstimate, KeyRateReport]:
    """Full analysis of one session's tallies.

    Vacuum decoy -> Y0, signal and weak decoy -> Y1/e1, every class
    (including a Hwang decoy) -> anomaly check.

    By default only Y0 is replaced by a confidence bound. With
    ``bound_gains`` the single-photon bounds are also fed the one-sided
    Clopper-Pearson bounds of the sampled gains (weak-decoy gain lower,
    signal gain upper, weak-decoy error gain upper), which keeps ``Y1_L``
    and ``e1_U`` sound under sampling noise at the cost of a lower rate.
    """
    signal = observed[SIGNAL]
    extra: list[str] = []
    try:
        y0 = estimate_y0(observed.get(VACUUM_DECOY), confidence)
    except EstimationError:
        y0 = Y0Estimate.fallback()
        extra.append("y0_fallback")
    weak = observed.get(WEAK_DECOY)
    nu = decoy = None
    if weak is not None and weak.n_sifted > 0:
        nu, decoy = weak.mu, (weak.gain, weak.qber)
    q_mu = signal.gain if signal.n_sifted > 0 else 0.0
    if bound_gains and decoy is not None and signal.n_sifted > 0:
        est, report = _analyze_bounded_gains(signal, weak, y0, q, f_ec, confidence)
    else:
        est, report = analyze_gains(signal.mu, (q_mu, signal.qber), y0, nu, decoy, q, f_ec)
    verdict = detect_anomaly(observed, reference_channel, z_threshold, qber_abort_threshold, decoy_abort)
    return est, KeyRateReport(
        report.q, report.f_ec, report.r_decoy, report.r_baseline, verdict, tuple(extra) + report.clamps
    )


def _analyze_bounded_gains(
    signal: ClassTally, weak: ClassTally, y0: Y0Estimate, q: float, f_ec: float, confidence: float
) -> tuple[DecoyEstimate, KeyRateReport]:
    q_mu_hi = clopper_pearson(signal.n_detected_sifted, signal.n_sifted, confidence)[1]
    q_nu_lo = clopper_pearson(weak.n_detected_sifted, weak.n_sifted, confidence)[0]
    eq_nu_hi = clopper_pearson(weak.n_errors_sifted, weak.n_sifted, confidence)[1]
    mu, nu = signal.mu, weak.mu
    y1, q1 = estimate_y1_lower((mu, q_mu_hi), (nu, q_nu_lo), y0.lo)
    # error gain passed as E_nu with Q_nu = 1
    e1 = estimate_e1_upper((nu, 1.0, eq_nu_hi), y0.lo, DARK_COUNT_ERROR, y1)
    clamps = []
    raw_baseline = _baseline_unclamped(q, f_ec, signal.gain, signal.qber, mu)
    if raw_baseline < 0.0:
        clamps.append("R_baseline<0")
    if y1 == 0.0:
        clamps.append("y1_lower<0")
    if e1 == 0.5:
        clamps.append("e1_upper>0.5")
    raw_decoy = _gllp_unclamped(q, f_ec, signal.gain, signal.qber, q1, e1)
    if raw_decoy < 0.0:
        clamps.append("R_decoy<0")
    clamps.append("bounded_gains")
    est = DecoyEstimate(y0, y1, q1, e1)
    return est, KeyRateReport(q, f_ec, max(0.0, raw_decoy), max(0.0, raw_baseline), clamps=tuple(clamps))


def analyze_exact(
    mu: float,
    nu: Optional[float],
    channel: ChannelDetector,
    q: float = 0.5,
    f_ec: float = DEFAULT_F_EC,
) -> tuple[DecoyEstimate, KeyRateReport]:
    """Analysis fed with the infinite-statistics gains of an honest channel and the true Y0."""
    signal = expected_gain_qber(mu, channel)
    decoy = expected_gain_qber(nu, channel) if nu is not None else None
    return analyze_gains(
        mu, signal, Y0Estimate.exact(channel.dark_count_prob), nu, decoy, q, f_ec,
        channel.erroneous_dark_fraction,
    )


def true_single_photon(channel: ChannelDetector) -> tuple[float, float]:
    """Actual ``(Y1, e1)`` of an honest channel, for checking the bounds."""
    eta = transmittance(channel)
    y0 = channel.dark_count_prob
    y1 = eta + y0 * (1.0 - eta)
    e1 = (channel.erroneous_dark_fraction * y0 + channel.misalignment_error * eta) / y1
    return y1, e1


def decoy_rate_sigma(
    observed: ObservedStatistics,
    y0_used: float,
    q: float = 0.5,
    f_ec: float = DEFAULT_F_EC,
    e0: float = DARK_COUNT_ERROR,
) -> float:
    """Delta-method standard error of the decoy key rate under binomial sampling.

    The rate is treated as a function of the four sifted proportions (signal
    and weak-decoy gain and error gain); ``y0_used`` is held fixed.
    """
    s, w = observed[SIGNAL], observed[WEAK_DECOY]
    mu, nu = s.mu, w.mu
    point = [s.gain, s.error_gain, w.gain, w.error_gain]

    def rate(p: list[float]) -> float:
        q_mu, eq_mu, q_nu, eq_nu = p
        e_mu = eq_mu / q_mu if q_mu > 0 else e0
        y1 = _clamp(_y1_lower_unclamped(mu, q_mu, nu, q_nu, y0_used), 0.0, 1.0)
        # error gain passed as E_nu with Q_nu = 1
        e1 = _clamp(_e1_upper_unclamped(nu, 1.0, eq_nu, y0_used, e0, y1), 0.0, 0.5)
        return max(0.0, _gllp_unclamped(q, f_ec, q_mu, _clamp(e_mu, 0.0, 1.0), y1 * mu * math.exp(-mu), e1))

    grad = [_partial(rate, point, i) for i in range(4)]
    cov = [[0.0] * 4 for _ in range(4)]
    for base, tally in ((0, s), (2, w)):
        n = tally.n_sifted
        g, eg = tally.gain, tally.error_gain
        cov[base][base] = g * (1 - g) / n
        cov[base + 1][base + 1] = eg * (1 - eg) / n
        cov[base][base + 1] = cov[base + 1][base] = eg * (1 - g) / n
    var = sum(grad[i] * cov[i][j] * grad[j] for i in range(4) for j in range(4))
    return math.sqrt(max(var, 0.0))


def _partial(f: Callable[[list[float]], float], x: list[float], i: int) -> float:
    h = max(abs(x[i]) * 1e-4, 1e-12)
    up, down = list(x), list(x)
    up[i] += h
    down[i] = max(down[i] - h, 0.0)
    return (f(up) - f(down)) / (up[i] - down[i])
