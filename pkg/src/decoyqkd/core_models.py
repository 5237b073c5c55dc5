"""Closed-form photon statistics, channel loss and detector response.

Everything here is a pure function of its arguments. The simulator samples
from these distributions and the test suite uses them as analytic oracles.

Detector model: a threshold detector whose dark-count process and photon
clicks fire independently, so an ``n``-photon pulse clicks with probability
``Y_n = 1 - (1 - Y0) * (1 - eta)**n``. Dark-count clicks carry a random bit
(error probability ``e0 = 0.5``); photon clicks err with the misalignment
probability ``e_d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from decoyqkd.errors import ConfigurationError, DomainError

SIGNAL = "signal"
VACUUM_DECOY = "vacuum_decoy"
WEAK_DECOY = "weak_decoy"
HWANG_DECOY = "hwang_decoy"
CLASS_LABELS = (SIGNAL, VACUUM_DECOY, WEAK_DECOY, HWANG_DECOY)

DARK_COUNT_ERROR = 0.5
PROBABILITY_SUM_TOL = 1e-12


@dataclass(frozen=True)
class IntensityClass:
    """One pulse class of the source schedule.

    ``mu`` is the mean photon number of the phase-randomised coherent state
    and ``send_probability`` the chance that Alice picks this class for a
    given time slot.
    """

    label: str
    mu: float
    send_probability: float

    def __post_init__(self) -> None:
        if self.label not in CLASS_LABELS:
            raise ConfigurationError(
                f"unknown intensity class {self.label!r}; expected one of {CLASS_LABELS}"
            )
        if not math.isfinite(self.mu) or self.mu < 0:
            raise ConfigurationError(f"{self.label}.mu must be finite and >= 0, got {self.mu}")
        if self.label == VACUUM_DECOY and self.mu != 0.0:
            raise ConfigurationError(f"vacuum_decoy.mu must be exactly 0, got {self.mu}")
        if not 0.0 <= self.send_probability <= 1.0:
            raise ConfigurationError(
                f"{self.label}.send_probability must lie in [0, 1], got {self.send_probability}"
            )


def validate_schedule(schedule: Sequence[IntensityClass]) -> None:
    """Check the cross-class invariants of a source schedule.

    Exactly one signal class, at most one of each decoy class, send
    probabilities summing to one and a weak decoy strictly dimmer than the
    signal.
    """
    labels = [c.label for c in schedule]
    if labels.count(SIGNAL) != 1:
        raise ConfigurationError(f"schedule needs exactly one signal class, got {labels.count(SIGNAL)}")
    for label in (VACUUM_DECOY, WEAK_DECOY, HWANG_DECOY):
        if labels.count(label) > 1:
            raise ConfigurationError(f"schedule has more than one {label} class")
    total = math.fsum(c.send_probability for c in schedule)
    if abs(total - 1.0) > PROBABILITY_SUM_TOL:
        raise ConfigurationError(f"send probabilities sum to {total!r}, not 1")
    by_label = {c.label: c for c in schedule}
    weak = by_label.get(WEAK_DECOY)
    if weak is not None and not weak.mu < by_label[SIGNAL].mu:
        raise ConfigurationError(
            f"weak_decoy.mu ({weak.mu}) must be strictly below signal.mu ({by_label[SIGNAL].mu})"
        )


def schedule_by_label(schedule: Iterable[IntensityClass]) -> dict[str, IntensityClass]:
    return {c.label: c for c in schedule}


@dataclass(frozen=True)
class ChannelDetector:
    """Fiber channel plus threshold detector.

    Attributes:
        distance_km: Fiber length.
        attenuation_db_per_km: Fiber loss coefficient.
        extra_loss_db: Fixed insertion loss (Bob's optics, connectors).
        detector_efficiency: Detection efficiency of Bob's detector.
        dark_count_prob: Dark-count click probability per gate (``Y0``).
        misalignment_error: Probability ``e_d`` that a photon click flips the bit.
        erroneous_dark_fraction: Error probability ``e0`` of a dark-count click.
    """

    distance_km: float = 0.0
    attenuation_db_per_km: float = 0.2
    extra_loss_db: float = 0.0
    detector_efficiency: float = 0.1
    dark_count_prob: float = 1e-5
    misalignment_error: float = 0.01
    erroneous_dark_fraction: float = DARK_COUNT_ERROR

    def __post_init__(self) -> None:
        for name in ("distance_km", "attenuation_db_per_km", "extra_loss_db"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"channel.{name} must be finite and >= 0, got {value}")
        if not 0.0 < self.detector_efficiency <= 1.0:
            raise ConfigurationError(
                f"channel.detector_efficiency must lie in (0, 1], got {self.detector_efficiency}"
            )
        if not 0.0 <= self.dark_count_prob < 1.0:
            raise ConfigurationError(
                f"channel.dark_count_prob must lie in [0, 1), got {self.dark_count_prob}"
            )
        if not 0.0 <= self.misalignment_error <= 0.5:
            raise ConfigurationError(
                f"channel.misalignment_error must lie in [0, 0.5], got {self.misalignment_error}"
            )
        if self.erroneous_dark_fraction != DARK_COUNT_ERROR:
            raise ConfigurationError("erroneous_dark_fraction is fixed at 0.5")
        if transmittance(self) <= 0.0:
            raise ConfigurationError(
                f"channel transmittance underflows to 0 at {self.distance_km} km"
            )

    @property
    def eta(self) -> float:
        return transmittance(self)

    def at_distance(self, distance_km: float) -> ChannelDetector:
        """Copy of this channel with a different fiber length."""
        return ChannelDetector(
            distance_km=distance_km,
            attenuation_db_per_km=self.attenuation_db_per_km,
            extra_loss_db=self.extra_loss_db,
            detector_efficiency=self.detector_efficiency,
            dark_count_prob=self.dark_count_prob,
            misalignment_error=self.misalignment_error,
            erroneous_dark_fraction=self.erroneous_dark_fraction,
        )


def poisson_pmf(mu: float, n: int) -> float:
    """Probability that a coherent pulse of mean ``mu`` holds ``n`` photons.

    Evaluated in log space so large ``n`` neither overflows nor underflows
    prematurely.

    >>> poisson_pmf(0.0, 0)
    1.0
    >>> round(poisson_pmf(2.0, 0), 6)
    0.135335
    """
    if mu < 0 or not math.isfinite(mu):
        raise DomainError(f"mean photon number must be finite and >= 0, got {mu}")
    if n < 0 or int(n) != n:
        raise DomainError(f"photon count must be a non-negative integer, got {n}")
    n = int(n)
    if mu == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-mu + n * math.log(mu) - math.lgamma(n + 1))


def series_cutoff(mu: float) -> int:
    """Photon number at which Poisson series are truncated (tail < 1e-12 for mu <= 5)."""
    return max(20, math.ceil(mu + 10.0 * math.sqrt(mu) + 20.0))


def transmittance(cd: ChannelDetector) -> float:
    """Overall transmittance ``eta``: fiber loss, insertion loss and detector efficiency."""
    loss_db = cd.attenuation_db_per_km * cd.distance_km + cd.extra_loss_db
    return 10.0 ** (-loss_db / 10.0) * cd.detector_efficiency


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")


def yield_n(y0: float, eta: float, n: int) -> float:
    """Click probability given ``n`` photons leave Alice's source."""
    _check_probability("y0", y0)
    _check_probability("eta", eta)
    if n < 0 or int(n) != n:
        raise DomainError(f"photon count must be a non-negative integer, got {n}")
    if n == 0:
        return y0
    photon_click = 1.0 if eta == 1.0 else -math.expm1(n * math.log1p(-eta))
    return photon_click + y0 * (1.0 - photon_click)


def gain_and_qber(
    mu: float, eta: float, y0: float, e_d: float, e0: float = DARK_COUNT_ERROR
) -> tuple[float, float]:
    """Gain ``Q`` and QBER ``E`` of intensity ``mu`` over a channel of transmittance ``eta``.

    Uses ``Q = 1 - (1 - y0) exp(-eta mu)`` and
    ``E Q = e0 y0 + e_d (1 - exp(-eta mu))``. When ``Q`` is exactly zero
    (no light, no dark counts) ``E`` is reported as ``e0``.
    """
    if mu < 0 or not math.isfinite(mu):
        raise DomainError(f"mean photon number must be finite and >= 0, got {mu}")
    _check_probability("eta", eta)
    _check_probability("y0", y0)
    _check_probability("e_d", e_d)
    photon_click = -math.expm1(-eta * mu)
    gain = photon_click + y0 * (1.0 - photon_click)
    error_gain = e0 * y0 + e_d * photon_click
    if gain == 0.0:
        return 0.0, e0
    return gain, error_gain / gain


def expected_gain_qber(mu: float, cd: ChannelDetector) -> tuple[float, float]:
    """Analytic ``(Q, E)`` that an honest session at intensity ``mu`` should observe."""
    return gain_and_qber(
        mu, transmittance(cd), cd.dark_count_prob, cd.misalignment_error, cd.erroneous_dark_fraction
    )
