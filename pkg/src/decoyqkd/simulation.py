"""Monte Carlo BB84 session with decoy classes and an optional PNS adversary.

Pulses are generated in fixed-size blocks. Block ``b`` draws from its own
PCG64 stream seeded by ``SeedSequence(seed, spawn_key=(b,))``, so tallies do
not depend on how many workers process the blocks. Within a block the
random arrays are drawn in this order, each covering the whole block:

1. class selection (uniform)
2. emitted photon number (Poisson)
3. Alice's bit
4. Alice's basis
5. Eve's decision (uniform, drawn even when Eve is absent)
6. channel: binomial thinning of the photons that reach the detector
7. dark count (uniform)
8. Bob's basis (uniform; matches Alice's with probability ``q``)
9. bit error (uniform)
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Optional, Sequence

import numpy as np

from decoyqkd.core_models import (
    CLASS_LABELS,
    ChannelDetector,
    IntensityClass,
    transmittance,
    validate_schedule,
)
from decoyqkd.errors import ConfigurationError

BLOCK_SIZE = 1 << 18
TRACE_LIMIT = 100_000
SEED_MASK = (1 << 64) - 1

PASS = "pass"
BLOCKED = "blocked"
SPLIT = "split_1_kept"
_ACTIONS = (PASS, BLOCKED, SPLIT)

TRACE_COLUMNS = (
    "index",
    "class",
    "n_emitted",
    "alice_bit",
    "alice_basis",
    "eve_action",
    "n_arrived",
    "clicked",
    "bob_bit",
    "bob_basis",
)


@dataclass(frozen=True)
class EveStrategy:
    """Eavesdropper model.

    ``kind="pns"`` is the photon-number-splitting attack: single-photon
    pulses are blocked with probability ``single_block_prob``; from
    multi-photon pulses Eve keeps one photon and forwards the rest, over a
    line of transmittance ``forward_transmittance_override`` when given
    (otherwise through the ordinary channel).
    """

    kind: str = "none"
    single_block_prob: float = 1.0
    forward_transmittance_override: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in ("none", "pns"):
            raise ConfigurationError(f"eve.kind must be 'none' or 'pns', got {self.kind!r}")
        if not 0.0 <= self.single_block_prob <= 1.0:
            raise ConfigurationError(
                f"eve.single_block_prob must lie in [0, 1], got {self.single_block_prob}"
            )
        override = self.forward_transmittance_override
        if override is not None and not 0.0 < override <= 1.0:
            raise ConfigurationError(
                f"eve.forward_transmittance_override must lie in (0, 1], got {override}"
            )


@dataclass(frozen=True)
class ProtocolConfig:
    schedule: tuple[IntensityClass, ...]
    pulses_total: int
    channel: ChannelDetector = field(default_factory=ChannelDetector)
    basis_match_prob: float = 0.5
    rng_seed: int = 42
    qber_abort_threshold: float = 0.11

    def __post_init__(self) -> None:
        object.__setattr__(self, "schedule", tuple(self.schedule))
        validate_schedule(self.schedule)
        if int(self.pulses_total) != self.pulses_total or self.pulses_total < 1:
            raise ConfigurationError(f"pulses_total must be a positive integer, got {self.pulses_total}")
        if not 0.0 < self.basis_match_prob <= 1.0:
            raise ConfigurationError(
                f"basis_match_prob must lie in (0, 1], got {self.basis_match_prob}"
            )
        if not 0.0 <= self.qber_abort_threshold <= 0.5:
            raise ConfigurationError(
                f"qber_abort_threshold must lie in [0, 0.5], got {self.qber_abort_threshold}"
            )

    def intensity(self, label: str) -> Optional[IntensityClass]:
        for c in self.schedule:
            if c.label == label:
                return c
        return None


@dataclass(frozen=True)
class PulseRecord:
    index: int
    label: str
    photon_number_emitted: int
    alice_bit: int
    alice_basis: int
    eve_action: str
    photon_number_arriving: int
    bob_clicked: bool
    bob_bit: Optional[int]
    bob_basis: int


@dataclass(frozen=True)
class ClassTally:
    """Sifted counts for one intensity class."""

    label: str
    mu: float
    n_sent: int = 0
    n_sifted: int = 0
    n_detected_sifted: int = 0
    n_errors_sifted: int = 0

    @property
    def gain(self) -> float:
        if self.n_sifted == 0:
            return math.nan
        return self.n_detected_sifted / self.n_sifted

    @property
    def qber(self) -> float:
        return self.n_errors_sifted / max(self.n_detected_sifted, 1)

    @property
    def error_gain(self) -> float:
        if self.n_sifted == 0:
            return math.nan
        return self.n_errors_sifted / self.n_sifted

    def __add__(self, other: ClassTally) -> ClassTally:
        if other.label != self.label:
            raise ValueError(f"cannot merge tallies of {self.label} and {other.label}")
        return ClassTally(
            self.label,
            self.mu,
            self.n_sent + other.n_sent,
            self.n_sifted + other.n_sifted,
            self.n_detected_sifted + other.n_detected_sifted,
            self.n_errors_sifted + other.n_errors_sifted,
        )


class ObservedStatistics(Mapping[str, ClassTally]):
    """Per-class tallies keyed by class label; merging with ``+`` is associative and commutative."""

    def __init__(self, tallies: Iterable[ClassTally] = ()):
        self._tallies: dict[str, ClassTally] = {}
        for t in tallies:
            self._tallies[t.label] = self._tallies[t.label] + t if t.label in self._tallies else t

    def __getitem__(self, label: str) -> ClassTally:
        return self._tallies[label]

    def __iter__(self):
        return iter(sorted(self._tallies, key=CLASS_LABELS.index))

    def __len__(self) -> int:
        return len(self._tallies)

    def __add__(self, other: ObservedStatistics) -> ObservedStatistics:
        return ObservedStatistics(list(self.values()) + list(other.values()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ObservedStatistics):
            return NotImplemented
        return self._tallies == other._tallies

    def __repr__(self) -> str:
        return f"ObservedStatistics({list(self.values())!r})"


def pns_decision(photon_number: int, eve: EveStrategy, rng_draw: float) -> str:
    """Eve's action on a pulse of ``photon_number`` photons given a uniform draw in [0, 1)."""
    if eve.kind == "none" or photon_number == 0:
        return PASS
    if photon_number == 1:
        return BLOCKED if rng_draw < eve.single_block_prob else PASS
    return SPLIT


def _pns_codes(n_emitted: np.ndarray, eve: EveStrategy, draws: np.ndarray) -> np.ndarray:
    codes = np.zeros(n_emitted.shape, dtype=np.int8)
    if eve.kind == "none":
        return codes
    codes[(n_emitted == 1) & (draws < eve.single_block_prob)] = 1
    codes[n_emitted >= 2] = 2
    return codes


def block_generator(seed: int, block_index: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=(block_index,))
    return np.random.Generator(np.random.PCG64(sequence))


def _simulate_block(
    config: ProtocolConfig, eve: EveStrategy, block_index: int, size: int, keep_trace: bool
):
    rng = block_generator(config.rng_seed, block_index)
    channel = config.channel
    mus = np.array([c.mu for c in config.schedule])
    cumulative = np.cumsum([c.send_probability for c in config.schedule])
    cumulative[-1] = 1.0

    cls = np.searchsorted(cumulative, rng.random(size), side="right")
    np.minimum(cls, len(mus) - 1, out=cls)
    n_emitted = rng.poisson(mus[cls])
    alice_bit = rng.integers(0, 2, size, dtype=np.int8)
    alice_basis = rng.integers(0, 2, size, dtype=np.int8)
    action = _pns_codes(n_emitted, eve, rng.random(size))

    n_arrived = np.where(action == 1, 0, n_emitted - (action == 2))
    eta = transmittance(channel)
    p_detect = np.full(size, eta)
    if eve.forward_transmittance_override is not None:
        p_detect[action == 2] = eve.forward_transmittance_override
    photon_fired = rng.binomial(n_arrived, p_detect) > 0
    dark_fired = rng.random(size) < channel.dark_count_prob
    bob_basis = np.where(
        rng.random(size) < config.basis_match_prob, alice_basis, 1 - alice_basis
    ).astype(np.int8)
    sifted = bob_basis == alice_basis

    # Dark and double clicks give a uniformly random bit; so does a photon
    # measured in the wrong basis.
    p_error = np.where(photon_fired & ~dark_fired & sifted, channel.misalignment_error, 0.5)
    error = rng.random(size) < p_error
    clicked = photon_fired | dark_fired

    n_classes = len(mus)
    sent = np.bincount(cls, minlength=n_classes)
    n_sifted = np.bincount(cls[sifted], minlength=n_classes)
    detected = sifted & clicked
    n_detected = np.bincount(cls[detected], minlength=n_classes)
    n_errors = np.bincount(cls[detected & error], minlength=n_classes)
    stats = ObservedStatistics(
        ClassTally(c.label, c.mu, int(sent[i]), int(n_sifted[i]), int(n_detected[i]), int(n_errors[i]))
        for i, c in enumerate(config.schedule)
    )
    if not keep_trace:
        return stats, None
    bob_bit = np.where(clicked, alice_bit ^ error, -1)
    offset = block_index * BLOCK_SIZE
    labels = [c.label for c in config.schedule]
    records = [
        PulseRecord(
            index=offset + i,
            label=labels[cls[i]],
            photon_number_emitted=int(n_emitted[i]),
            alice_bit=int(alice_bit[i]),
            alice_basis=int(alice_basis[i]),
            eve_action=_ACTIONS[action[i]],
            photon_number_arriving=int(n_arrived[i]),
            bob_clicked=bool(clicked[i]),
            bob_bit=None if bob_bit[i] < 0 else int(bob_bit[i]),
            bob_basis=int(bob_basis[i]),
        )
        for i in range(size)
    ]
    return stats, records


def run_session(
    config: ProtocolConfig,
    eve: EveStrategy = EveStrategy(),
    *,
    keep_trace: bool = False,
    workers: int = 1,
) -> tuple[ObservedStatistics, Optional[list[PulseRecord]]]:
    """Simulate ``config.pulses_total`` pulses and tally the sifted outcomes per class.

    Results are bit-identical for a given ``(config, eve)`` regardless of
    ``workers``. The pulse trace is only available for sessions of at most
    ``TRACE_LIMIT`` pulses.
    """
    if keep_trace and config.pulses_total > TRACE_LIMIT:
        raise ConfigurationError(
            f"pulse trace limited to {TRACE_LIMIT} pulses, session has {config.pulses_total}"
        )
    total = int(config.pulses_total)
    sizes = [min(BLOCK_SIZE, total - start) for start in range(0, total, BLOCK_SIZE)]

    def work(b: int):
        return _simulate_block(config, eve, b, sizes[b], keep_trace)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, range(len(sizes))))
    else:
        results = [work(b) for b in range(len(sizes))]

    stats = ObservedStatistics(ClassTally(c.label, c.mu) for c in config.schedule)
    trace: Optional[list[PulseRecord]] = [] if keep_trace else None
    for block_stats, records in results:
        stats = stats + block_stats
        if records is not None:
            trace.extend(records)
    return stats, trace


def sift_and_tally(
    records: Iterable[PulseRecord], schedule: Optional[Sequence[IntensityClass]] = None
) -> ObservedStatistics:
    """Discard basis mismatches and tally the remaining outcomes per class.

    ``schedule`` supplies each class's mean photon number and makes classes
    that never occur in ``records`` show up with zero counts; without it the
    ``mu`` fields are NaN.
    """
    mu_of = {c.label: c.mu for c in schedule} if schedule is not None else {}
    counts: dict[str, list[int]] = {label: [0, 0, 0, 0] for label in mu_of}
    for r in records:
        row = counts.setdefault(r.label, [0, 0, 0, 0])
        row[0] += 1
        if r.bob_basis != r.alice_basis:
            continue
        row[1] += 1
        if r.bob_clicked:
            row[2] += 1
            if r.bob_bit != r.alice_bit:
                row[3] += 1
    return ObservedStatistics(
        ClassTally(label, mu_of.get(label, math.nan), *row) for label, row in counts.items()
    )


def write_trace_csv(records: Iterable[PulseRecord], stream: IO[str]) -> None:
    """Dump a pulse trace as comma-separated rows with a header line."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in records:
        writer.writerow(
            (
                r.index,
                r.label,
                r.photon_number_emitted,
                r.alice_bit,
                r.alice_basis,
                r.eve_action,
                r.photon_number_arriving,
                int(r.bob_clicked),
                "" if r.bob_bit is None else r.bob_bit,
                r.bob_basis,
            )
        )
