import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decoyqkd.core_models import ChannelDetector, IntensityClass, expected_gain_qber
from decoyqkd.errors import ConfigurationError
from decoyqkd.simulation import (
    BLOCK_SIZE,
    TRACE_COLUMNS,
    ClassTally,
    EveStrategy,
    ObservedStatistics,
    ProtocolConfig,
    PulseRecord,
    _pns_codes,
    pns_decision,
    run_session,
    sift_and_tally,
    write_trace_csv,
)

import oracles

DEFAULT_SCHEDULE = (
    IntensityClass("signal", 0.5, 0.8),
    IntensityClass("vacuum_decoy", 0.0, 0.1),
    IntensityClass("weak_decoy", 0.05, 0.1),
)
CHANNEL_50KM = ChannelDetector(distance_km=50)
PNS_LOSSLESS = EveStrategy("pns", single_block_prob=1.0, forward_transmittance_override=1.0)


def within_sigmas(observed, expected, n, k=5.0):
    sigma = math.sqrt(max(expected * (1 - expected), 1e-300) / n)
    return abs(observed - expected) <= k * sigma


# --- pns_decision -----------------------------------------------------------

def test_pns_passes_vacuum():
    assert pns_decision(0, PNS_LOSSLESS, 0.0) == "pass"


def test_pns_blocks_single_photons():
    assert pns_decision(1, EveStrategy("pns", single_block_prob=1.0), 0.999) == "blocked"


def test_pns_partial_blocking():
    eve = EveStrategy("pns", single_block_prob=0.3)
    assert pns_decision(1, eve, 0.29) == "blocked"
    assert pns_decision(1, eve, 0.31) == "pass"


def test_pns_splits_multiphoton():
    assert pns_decision(3, PNS_LOSSLESS, 0.5) == "split_1_kept"


def test_no_eve_always_passes():
    assert all(pns_decision(n, EveStrategy(), 0.0) == "pass" for n in range(5))


@given(st.lists(st.integers(0, 6), min_size=1, max_size=50), st.floats(0, 1), st.data())
def test_vectorised_decision_matches_scalar(ns, block, data):
    draws = data.draw(st.lists(st.floats(0, 0.999999), min_size=len(ns), max_size=len(ns)))
    eve = EveStrategy("pns", single_block_prob=block)
    codes = _pns_codes(np.array(ns), eve, np.array(draws))
    names = ("pass", "blocked", "split_1_kept")
    assert [names[c] for c in codes] == [pns_decision(n, eve, u) for n, u in zip(ns, draws)]


def test_eve_validation():
    with pytest.raises(ConfigurationError):
        EveStrategy("intercept_resend")
    with pytest.raises(ConfigurationError):
        EveStrategy("pns", single_block_prob=1.5)
    with pytest.raises(ConfigurationError):
        EveStrategy("pns", forward_transmittance_override=0.0)


# --- ProtocolConfig ---------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigurationError):
        ProtocolConfig(DEFAULT_SCHEDULE, 0)
    with pytest.raises(ConfigurationError):
        ProtocolConfig(DEFAULT_SCHEDULE, 10, basis_match_prob=0.0)
    with pytest.raises(ConfigurationError):
        ProtocolConfig(DEFAULT_SCHEDULE[1:], 10)


# --- sift_and_tally -------------------------------------------------------

def _record(**kw):
    base = dict(
        index=0, label="signal", photon_number_emitted=1, alice_bit=0, alice_basis=0,
        eve_action="pass", photon_number_arriving=1, bob_clicked=True, bob_bit=0, bob_basis=0,
    )
    base.update(kw)
    return PulseRecord(**base)


def test_sift_empty():
    stats = sift_and_tally([])
    assert len(stats) == 0
    stats = sift_and_tally([], DEFAULT_SCHEDULE)
    assert all(t.n_sent == t.n_sifted == t.n_detected_sifted == t.n_errors_sifted == 0 for t in stats.values())


def test_sift_single_matching_record():
    t = sift_and_tally([_record()])["signal"]
    assert (t.n_sent, t.n_sifted, t.n_detected_sifted, t.n_errors_sifted) == (1, 1, 1, 0)


def test_sift_discards_mismatch_and_counts_errors():
    records = [
        _record(bob_basis=1),
        _record(index=1, bob_bit=1),
        _record(index=2, bob_clicked=False, bob_bit=None),
    ]
    t = sift_and_tally(records, DEFAULT_SCHEDULE)["signal"]
    assert (t.n_sent, t.n_sifted, t.n_detected_sifted, t.n_errors_sifted) == (3, 2, 1, 1)
    assert t.mu == 0.5


def test_sifted_fraction_tracks_q():
    cfg = ProtocolConfig((IntensityClass("signal", 0.5, 1.0),), 1_000_000, CHANNEL_50KM, rng_seed=5)
    stats, _ = run_session(cfg)
    t = stats["signal"]
    assert within_sigmas(t.n_sifted / t.n_sent, 0.5, t.n_sent)


def test_tally_merge_is_commutative_and_associative():
    a = ObservedStatistics([ClassTally("signal", 0.5, 10, 5, 2, 1)])
    b = ObservedStatistics([ClassTally("signal", 0.5, 3, 2, 1, 0), ClassTally("weak_decoy", 0.05, 4, 2, 0, 0)])
    c = ObservedStatistics([ClassTally("vacuum_decoy", 0.0, 7, 3, 1, 1)])
    assert a + b == b + a
    assert (a + b) + c == a + (b + c)
    assert (a + b)["signal"] == ClassTally("signal", 0.5, 13, 7, 3, 1)


def test_tally_derived_rates():
    t = ClassTally("signal", 0.5, 100, 50, 10, 1)
    assert t.gain == 0.2
    assert t.qber == 0.1
    assert ClassTally("signal", 0.5).qber == 0.0
    assert math.isnan(ClassTally("signal", 0.5).gain)


# --- run_session ------------------------------------------------------------

def test_all_vacuum_schedule_without_dark_counts():
    schedule = (IntensityClass("signal", 0.0, 0.0), IntensityClass("vacuum_decoy", 0.0, 1.0))
    cfg = ProtocolConfig(schedule, 20_000, ChannelDetector(dark_count_prob=0.0))
    for eve in (EveStrategy(), PNS_LOSSLESS):
        stats, _ = run_session(cfg, eve)
        assert stats["signal"].n_sent == 0
        assert stats["vacuum_decoy"].n_sent == 20_000
        assert all(t.n_detected_sifted == 0 for t in stats.values())


def test_signal_gain_matches_closed_form():
    cfg = ProtocolConfig((IntensityClass("signal", 0.5, 1.0),), 1_000_000, CHANNEL_50KM, rng_seed=11)
    t = run_session(cfg)[0]["signal"]
    q, e = expected_gain_qber(0.5, CHANNEL_50KM)
    assert q == pytest.approx(4.99747e-3, rel=1e-5)
    assert within_sigmas(t.gain, q, t.n_sifted)
    assert within_sigmas(t.error_gain, q * e, t.n_sifted)


def test_pns_signal_gain_matches_attacked_series():
    cfg = ProtocolConfig((IntensityClass("signal", 0.5, 1.0),), 1_000_000, CHANNEL_50KM, rng_seed=12)
    t = run_session(cfg, PNS_LOSSLESS)[0]["signal"]
    q_ref, eq_ref = oracles.event_level_gain(0.5, 0.01, 1e-5, 0.01, pns=True, block=1.0, override=1.0)
    # attacked gain: sum_{n>=2} P_n (1 - (1-Y0)(1-1)^(n-1)) + (P_0 + P_1) Y0
    p0, p1 = math.exp(-0.5), 0.5 * math.exp(-0.5)
    assert float(q_ref) == pytest.approx((1 - p0 - p1) + (p0 + p1) * 1e-5, rel=1e-12)
    assert within_sigmas(t.gain, float(q_ref), t.n_sifted)
    assert within_sigmas(t.error_gain, float(eq_ref), t.n_sifted)


def test_pns_leaves_vacuum_untouched_and_inflates_signal():
    schedule = (IntensityClass("signal", 0.5, 0.5), IntensityClass("vacuum_decoy", 0.0, 0.5))
    cfg = ProtocolConfig(schedule, 2_000_000, CHANNEL_50KM, rng_seed=13)
    stats = run_session(cfg, PNS_LOSSLESS)[0]
    vac = stats["vacuum_decoy"]
    assert within_sigmas(vac.gain, 1e-5, vac.n_sifted)
    q_honest, _ = expected_gain_qber(0.5, CHANNEL_50KM)
    assert stats["signal"].gain > 10 * q_honest


def test_pns_without_override_uses_channel():
    cfg = ProtocolConfig((IntensityClass("signal", 0.5, 1.0),), 1_000_000, ChannelDetector(distance_km=10), rng_seed=14)
    eve = EveStrategy("pns", single_block_prob=0.5)
    t = run_session(cfg, eve)[0]["signal"]
    eta = cfg.channel.eta
    q_ref, _ = oracles.event_level_gain(0.5, eta, 1e-5, 0.01, pns=True, block=0.5)
    assert within_sigmas(t.gain, float(q_ref), t.n_sifted)


def test_deterministic_for_fixed_seed():
    cfg = ProtocolConfig(DEFAULT_SCHEDULE, 300_000, CHANNEL_50KM, rng_seed=99)
    assert run_session(cfg)[0] == run_session(cfg)[0]
    other = ProtocolConfig(DEFAULT_SCHEDULE, 300_000, CHANNEL_50KM, rng_seed=100)
    assert run_session(cfg)[0] != run_session(other)[0]


def test_shard_count_does_not_change_tallies():
    cfg = ProtocolConfig(DEFAULT_SCHEDULE, 3 * BLOCK_SIZE + 17, CHANNEL_50KM, rng_seed=3)
    serial = run_session(cfg, PNS_LOSSLESS, workers=1)[0]
    sharded = run_session(cfg, PNS_LOSSLESS, workers=3)[0]
    assert serial == sharded


def test_negative_seed_accepted():
    cfg = ProtocolConfig(DEFAULT_SCHEDULE, 1000, CHANNEL_50KM, rng_seed=-5)
    assert sum(t.n_sent for t in run_session(cfg)[0].values()) == 1000


def test_conservation_per_class():
    cfg = ProtocolConfig(DEFAULT_SCHEDULE, 200_000, ChannelDetector(distance_km=0, dark_count_prob=0.01), rng_seed=1)
    for eve in (EveStrategy(), PNS_LOSSLESS):
        for t in run_session(cfg, eve)[0].values():
            assert 0 <= t.n_errors_sifted <= t.n_detected_sifted <= t.n_sifted <= t.n_sent


# --- trace ------------------------------------------------------------------

def test_trace_consistent_with_tally():
    cfg = ProtocolConfig(DEFAULT_SCHEDULE, 50_000, ChannelDetector(distance_km=0), rng_seed=21)
    stats, trace = run_session(cfg, PNS_LOSSLESS, keep_trace=True)
    assert len(trace) == 50_000
    assert [r.index for r in trace] == list(range(50_000))
    assert sift_and_tally(trace, cfg.schedule) == stats
    for r in trace:
        assert r.photon_number_arriving <= r.photon_number_emitted
        if r.eve_action == "blocked":
            assert r.photon_number_arriving == 0
        if r.eve_action == "split_1_kept":
            assert r.photon_number_arriving == r.photon_number_emitted - 1
        assert (r.bob_bit is None) == (not r.bob_clicked)


def test_trace_memory_guard():
    cfg = ProtocolConfig(DEFAULT_SCHEDULE, 100_001, CHANNEL_50KM)
    with pytest.raises(ConfigurationError):
        run_session(cfg, keep_trace=True)


def test_trace_csv_format():
    cfg = ProtocolConfig(DEFAULT_SCHEDULE, 200, ChannelDetector(distance_km=0), rng_seed=2)
    _, trace = run_session(cfg, keep_trace=True)
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "index,class,n_emitted,alice_bit,alice_basis,eve_action,n_arrived,clicked,bob_bit,bob_basis"
    assert lines[0].split(",") == list(TRACE_COLUMNS)
    assert len(lines) == 201
    cells = lines[1].split(",")
    assert len(cells) == 10
    assert cells[0] == "0"
