"""Experiment orchestration: single points, distance sweeps and attack comparisons."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from decoyqkd.config import ExperimentSpec
from decoyqkd.core_models import SIGNAL, WEAK_DECOY, transmittance
from decoyqkd.decoy_analysis import analyze
from decoyqkd.errors import DecoyQKDError
from decoyqkd.simulation import EveStrategy, run_session

log = logging.getLogger(__name__)

WORKERS_ENV = "DECOYQKD_WORKERS"
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ResultRow:
    """One sweep point, in report column order."""

    distance_km: float
    eta: float
    Q_mu: float
    E_mu: float
    Q_nu: float
    E_nu: float
    Y0_hat: float
    Y0_lo: float
    Y0_hi: float
    Y1_lower: float
    Q1_lower: float
    e1_upper: float
    R_decoy: float
    R_baseline: float
    verdict: str
    clamps: tuple[str, ...] = ()

    @property
    def failed(self) -> bool:
        return self.verdict == "failed"


def splitmix64(x: int) -> int:
    """SplitMix64 finaliser; spreads consecutive integers over the 64-bit range."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def point_seed(seed: int, index: int) -> int:
    """RNG seed for sweep point ``index``: ``seed XOR splitmix64(index)``."""
    return (int(seed) & _MASK64) ^ splitmix64(index)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise DecoyQKDError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
        return max(1, n)
    return os.cpu_count() or 1


def run_point(spec: ExperimentSpec, index: int, distance_km: float) -> ResultRow:
    """Simulate and analyse one distance; module errors produce a ``failed`` row."""
    try:
        channel = spec.protocol.channel.at_distance(distance_km)
        protocol = replace(spec.protocol, channel=channel, rng_seed=point_seed(spec.protocol.rng_seed, index))
        observed, _ = run_session(protocol, spec.eve)
        a = spec.analysis
        est, report = analyze(
            observed,
            channel,
            q=protocol.basis_match_prob,
            f_ec=a.f_ec,
            confidence=a.confidence,
            z_threshold=a.z_threshold,
            qber_abort_threshold=protocol.qber_abort_threshold,
            decoy_abort=a.decoy_abort,
            bound_gains=a.bound_gains,
        )
    except (DecoyQKDError, ValueError, ArithmeticError) as exc:
        log.warning("point %d (%g km) failed: %s", index, distance_km, exc)
        nan = math.nan
        return ResultRow(distance_km, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan,
                         "failed", (f"error: {exc}",))
    signal = observed[SIGNAL]
    weak = observed.get(WEAK_DECOY)
    return ResultRow(
        distance_km=distance_km,
        eta=transmittance(channel),
        Q_mu=signal.gain,
        E_mu=signal.qber,
        Q_nu=weak.gain if weak is not None else math.nan,
        E_nu=weak.qber if weak is not None else math.nan,
        Y0_hat=est.y0.value,
        Y0_lo=est.y0.lo,
        Y0_hi=est.y0.hi,
        Y1_lower=est.y1_lower,
        Q1_lower=est.q1_lower,
        e1_upper=est.e1_upper,
        R_decoy=report.r_decoy,
        R_baseline=report.r_baseline,
        verdict=report.anomaly.verdict,
        clamps=report.clamps,
    )


def _run_indexed(args: tuple[ExperimentSpec, int, float]) -> ResultRow:
    return run_point(*args)


def run_experiment(
    spec: ExperimentSpec,
    distances: Optional[Sequence[float]] = None,
    workers: Optional[int] = None,
) -> list[ResultRow]:
    """One row per sweep point (or the configured single distance), in sweep order.

    Rows are identical for any ``workers`` value: each point's RNG stream
    depends only on the configured seed and the point's index.
    """
    if distances is None:
        distances = spec.sweep.distances() if spec.sweep is not None else [spec.protocol.channel.distance_km]
    jobs = [(spec, i, float(d)) for i, d in enumerate(distances)]
    workers = worker_count() if workers is None else max(1, workers)
    log.info("running %d point(s) with %d worker(s)", len(jobs), min(workers, len(jobs)))
    if workers == 1 or len(jobs) == 1:
        return [_run_indexed(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_indexed, jobs))


def compare_attack(
    spec: ExperimentSpec,
    distances: Optional[Sequence[float]] = None,
    workers: Optional[int] = None,
) -> tuple[list[ResultRow], list[ResultRow]]:
    """Run the same spec honestly and under the configured PNS attack."""
    honest = replace(spec, eve=EveStrategy("none"))
    attacked = replace(spec, eve=replace(spec.eve, kind="pns"))
    return run_experiment(honest, distances, workers), run_experiment(attacked, distances, workers)
