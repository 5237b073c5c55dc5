"""Command-line entry point: ``decoyqkd run|sweep|compare --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 runtime/analysis error,
4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from decoyqkd.config import ExperimentSpec, load_config, parse_value
from decoyqkd.errors import ConfigurationError, DecoyQKDError
from decoyqkd.experiment import ResultRow, compare_attack, run_experiment
from decoyqkd.report import ReportWriteError, emit_report, format_float
from decoyqkd.simulation import TRACE_LIMIT, run_session, write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

log = logging.getLogger("decoyqkd")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decoyqkd", description="Decoy-state BB84 simulation and key-rate analysis."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment configuration file")
    common.add_argument("--seed", type=int, help="protocol.seed")
    common.add_argument("--pulses", type=int, help="protocol.pulses_total")
    common.add_argument("--out", help="output.directory")
    common.add_argument("--format", dest="formats", help="output.formats, e.g. csv,json")
    common.add_argument("--eve", choices=("none", "pns"), help="eve.kind")
    common.add_argument("--block-prob", type=float, help="eve.single_block_prob")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any configuration key (repeatable)",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    run = sub.add_parser("run", parents=[common], help="simulate and analyse a single distance")
    run.add_argument("--trace", type=Path, help=f"write the pulse trace CSV (<= {TRACE_LIMIT} pulses)")
    sub.add_parser("sweep", parents=[common], help="distance sweep from the sweep.* keys")
    sub.add_parser("compare", parents=[common], help="honest vs PNS-attacked runs plus a delta summary")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    flag_keys = {
        "seed": "protocol.seed",
        "pulses": "protocol.pulses_total",
        "out": "output.directory",
        "formats": "output.formats",
        "eve": "eve.kind",
        "block_prob": "eve.single_block_prob",
    }
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = parse_value(raw.strip())
    for attr, key in flag_keys.items():
        value = getattr(args, attr)
        if value is not None:
            out[key] = value
    return out


def _summary_line(label: str, row: ResultRow) -> str:
    return (
        f"{label}{format_float(row.distance_km)} km: R_decoy={format_float(row.R_decoy)} "
        f"R_baseline={format_float(row.R_baseline)} verdict={row.verdict}"
    )


def _compare_delta_csv(honest: Sequence[ResultRow], attacked: Sequence[ResultRow]) -> str:
    lines = ["distance_km,R_decoy_none,R_decoy_pns,delta_R_decoy,verdict_none,verdict_pns"]
    for h, a in zip(honest, attacked):
        lines.append(
            ",".join(
                [
                    format_float(h.distance_km),
                    format_float(h.R_decoy),
                    format_float(a.R_decoy),
                    format_float(a.R_decoy - h.R_decoy),
                    h.verdict,
                    a.verdict,
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _execute(args: argparse.Namespace, spec: ExperimentSpec) -> int:
    out_dir = Path(spec.output.directory)
    provenance = spec.resolved()
    if args.command == "run":
        if args.trace is not None:
            _, trace = run_session(spec.protocol, spec.eve, keep_trace=True)
            try:
                args.trace.parent.mkdir(parents=True, exist_ok=True)
                with open(args.trace, "w", encoding="utf-8", newline="") as fh:
                    write_trace_csv(trace, fh)
            except OSError as exc:
                raise ReportWriteError(f"cannot write trace {args.trace}: {exc.strerror or exc}") from exc
        rows = run_experiment(spec, [spec.protocol.channel.distance_km])
        emit_report(rows, out_dir, spec.output.formats, "run", provenance)
    elif args.command == "sweep":
        if spec.sweep is None:
            raise ConfigurationError("sweep needs sweep.start_km and sweep.end_km")
        rows = run_experiment(spec)
        emit_report(rows, out_dir, spec.output.formats, "sweep", provenance)
    else:
        honest, attacked = compare_attack(spec)
        emit_report(honest, out_dir, spec.output.formats, "compare_none", provenance)
        emit_report(attacked, out_dir, spec.output.formats, "compare_pns", provenance)
        delta = out_dir / "compare_delta.csv"
        try:
            delta.write_text(_compare_delta_csv(honest, attacked), encoding="utf-8")
        except OSError as exc:
            raise ReportWriteError(f"cannot write report {delta}: {exc.strerror or exc}") from exc
        for h, a in zip(honest, attacked):
            print(_summary_line("none ", h))
            print(_summary_line("pns  ", a))
        rows = honest + attacked
    if args.command != "compare":
        for row in rows:
            print(_summary_line("", row))
    failed = [r for r in rows if r.failed]
    if failed:
        log.error("%d point(s) failed", len(failed))
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        spec = load_config(args.config, _overrides(args))
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _execute(args, spec)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DecoyQKDError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
