"""Command-line interface: simulate, process, report, selftest."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .channel import PulseTemplate
from .config import parse_scenario
from .errors import CrngError, ParseError, ValidationError
from .records import read_records, write_records
from .rows import read_rows_csv, write_rows_csv, write_rows_jsonl
from .selftest import run_selftest
from .sim import CRNG_SCHEMES, Scenario, decode_exchange, run_static, run_trajectory, summarize, _rows_for

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _config_epilog() -> str:
    from .config import KEYS

    lines = ["scenario file keys (defaults in parentheses):"]
    for key, (tag, default) in KEYS.items():
        shown = "required" if key in ("seed", "anchors") else repr(default)
        lines.append(f"  {key:28s} {tag:8s} ({shown})")
    lines.append("environment: CRNG_THREADS caps parallel trial execution (0 = auto).")
    return "\n".join(lines)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crng",
        description="Concurrent-ranging simulator and CIR processing pipeline.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="run a scenario end to end")
    sim_sub = sim.add_subparsers(dest="mode")
    for mode in ("static", "trajectory"):
        p = sim_sub.add_parser(mode, help=f"{mode} scenario")
        p.add_argument("config", help="scenario file")
        _common_flags(p)

    proc = sub.add_parser("process", help="offline pipeline on logged CIR records")
    proc.add_argument("records", help="NDJSON record stream")
    proc.add_argument("config", help="scenario file the records were produced with")
    proc.add_argument("--template", help="matched-filter template file (one amplitude per line)")
    _common_flags(proc)

    rep = sub.add_parser("report", help="recompute summary tables from a rows file")
    rep.add_argument("rows", help="rows.csv produced by simulate/process")

    sub.add_parser("selftest", help="run the fast analytic acceptance checks")
    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", default="crng-out", help="output directory (default: crng-out)")
    p.add_argument("--scheme", action="append", help="restrict to a scheme (repeatable)")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="rows format")


def _load_scenario(path: str, args) -> Scenario:
    scn = parse_scenario(path)
    if args.seed is not None:
        scn.seed = args.seed
    if args.scheme:
        bad = [s for s in args.scheme if s not in scn.schemes]
        if bad:
            raise ValidationError(f"--scheme {bad} not in scenario schemes {scn.schemes}")
        scn.schemes = tuple(s for s in scn.schemes if s in args.scheme)
    return scn


def _write_outputs(args, records, rows, summary) -> None:
    os.makedirs(args.out, exist_ok=True)
    if records:
        write_records(os.path.join(args.out, "records.ndjson"), records)
    if args.format == "jsonl":
        write_rows_jsonl(os.path.join(args.out, "rows.jsonl"), rows)
    else:
        write_rows_csv(os.path.join(args.out, "rows.csv"), rows)
    text = summary.to_text()
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)


def _cmd_simulate(args) -> int:
    scn = _load_scenario(args.config, args)
    if args.mode == "static":
        records, rows, summary = run_static(scn)
    else:
        records, rows, summary = run_trajectory(scn)
    _write_outputs(args, records, rows, summary)
    return EXIT_OK


def _cmd_process(args) -> int:
    scn = _load_scenario(args.config, args)
    schemes = tuple(s for s in scn.schemes if s in CRNG_SCHEMES)
    if not schemes:
        raise ValidationError("process needs at least one concurrent-ranging scheme")
    if args.template:
        samples = np.loadtxt(args.template, dtype=float, ndmin=1)
        template = PulseTemplate.from_samples(samples, scn.proc.upsample_factor, scn.bandwidth_mhz)
    else:
        template = scn.template()
    rows = []
    for rec in read_records(args.records):
        exchange = rec.to_exchange(scn.crng)
        if scn.initiator_positions is not None:
            position_id = rec.exchange_id // scn.trials_per_position
            trial = rec.exchange_id % scn.trials_per_position
        else:
            position_id, trial = rec.exchange_id, 0
        decoded = decode_exchange(exchange, scn, template, schemes)
        for s in schemes:
            dists, pos = decoded[s]
            rows.extend(_rows_for(s, position_id, trial, dists, pos, rec.ground_truth_m, None))
    if not rows:
        raise ValidationError("record stream produced no rows")
    summary = summarize(rows, scn.outlier_m)
    _write_outputs(args, [], rows, summary)
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = read_rows_csv(args.rows)
    if not rows:
        raise ValidationError("rows file is empty")
    sys.stdout.write(summarize(rows).to_text())
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors; map the latter.
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    if args.command == "simulate" and getattr(args, "mode", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "process":
            return _cmd_process(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "selftest":
            return EXIT_OK if run_selftest() else EXIT_VALIDATION
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CrngError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_VALIDATION


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
