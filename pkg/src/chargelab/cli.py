"""Command-line entry point: ``chargelab run|validate|table``.

Exit codes: 0 success, 1 invalid configuration or unusable output
directory, 2 at least one run stopped at the simulation time limit, 3 an
internal error occurred in some run.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import harness, report
from .config import ConfigError, RunConfig, parse_config

OUTPUT_DIR_ENV = "CHARGELAB_OUTPUT_DIR"
SUMMARY_JSON = "summary.json"
SUMMARY_TXT = "summary.txt"

EXIT_OK, EXIT_CONFIG, EXIT_TIMEOUT, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("chargelab")


def output_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir)


def _prepare(out: Path) -> None:
    """Create the output directory and prove it is writable."""
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    probe.write_text("")
    probe.unlink()


def csv_name(label: str, trial: int, trials: int) -> str:
    return f"{label}.csv" if trials == 1 else f"{label}-trial{trial:03d}.csv"


def run_command(cfg: RunConfig, out: Path) -> int:
    try:
        _prepare(out)
    except OSError as exc:
        log.error("output directory %s is not writable: %s", out, exc)
        return EXIT_CONFIG
    jobs, names, timing = [], [], []
    for spec in cfg.scenarios:
        scenario = cfg.scenario(spec)
        for k in range(spec.trials):
            jobs.append((scenario, cfg.battery, k, cfg.ekf))
            names.append((csv_name(spec.label, k, spec.trials), k))
            timing.append(spec.record_timing)
    log.info("running %d simulation(s) with %d worker(s)", len(jobs), cfg.workers)
    try:
        results = harness.run_many(jobs, cfg.workers)
    except Exception:  # noqa: BLE001 - reported through the exit code
        log.exception("simulation failed")
        return EXIT_INTERNAL
    records = []
    for result, (name, k), rec_time in zip(results, names, timing):
        report.write_trajectory(out / name, result, rec_time)
        records.append(report.summary_record(result, k))
    report.write_summary(out / SUMMARY_JSON, records)
    text, _ = report.export_table(records)
    (out / SUMMARY_TXT).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if any(r.error for r in results):
        return EXIT_INTERNAL
    if any(r.timed_out for r in results):
        return EXIT_TIMEOUT
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="chargelab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="simulate every scenario of a configuration")
    p_run.add_argument("config", type=Path)
    p_val = sub.add_parser("validate", help="check a configuration without running it")
    p_val.add_argument("config", type=Path)
    p_tab = sub.add_parser("table", help="print the comparison table of a results directory")
    p_tab.add_argument("results", type=Path)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")

    if args.command == "table":
        try:
            records = report.read_summary(args.results / SUMMARY_JSON)
        except (OSError, ValueError) as exc:
            log.error("%s", exc)
            return EXIT_CONFIG
        sys.stdout.write(report.export_table(records)[0])
        return EXIT_OK

    try:
        cfg = parse_config(args.config)
    except (OSError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if args.command == "validate":
        runs = sum(s.trials for s in cfg.scenarios)
        print(f"{args.config}: ok ({len(cfg.scenarios)} scenario(s), {runs} run(s))")
        return EXIT_OK
    return run_command(cfg, output_dir(cfg))


if __name__ == "__main__":
    sys.exit(main())
