"""Command-line entry point: ``fda-isac <subcommand> --scenario FILE``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import os
import sys

from . import __version__, harness, kernels
from .array_model import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
SEED_ENV = "ISAC_SEED"


def _snr_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid SNR list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty SNR list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fda-isac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("sense", "sensing RMSE / hit-rate Monte-Carlo sweep"),
        ("comm-ber", "communication BER sweep with the analytic bound"),
        ("crb", "single-target CRB table"),
        ("complexity", "multiplication counts of the two estimators"),
        ("fodc-check", "steering range period versus the required range"),
        ("rate", "bits per pulse, CCIE versus FOPIM"),
    ]:
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--scenario", required=True, metavar="PATH")
        s.add_argument("--snr", type=_snr_list, metavar="DB[,DB...]",
                       help="override the SNR grid")
        s.add_argument("--trials", type=int, help="override the trial count")
        s.add_argument("--seed", type=int, help=f"master seed (beats ${SEED_ENV})")
        s.add_argument("--out", default="out", metavar="DIR", help="output directory")
    return p


def _apply_overrides(scn: harness.Scenario, args) -> None:
    exp = scn.experiment
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            exp.master_seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    if args.seed is not None:
        exp.master_seed = args.seed
    if args.snr is not None:
        exp.snr_grid_db = args.snr
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be >= 1")
        exp.trials = args.trials


def run(args) -> dict:
    scn = harness.load_scenario(args.scenario)
    _apply_overrides(scn, args)
    cmd = args.command
    files: dict[str, str] = {}
    summary = None
    if cmd == "sense":
        log: list = []
        rows = harness.run_sensing_experiment(scn, log)
        files["sense.csv"] = harness.csv_text(
            harness.SENSE_COLUMNS, harness.rows_as_lists(rows, harness.SENSE_COLUMNS))
        files["sense_trials.csv"] = harness.csv_text(harness.TRIAL_COLUMNS, log)
    elif cmd == "comm-ber":
        rows = harness.run_comm_ber(scn)
        files["ber.csv"] = harness.csv_text(
            harness.BER_COLUMNS, harness.rows_as_lists(rows, harness.BER_COLUMNS))
    elif cmd == "crb":
        files["crb.csv"] = harness.csv_text(harness.CRB_COLUMNS, harness.run_crb_table(scn))
    elif cmd == "complexity":
        files["complexity.csv"] = harness.csv_text(harness.COMPLEXITY_COLUMNS,
                                                   harness.run_complexity_table(scn))
    elif cmd == "rate":
        files["rate.csv"] = harness.csv_text(harness.RATE_COLUMNS, harness.run_rate_table(scn))
    elif cmd == "fodc-check":
        report = harness.run_fodc_check(scn)
        summary = report.summary()
        print(summary)
        files["fodc.csv"] = harness.csv_text(
            ["period_m", "minimal_period_m", "max_range_m", "ok", "default_bound_m",
             "denominators"],
            [[report.period_m, report.minimal_period_m, report.max_range_m, report.ok,
              report.default_bound_m, " ".join(map(str, report.denominators))]])
    manifest = {
        "command": cmd,
        "scenario": harness.scenario_echo(scn),
        "scenario_path": os.path.basename(args.scenario),
        "master_seed": scn.experiment.master_seed,
        "version": __version__,
        "kernel_backend": kernels.backend.name,
    }
    if summary is not None:
        manifest["summary"] = summary
    return harness.write_outputs(args.out, files, manifest)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"runtime error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
