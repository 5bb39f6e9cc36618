"""Command-line entry point.

    inertia-ukf simulate --config FILE --out DIR [--seed N]
    inertia-ukf montecarlo --config FILE --out DIR [--runs N] [--seed N]
    inertia-ukf report --stats CSV
    inertia-ukf validate-config --config FILE   (``-`` reads stdin)

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(filter divergence, I/O error, malformed input).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import outputs
from .config import ConfigError, ScenarioConfig, parse_config, parse_config_text
from .scenario import markers_from_config, run_monte_carlo, run_single, truth_normalized_inertia

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("inertia_ukf")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="inertia-ukf", description="Joint pose/inertia UKF simulation and Monte Carlo harness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one seeded scenario and write its logs")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int)

    m = sub.add_parser("montecarlo", help="run a seeded Monte Carlo campaign")
    m.add_argument("--config", required=True, type=Path)
    m.add_argument("--out", required=True, type=Path)
    m.add_argument("--runs", type=int)
    m.add_argument("--seed", type=int)

    r = sub.add_parser("report", help="summarize a Monte Carlo statistics CSV")
    r.add_argument("--stats", required=True, type=Path)

    v = sub.add_parser("validate-config", help="check a configuration file")
    v.add_argument("--config", required=True)
    return p


def _load(path: Path) -> ScenarioConfig:
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    return parse_config(path)


def _overrides(cfg: ScenarioConfig, seed: int | None, runs: int | None = None) -> ScenarioConfig:
    mc = {}
    if seed is not None:
        mc["seed"] = seed
    if runs is not None:
        mc["runs"] = runs
    return cfg.with_(montecarlo=mc) if mc else cfg


def cmd_simulate(args) -> int:
    cfg = _overrides(_load(args.config), args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    run = run_single(cfg, cfg.montecarlo.seed, keep_frames=True)
    outputs.write_measurement_log(args.out / "measurements.csv", run.frames, len(markers_from_config(cfg)))
    outputs.write_filter_trace(args.out / "filter_trace.csv", run)
    outputs.write_json(args.out / "summary.json", outputs.run_summary(run))
    if run.diverged:
        print(f"filter diverged at epoch {run.failure_epoch}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {args.out}/measurements.csv, filter_trace.csv, summary.json")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = _overrides(_load(args.config), args.seed, args.runs)
    args.out.mkdir(parents=True, exist_ok=True)
    stats, _ = run_monte_carlo(cfg)
    outputs.write_stats_csv(args.out / "mc_stats.csv", stats)
    summary = outputs.mc_summary(stats, cfg.montecarlo.regime, cfg.montecarlo.seed, truth_normalized_inertia(cfg))
    outputs.write_json(args.out / "mc_summary.json", summary)
    print(outputs.format_report(outputs.read_stats_csv(args.out / "mc_stats.csv"), cfg.montecarlo.steady_fraction), end="")
    if stats.n_runs == 0:
        print("every run diverged", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.stats.exists():
        print(f"{args.stats}: no such file", file=sys.stderr)
        return EXIT_USAGE
    try:
        cols = outputs.read_stats_csv(args.stats)
    except outputs.StatsFormatError as exc:
        print(f"malformed statistics CSV: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(outputs.format_report(cols), end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.config == "-":
        cfg = parse_config_text(sys.stdin.read(), source="<stdin>")
    else:
        cfg = _load(Path(args.config))
    print(f"{args.config}: OK ({cfg.montecarlo.regime} regime, {cfg.epochs} epochs)")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "montecarlo": cmd_montecarlo,
    "report": cmd_report,
    "validate-config": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
