"""Command-line entry point: ``ccrsync {analytic,simulate,sweep,validate}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure, 3 validation failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import analytic, experiments
from .config import SystemConfig, derive_constants, load_config, parse_config
from .errors import ConfigError, ModelValidityError, NumericalError
from .experiments import SweepSpec, format_cell, write_csv
from .simulator import run_campaign

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 1, 2, 3

TRIAL_COLUMNS = ("trial", "N_sig", "N_bg", "N_tot", "shift_true", "shift_est", "n_ch",
                 "outage", "aligned")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario file (key = value lines)")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override a configuration key; repeatable")
    common.add_argument("--out", metavar="DIR", default="ccrsync_out", help="output directory")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--trials", type=_positive_int, default=2000)
    sim.add_argument("--seed", type=int, default=1)
    sim.add_argument("--parallelism", type=_positive_int, default=1)

    parser = _Parser(prog="ccrsync", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("analytic", parents=[common], help="semi-analytic performance report")
    sub.add_parser("simulate", parents=[common, sim], help="Monte Carlo campaign")
    sweep = sub.add_parser("sweep", parents=[common, sim], help="analytic + simulation sweep")
    sweep.add_argument("--param", required=True, choices=experiments.SWEEP_AXES)
    sweep.add_argument("--values", required=True, help='"start:step:stop" or a comma list')
    sweep.add_argument("--sigma-values", help="sigma_p values for a w_z sweep")
    sub.add_parser("validate", parents=[common, sim], help="run the oracle checks")
    return parser


def _load(args) -> SystemConfig:
    cfg = load_config(args.config) if args.config else SystemConfig()
    if args.set:
        cfg = parse_config("\n".join(args.set), base=cfg)
    derive_constants(cfg)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_analytic(cfg: SystemConfig, out: Path) -> int:
    summary = analytic.analyze(cfg)
    write_csv(out / "nsig.csv", ("n", "probability"), zip(summary.nsig.support, summary.nsig.values))
    write_csv(out / "nbg.csv", ("n", "probability"), zip(summary.nbg.support, summary.nbg.values))
    dc = derive_constants(cfg)
    rows = [(f.name, getattr(dc, f.name)) for f in dataclasses.fields(dc)]
    rows += [
        ("mean_nsig", summary.mean_nsig),
        ("mean_nbg", summary.mean_nbg),
        ("n_t_min", summary.n_t_min),
        ("std_nch", summary.sync.std),
        ("std_nch_literal", summary.sync.std_literal),
        ("retained_mass", summary.sync.retained_mass),
        ("low_confidence", summary.sync.low_confidence),
        ("outage", summary.outage),
        ("outage_no_detection", summary.outage_no_detection),
        ("nsig_total", summary.nsig.total()),
    ]
    write_csv(out / "summary.csv", ("quantity", "value"), rows)
    print(f"E[N_sig] = {summary.mean_nsig:.4g}   E[N_bg] = {summary.mean_nbg:.4g}   "
          f"N_t,min = {summary.n_t_min}")
    print(f"STD(n_ch) = {summary.sync.std * 1e12:.4g} ps   outage = {summary.outage:.4g}   "
          f"P(no detection) = {summary.outage_no_detection:.4g}")
    if summary.sync.low_confidence:
        print("warning: under half of the count mass reaches the threshold", file=sys.stderr)
    print(f"tables written to {out}")
    return EXIT_OK


def cmd_simulate(cfg: SystemConfig, trials: int, seed: int, parallelism: int, out: Path) -> int:
    stats = run_campaign(cfg, trials, seed, parallelism)
    write_csv(out / "trials.csv", TRIAL_COLUMNS,
              ((i, r.N_sig, r.N_bg, r.N_tot, r.shift_true, r.shift_est, r.n_ch, r.outage, r.aligned)
               for i, r in enumerate(stats.results)))
    rows = [
        ("trials", stats.trials, None, None),
        ("outage", stats.empirical_outage, *stats.outage_ci),
        ("nch_mean", stats.nch_mean, *stats.nch_mean_ci),
        ("nch_std", stats.nch_std, *stats.nch_std_ci),
        ("alignment_success_rate", stats.alignment_success_rate, None, None),
        ("synced_trials", stats.synced_trials, None, None),
        ("mean_nsig", stats.mean_nsig, None, None),
        ("mean_nbg", stats.mean_nbg, None, None),
    ]
    write_csv(out / "summary.csv", ("quantity", "value", "ci_low", "ci_high"), rows)
    print(f"{trials} trials: outage = {stats.empirical_outage:.4g}   "
          f"STD(n_ch) = {stats.nch_std * 1e12:.4g} ps   "
          f"alignment = {format_cell(stats.alignment_success_rate) or 'n/a'}")
    print(f"CSV written to {out}")
    return EXIT_OK


def cmd_sweep(cfg: SystemConfig, spec: SweepSpec, parallelism: int, out: Path) -> int:
    def progress(row):
        note = f"  [{row.error}]" if row.error else ""
        print(f"{row.parameter} = {row.value:.6g} (sigma_p = {row.sigma_p:.3g}): "
              f"std analytic {row.std_nch_analytic * 1e12:.4g} ps, mc {row.std_nch_mc * 1e12:.4g} ps; "
              f"outage analytic {row.outage_analytic:.4g}, mc {row.outage_mc:.4g}{note}")

    rows = experiments.run_sweep(cfg, spec, parallelism, progress)
    write_csv(out / "sweep.csv", experiments.SWEEP_COLUMNS, experiments.sweep_table(rows))
    if spec.parameter == "w_z":
        write_csv(out / "optimal_wz.csv", ("sigma_p", "w_z_opt_analytic", "w_z_opt_mc"),
                  experiments.optimal_waist(rows))
    print(f"CSV written to {out}")
    return EXIT_OK


def cmd_validate(cfg: SystemConfig, trials: int, seed: int, parallelism: int, out: Path) -> int:
    checks = experiments.validation_suite(cfg, trials, seed, parallelism)
    write_csv(out / "validate.csv", ("check", "status", "measured", "tolerance", "detail"),
              ((c.name, c.status, c.measured, c.tolerance, c.detail) for c in checks))
    for c in checks:
        print(f"{c.status.upper():4s}  {c.name}: measured {c.measured:.4g}, "
              f"tolerance {c.tolerance:.4g}  {c.detail}")
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed or skipped")
    return EXIT_VALIDATION if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        out = _outdir(args)
        if args.command == "analytic":
            return cmd_analytic(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.trials, args.seed, args.parallelism, out)
        if args.command == "sweep":
            spec = SweepSpec(
                parameter=args.param,
                values=tuple(experiments.parse_sweep_values(args.param, args.values)),
                trials=args.trials,
                seed=args.seed,
                sigma_p_values=tuple(experiments.parse_sweep_values("sigma_p", args.sigma_values))
                if args.sigma_values else (),
            )
            return cmd_sweep(cfg, spec, args.parallelism, out)
        return cmd_validate(cfg, args.trials, args.seed, args.parallelism, out)
    except (ConfigError, OSError) as exc:
        print(f"ccrsync: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ModelValidityError, ArithmeticError) as exc:
        print(f"ccrsync: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
