"""Command line entry points.

    cfslsim simulate --config cfg.json --scenario BMSPGS --seed 0 --out runs/a
    cfslsim sweep --config cfg.json --grid grid.json --out runs/sweep
    cfslsim report --in runs/sweep --baseline HFSL

Exit codes: 0 on success, 2 on configuration problems, 3 on runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, SimConfig
from .harness import report, run, sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_config(args: argparse.Namespace) -> SimConfig:
    if args.config is not None:
        cfg = SimConfig.from_json_file(args.config)
    elif args.profile == "reference":
        cfg = SimConfig()
    else:
        cfg = SimConfig.desk()
    if getattr(args, "scenario", None) is not None:
        cfg = cfg.copy(scenario=args.scenario)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.copy(seed=args.seed)
    if args.set:
        cfg = cfg.apply_overrides(args.set)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfslsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument(
            "--profile",
            choices=["desk", "reference"],
            default="desk",
            help="base defaults when no --config is given",
        )
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config field (repeatable)",
        )

    sim = sub.add_parser("simulate", help="run one scenario")
    common(sim)
    sim.add_argument("--scenario", default=None, help="scenario name, e.g. BMSPGS or HFSL")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", type=Path, required=True, help="artifact directory")

    sw = sub.add_parser("sweep", help="run a scenario/threshold/fraction/seed grid")
    common(sw)
    sw.add_argument("--grid", type=Path, required=True, help="JSON grid file")
    sw.add_argument("--out", type=Path, required=True, help="sweep output root")

    rep = sub.add_parser("report", help="summarize a sweep against a baseline")
    rep.add_argument("--in", dest="in_dir", type=Path, required=True, help="sweep output root")
    rep.add_argument("--baseline", required=True, help="baseline scenario name")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    try:
        if args.command == "simulate":
            cfg = _load_config(args)
            result = run(cfg, args.out)
            final = result.final
            if final is not None:
                print(
                    f"{cfg.scenario} seed={cfg.seed}: rounds={final.round_index} "
                    f"acc_mean={final.acc_mean:.4f} energy={final.cum_energy_j:.6g} J "
                    f"time={final.cum_time_s:.6g} s"
                )
            else:
                print(f"{cfg.scenario} seed={cfg.seed}: no rounds executed")
            print(f"artifacts: {args.out}")
        elif args.command == "sweep":
            cfg = _load_config(args)
            try:
                grid = json.loads(Path(args.grid).read_text())
            except FileNotFoundError as exc:
                raise ConfigError(f"grid file not found: {args.grid}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"grid file is not valid JSON: {exc}") from exc
            rows = sweep(cfg, grid, args.out)
            failed = [row for row in rows if row["status"] != "ok"]
            print(f"sweep: {len(rows)} cells, {len(failed)} failed; summary at {args.out}/summary.csv")
            for row in failed:
                print(f"  failed: {row['scenario']} seed={row['seed']}: {row['error']}")
            if failed:
                return EXIT_RUNTIME
        else:
            rows = report(args.in_dir, args.baseline)
            header = (
                f"{'scenario':<20} {'phi':>5} {'lf':>5} {'acc':>7} {'d_acc':>8} "
                f"{'energy J/round':>15} {'savings %':>10}"
            )
            print(header)
            for row in rows:
                print(
                    f"{row['scenario']:<20} {float(row['conf_threshold']):>5.2f} "
                    f"{float(row['labeled_fraction']):>5.2f} {float(row['acc_mean']):>7.4f} "
                    f"{float(row['acc_vs_baseline']):>+8.4f} "
                    f"{float(row['mean_round_energy_j']):>15.6g} "
                    f"{float(row['energy_savings_pct']):>10.2f}"
                )
            print(f"written: {args.in_dir}/report.csv")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures map to a distinct exit code
        logging.getLogger(__name__).exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
