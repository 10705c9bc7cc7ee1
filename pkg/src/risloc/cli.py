"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

from .config import METHODS, PROFILES, ConfigError, ExperimentConfig, parse_methods, load_config
from .harness import NOISELESS, complexity_report, peb_table, run_sweep, run_trial, trial_row

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="risloc", description="RIS-assisted monostatic localization experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                        help="base profile the config file overrides (default: desk)")
        sp.add_argument("--seed", type=int, help="override master_seed")

    sp = sub.add_parser("sweep", help="Monte Carlo RMSE-vs-SNR sweep")
    common(sp)
    sp.add_argument("--out", help="output directory (default: output_dir from config)")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("trial", help="run one (trial, SNR) cell and dump it as JSON")
    common(sp)
    sp.add_argument("--snr", type=float, default=NOISELESS, help="dB; omit for a noiseless cell")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--methods")

    sp = sub.add_parser("complexity", help="rebuild counters, modeled cost and wall-time ratio")
    common(sp)
    sp.add_argument("--repeats", type=int, default=5)

    sp = sub.add_parser("bound", help="position error bound table")
    common(sp)
    sp.add_argument("--snr", type=float, required=True)
    sp.add_argument("--trials", type=int, default=10, help="number of scenes to tabulate")
    return p


def _load(args) -> ExperimentConfig:
    base = PROFILES[args.profile]()
    cfg = load_config(args.config, base) if args.config else base
    over = {}
    if args.seed is not None:
        over["master_seed"] = args.seed
    if getattr(args, "methods", None):
        over["methods"] = parse_methods(args.methods)
    if args.command == "sweep" and args.trials is not None:
        over["trials"] = args.trials
    return replace(cfg, **over) if over else cfg


def _json(obj) -> str:
    return json.dumps(obj, indent=2, default=str)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        if args.command == "sweep":
            out = args.out or cfg.output_dir
            report = run_sweep(cfg, workers=max(1, args.workers), out_dir=out)
            for row in report.rows:
                print(" ".join(f"{k}={v:.6g}" for k, v in row.items()))
            print(f"wrote {out}")
        elif args.command == "trial":
            rec = run_trial(cfg, args.index, args.snr)
            row = trial_row(rec, cfg)
            row["timing_us"] = rec.timing_us
            for name, res in rec.results.items():
                row[f"{name}_cost_trace"] = res.cost_trace
                row[f"{name}_converged"] = res.converged
            print(_json(row))
            if rec.failed:
                return EXIT_RUNTIME
        elif args.command == "complexity":
            print(_json(complexity_report(cfg, repeats=args.repeats)))
        elif args.command == "bound":
            rows = peb_table(cfg, args.snr, args.trials)
            cols = list(rows[0])
            print(",".join(cols))
            for r in rows:
                print(",".join(f"{r[c]:.6g}" if isinstance(r[c], float) and math.isfinite(r[c])
                               else str(r[c]) for c in cols))
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
