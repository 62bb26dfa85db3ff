"""Command-line entry point: ``onebit-sl run`` and ``onebit-sl sweep-lmax``."""
from __future__ import annotations

import argparse
import logging
import sys

from .bench import ConfigError, emit_csv, lmax_sweep_config, load_config, run_experiment
from .detectors import FitError

log = logging.getLogger("onebit_sl")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onebit-sl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="key = value experiment file")
        p.add_argument("--out", required=True, help="CSV output path")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
        p.add_argument("--timing", action="store_true", help="record wall-time per detection")

    run = sub.add_parser("run", help="BER sweep over the SNR grid")
    common(run)
    run.add_argument("--detectors", help="comma-separated subset of mcd,mahalanobis,emld,mmd,bernoulli,lsl")

    sweep = sub.add_parser("sweep-lmax", help="LSL budget sweep against the full Bernoulli detector")
    common(sweep)
    sweep.add_argument("--lmax-grid", help="comma-separated budgets, overrides lmax_grid")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {"seed": args.seed, "workers": args.workers}
    if args.timing:
        overrides["timing"] = True
    if args.command == "run":
        overrides["detectors"] = args.detectors
    else:
        overrides["lmax_grid"] = args.lmax_grid
    try:
        cfg = load_config(args.config, **overrides)
        if args.command == "sweep-lmax":
            cfg = lmax_sweep_config(cfg)
        log.info("running %d SNR points x %d realizations", len(cfg.snr_grid_db), cfg.channel_realizations)
        records = run_experiment(cfg)
        emit_csv(records, args.out)
    except (ConfigError, FitError, OSError) as exc:
        print(f"onebit-sl: error: {exc}", file=sys.stderr)
        return 2
    log.info("wrote %d records to %s", len(records), args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
