"""Command-line front end.

Usage::

    tpavss SUBCOMMAND --config PATH_OR_NAME [--out DIR] [--threads N] [--pair-only]
                      [--emit-gnuplot] [--cache DIR | --no-cache] [--seed N]

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import BUNDLED, load_config
from .errors import ConfigurationError, DomainError, NumericalError, StageError, TpavssError
from .pipeline import CACHE_ENV, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

SUBCOMMANDS = {
    "jsa": "joint spectral amplitude, Schmidt modes and gain calibration",
    "trace": "delay trace at the smallest chirp",
    "sweep-chirp": "delay traces for the whole chirp ensemble",
    "spectrum": "spectra of the chirp ensemble",
    "identify": "relative variances and level candidates",
    "baseline-lengths": "length-averaged reference spectrum",
    "all": "every stage (baseline only when enabled in the configuration)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tpavss",
        description="Two-photon absorption spectroscopy with chirped twin beams.",
        epilog=f"Bundled configurations: {', '.join(BUNDLED)}. "
               f"Default cache directory: ${CACHE_ENV} or ~/.cache/tpavss.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, help="YAML file or bundled configuration name")
        p.add_argument("--out", help="output directory (default: run.output_dir of the configuration)")
        p.add_argument("--threads", type=int, help="worker threads for ensemble members")
        p.add_argument("--pair-only", action="store_true", help="drop the exchange (autocorrelation) term")
        p.add_argument("--emit-gnuplot", action="store_true", help="also write variance.csv and plot.gp")
        cache = p.add_mutually_exclusive_group()
        cache.add_argument("--cache", help=f"artifact cache directory (default: ${CACHE_ENV})")
        cache.add_argument("--no-cache", action="store_true", help="do not read or write cached artifacts")
        p.add_argument("--seed", type=int, help="override the seed of a random level scheme")
        p.add_argument("-q", "--quiet", action="store_true", help="suppress progress lines")
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, (ConfigurationError, DomainError)):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (NumericalError, ArithmeticError)):
        return EXIT_NUMERICAL
    if isinstance(exc, TpavssError):
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        cfg = load_config(args.config).with_overrides(seed=args.seed, pair_only=args.pair_only,
                                                      threads=args.threads, output_dir=args.out)
        kwargs = {"progress": (lambda msg: None)} if args.quiet else {}
        manifest = run_pipeline(cfg, [args.command], cache_dir=args.cache, use_cache=not args.no_cache,
                                emit_gnuplot=args.emit_gnuplot, **kwargs)
    except (TpavssError, OSError, ValueError, ArithmeticError) as exc:
        code = _exit_code(exc)
        print(f"tpavss: error: {exc}", file=sys.stderr)
        return code
    if not args.quiet:
        print(f"[tpavss] wrote {len(manifest.files)} files to {manifest.out_dir}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
