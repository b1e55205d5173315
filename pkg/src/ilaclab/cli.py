"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import ConfigError, ExperimentConfig, Kind
from .eigensolver import ConvergenceError
from .experiments import VerificationFailure, run_experiment
from .lattice import DistributionError, LatticeError
from .montecarlo import RealizationFailure

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3

_HELP = {
    Kind.DOS: "density of states of H+ and H-",
    Kind.ILAC: "interband light absorption coefficient (cumulative curve)",
    Kind.RHO: "correlation measure of (H+, H-)",
    Kind.CORNERS: "corner classification and the local increment bound",
    Kind.TAILS: "DOS tail profile and Lifshitz exponent fit",
    Kind.VERIFY21: "edge inequality check against the DOS",
    Kind.VERIFY31: "ILAC tails at external and internal band edges",
    Kind.COVARIANCE: "covariant-operator trace identities on a finite torus",
}


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--workers", type=int, help="worker processes (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--realizations", type=int, help="number of realizations (overrides config)")
    common.add_argument("--print-config", action="store_true",
                        help="print the resolved config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _ArgumentParser(prog="ilaclab", description="Spectral statistics of random Schrödinger pairs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    for kind in Kind:
        sub.add_parser(kind.value, parents=[common], help=_HELP[kind])
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    kind = Kind(args.command)
    if args.config:
        config = ExperimentConfig.load(args.config)
        if config.kind != kind:
            raise ConfigError(f"config is for {config.kind.value!r}, not {kind.value!r}")
    else:
        config = ExperimentConfig(kind)
    return config.with_overrides(
        master_seed=args.seed,
        workers=args.workers,
        out_dir=args.out,
        realizations=args.realizations,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
    except (ConfigError, LatticeError, DistributionError, ValueError) as exc:
        print(f"ilaclab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.print_config:
        sys.stdout.write(config.to_ini())
        return EXIT_OK
    try:
        manifest = run_experiment(config)
    except VerificationFailure as exc:
        print(f"ilaclab: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (RealizationFailure, ConvergenceError) as exc:
        print(f"ilaclab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (LatticeError, DistributionError) as exc:
        print(f"ilaclab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ilaclab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {len(manifest.outputs)} files to {config.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
