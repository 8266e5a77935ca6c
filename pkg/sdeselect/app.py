import argparse
import logging
import sys

from sdeselect import __version__
from sdeselect.commands.routes import COMMANDS
from sdeselect.errors import ConfigError, SDESelectError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(quiet=False):
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format=LOG_FORMAT)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH', help='TOML experiment configuration')
    common.add_argument('--seed', type=int, help='master seed (overrides [seeds] master)')
    common.add_argument('--out', metavar='PATH', help='output directory (overrides [output] directory)')
    common.add_argument('--replications', type=int, help='replicate count R')
    common.add_argument('--prior-draws', type=int, help='prior draws m per marginal likelihood')
    common.add_argument('--quiet', action='store_true', help='warnings and errors only')

    parser = argparse.ArgumentParser(prog='sdeselect',
                                     description='Bayes factor covariate selection for SDEs')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', required=True)
    for name, cmd in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=cmd.help, description=cmd.help)
    return parser


def cli_dispatch(argv=None):
    """Run one subcommand; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors exit 2, --help and --version exit 0
        return exc.code if isinstance(exc.code, int) else 2

    configure_logging(args.quiet)
    try:
        return COMMANDS[args.command].handler(args)
    except ConfigError as exc:
        print(f"sdeselect: {exc}", file=sys.stderr)
        return 2
    except SDESelectError as exc:
        logger.debug("run failed", exc_info=True)
        print(f"sdeselect: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        # library argument checks and file system failures outside the result store
        logger.debug("run failed", exc_info=True)
        print(f"sdeselect: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    return cli_dispatch(argv)


if __name__ == '__main__':
    sys.exit(main())
