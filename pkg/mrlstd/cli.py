"""
Command line interface:

    mrlstd run CONFIG.yaml      one experiment config
    mrlstd sweep CONFIG_DIR     every config in a directory, one table
    mrlstd report RUN_DIR       re-aggregate a run directory
    mrlstd oracle               two-room value-iteration reference tables
"""

import sys
import logging
import argparse

from mrlstd import harness
from mrlstd._version import __version__

logger = logging.getLogger(__name__)


def _add_run_flags(p):
    p.add_argument('--out-dir', default=None,
                   help="run directory for CSV/JSON outputs")
    p.add_argument('--seeds', type=int, default=None,
                   help="override the number of seeds in every config")
    p.add_argument('--fast', action='store_true',
                   help="use {} seeds".format(harness.FAST_SEEDS))
    p.add_argument('--jobs', type=int, default=1,
                   help="worker processes (default 1)")
    p.add_argument('--max-iter', type=int, default=None,
                   help="override the LSPI iteration cap")


def build_parser():
    parser = argparse.ArgumentParser(
        prog='mrlstd',
        description="Manifold-regularised kernel LSTD experiments")
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help="-v for progress, -vv for solver diagnostics")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('run', help="run one experiment config")
    p.add_argument('config', help="YAML config file")
    _add_run_flags(p)

    p = sub.add_parser('sweep', help="run a directory of configs")
    p.add_argument('configs', help="directory of YAML config files")
    _add_run_flags(p)

    p = sub.add_parser('report', help="re-aggregate a run directory")
    p.add_argument('run_dir')

    p = sub.add_parser('oracle', help="write two-room reference tables")
    p.add_argument('--out-dir', default='oracle')

    return parser


def _configs(path, args):
    seeds = harness.FAST_SEEDS if args.fast else args.seeds
    return [c.with_overrides(seeds, args.max_iter)
            for c in harness.load_configs(path)]


def main(argv=None):

    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")

    if getattr(args, 'jobs', 1) < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return 2

    try:
        if args.command in ('run', 'sweep'):
            path = args.config if args.command == 'run' else args.configs
            result = harness.sweep(_configs(path, args), args.out_dir, args.jobs)
            print(harness.summary_text(result.records), end='')
        elif args.command == 'report':
            records = harness.report(args.run_dir)
            print(harness.summary_text(records), end='')
        elif args.command == 'oracle':
            paths = harness.oracle(args.out_dir)
            for name in sorted(paths):
                print("{}: {}".format(name, paths[name]))
    except (harness.ConfigError, FileNotFoundError) as e:
        print("mrlstd: error: {}".format(e), file=sys.stderr)
        return 2

    return 0


if __name__ == '__main__':
    sys.exit(main())
