"""
Command line driver for the simulate / degrade / train / predict / track / score pipeline.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import torch
import yaml

from fenri import commands, logger
from fenri.config import Config
from fenri.const import (
    EX_DATAERR, EX_NUMERIC, EX_OK, EX_SOFTWARE, EX_USAGE, PROJECT_DESCRIPTION, PROJECT_NAME,
    PROJECT_VERSION)
from fenri.exceptions import ConfigError, FenriError, NumericFailureError

_LOGGER = logging.getLogger(__name__)

DEFAULT_CONFIGFILE = 'config.yaml'
DEFAULT_LOGFILE = 'fenri.log'


def _parse_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    # Flags take precedence over the configuration file
    overrides = {}
    for item in args.set or []:
        path, separator, value = item.partition('=')
        if not separator or not path:
            raise ConfigError("--set expects group.key=value, got '{}'".format(item))
        try:
            overrides[path.strip()] = yaml.safe_load(value)
        except yaml.YAMLError as ex:
            raise ConfigError("--set {}: {}".format(item, ex)) from ex
    if args.seed is not None:
        overrides['run.seed'] = args.seed
    if args.threads is not None:
        overrides['run.threads'] = args.threads
    if args.output is not None:
        overrides['run.output'] = args.output
    return overrides


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '-v', '--verbose',
        help="display all logging output",
        action='store_true')
    common.add_argument(
        '-c', '--configfile',
        help="configuration file name (default: %(default)s)",
        default=DEFAULT_CONFIGFILE)
    common.add_argument(
        '-l', '--logfile',
        help="if specified, also write log output to this file "
             "(default: %(const)s)",
        nargs='?',
        const=DEFAULT_LOGFILE)
    common.add_argument(
        '--set',
        help="override a setting, e.g. --set training.epochs=2 (repeatable)",
        action='append',
        metavar='GROUP.KEY=VALUE')
    common.add_argument(
        '--seed',
        help="seed for all random draws (run.seed)",
        type=int)
    common.add_argument(
        '--threads',
        help="worker thread cap (run.threads)",
        type=int)
    common.add_argument(
        '-o', '--output',
        help="run directory (run.output)")

    parser = argparse.ArgumentParser(
        prog="{}".format(PROJECT_NAME),
        description=PROJECT_DESCRIPTION)
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    subparsers.add_parser(
        'simulate', parents=[common],
        help="simulate phantom DWIs, ground-truth fODFs, masks, streamlines and seeds")

    sub = subparsers.add_parser(
        'degrade', parents=[common],
        help="subset, downsample and add noise to the simulated DWIs")
    sub.add_argument('--run', help="run directory to read (default: run.output)")

    sub = subparsers.add_parser(
        'train', parents=[common],
        help="train a model on the training subjects")
    sub.add_argument('--run', help="run directory to read (default: run.output)")

    sub = subparsers.add_parser(
        'predict', parents=[common],
        help="predict SH volumes with a trained model")
    sub.add_argument('--run', help="run directory to read (default: run.output)")
    sub.add_argument('--checkpoint', help="model checkpoint (default: <run>/model.pt)")
    sub.add_argument('--dwi', help="predict this DWI instead of the run's prediction subjects")
    sub.add_argument('--like', help="volume whose grid the prediction is sampled on")
    sub.add_argument('--out', help="output SH volume (required with --dwi)")

    sub = subparsers.add_parser(
        'upsample', parents=[common],
        help="trilinearly upsample low-resolution SH volumes (baseline)")
    sub.add_argument('--run', help="run directory to read (default: run.output)")
    sub.add_argument('--sh', help="upsample this SH volume instead of the run's subjects")
    sub.add_argument('--like', help="volume whose grid the result is sampled on")
    sub.add_argument('--out', help="output SH volume (required with --sh)")

    sub = subparsers.add_parser(
        'track', parents=[common],
        help="deterministic tractography from a seed file")
    sub.add_argument('--seeds', required=True, help="seed points, one 'x y z' row each (mm)")
    sub.add_argument('--out', required=True, help="output .tck file")
    sub.add_argument('--sh', help="track a trilinearly interpolated SH volume")
    sub.add_argument('--checkpoint', help="track a FENRI field from this checkpoint ...")
    sub.add_argument('--dwi', help="... decoded from this DWI")
    sub.add_argument('--voxel-size', type=float, dest='voxel_size',
                     help="voxel size (mm) the default step and lengths scale with")

    sub = subparsers.add_parser(
        'score', parents=[common],
        help="score SH volumes (--pred/--target) or tractograms (--tck/--mask)")
    sub.add_argument('--pred', help="predicted SH volume")
    sub.add_argument('--target', help="ground-truth SH volume")
    sub.add_argument('--mask', action='append',
                     help="evaluation mask for --pred, or one bundle mask per --tck")
    sub.add_argument('--tck', action='append', help="tractogram to score (repeatable)")
    sub.add_argument('--checkpoint', help="take WMSE degree scales from this checkpoint")
    sub.add_argument('--maps', action='store_true',
                     help="also write per-voxel MSJSD and WAAE maps")
    sub.add_argument('--out', help="report directory (default: run.output)")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    handlers = [logging.StreamHandler()]
    if args.logfile:
        logfile = os.path.expanduser(os.path.expandvars(args.logfile))
        handlers.append(logging.FileHandler(logfile))

    logging.basicConfig(
        format="%(asctime)s %(levelname)-5s (%(threadName)s) [%(name)s] %(message)s",
        datefmt='%Y-%m-%d %H:%M:%S',
        level=None if not args.verbose else logging.DEBUG,
        handlers=handlers)


def _run(config: Config, args: argparse.Namespace) -> List[str]:
    command = args.command
    if command == 'simulate':
        return commands.cmd_simulate(config)
    if command == 'degrade':
        return commands.cmd_degrade(config, args.run)
    if command == 'train':
        return commands.cmd_train(config, args.run)
    if command == 'predict':
        return commands.cmd_predict(config, args.checkpoint, args.dwi, args.like, args.out,
                                    args.run)
    if command == 'upsample':
        return commands.cmd_upsample(config, args.sh, args.like, args.out, args.run)
    if command == 'track':
        return commands.cmd_track(config, args.seeds, args.out, args.checkpoint, args.dwi,
                                  args.sh, args.voxel_size)

    output_dir = args.out or config.run.output
    if args.pred or args.target:
        if not (args.pred and args.target):
            raise ConfigError("score needs both --pred and --target")
        if args.mask and len(args.mask) > 1:
            raise ConfigError("score --pred takes at most one --mask")
        report, written = commands.cmd_score_odf(
            config, args.pred, args.target, output_dir,
            mask=args.mask[0] if args.mask else None, checkpoint=args.checkpoint,
            maps=args.maps)
        print(report.as_text())
        return written
    if not args.tck or len(args.tck) != len(args.mask or []):
        raise ConfigError("score needs --pred/--target, or one --mask per --tck")
    reports, written = commands.cmd_score_tracts(config, list(zip(args.tck, args.mask)),
                                                 output_dir)
    for report in reports:
        print(report.as_text())
    return written


def main(argv: Optional[List[str]] = None) -> int:
    """
    Runs one pipeline stage and returns its exit code.
    """

    # Display application header
    print("{} v{} - {}\n".format(
        PROJECT_NAME, PROJECT_VERSION, PROJECT_DESCRIPTION))

    # Parse command line arguments
    args = _build_parser().parse_args(argv)
    _configure_logging(args)

    # Load the configuration file, or create default if none exists
    try:
        config = Config.load(args.configfile, _parse_overrides(args))
    except ConfigError as ex:
        _LOGGER.error("%s", ex)
        return EX_USAGE
    if config.is_default:
        print("\nA default configuration file has been created:\n{}\n\n"
              "Please edit any settings as needed then restart."
              .format(os.path.abspath(args.configfile)))
        return EX_USAGE

    # Apply the config settings to logger system
    logger.apply(config.logger, args.verbose)
    torch.set_num_threads(config.run.threads)
    _LOGGER.debug("Running '%s' with %s", args.command, config)

    try:
        written = _run(config, args)
    except ConfigError as ex:
        _LOGGER.error("%s", ex)
        return EX_USAGE
    except NumericFailureError as ex:
        _LOGGER.error("Numeric failure: %s", ex)
        return EX_NUMERIC
    except (FenriError, OSError) as ex:
        _LOGGER.error("%s", ex)
        return EX_DATAERR
    except Exception:  # pylint: disable=broad-except
        _LOGGER.exception("Exiting due to unhandled exception")
        return EX_SOFTWARE

    for path in written:
        _LOGGER.debug("Wrote %s", path)
    _LOGGER.info("%s finished; %d file(s) written", args.command, len(written))
    return EX_OK


if __name__ == "__main__":
    sys.exit(main())
