"""Main Command Line Interface."""

import argparse
import logging
import sys
from argparse import RawTextHelpFormatter

from commands.build_index import handle_build_index
from commands.compare import handle_compare
from commands.create_config import handle_create_config
from commands.import_xyz import handle_import_xyz
from commands.metrics import handle_metrics
from commands.run import handle_run
from commands.simulate import handle_simulate
from commands.world import handle_world

__version__ = "0.1.0"

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"

description = """
Monocular map-based localization CLI

Turns monocular depth frames into point clouds, registers them against a prior 3-D map
with Generalized-ICP and fuses the corrections with IMU and odometer data in an error-state
Kalman filter.

A typical round trip on synthetic data:

  monoloc simulate --world garage --mems --out garage_run
  monoloc run --dataset garage_run --map garage_run/map.pts --mode indoor --out result
  monoloc run --dataset garage_run --disable-vmr --mode indoor --out baseline
  monoloc compare --baseline baseline/metrics.json --proposed result/metrics.json

The street preset writes a tiled map directory instead of a single point file; use
--mode outdoor for it. External maps in ASCII 'x y z' format are converted with
import_xyz and tiled with build_index.

Settings are read from an .ini file given with --config or named by the MONOLOC_CONFIG
environment variable. create_config writes a file with every default value.

Have fun!
"""

run_description = """
Runs a navigation session over a dataset directory.

One posterior pose per epoch is written to trajectory.csv together with the 15 marginal
standard deviations of the error state. metrics.json holds the error statistics against
gt.csv (when present), the mean point counts of the registrations and a summary of the
accepted and gated updates. events.log lists every registration decision.

Ablations:
  --disable-vmr   inertial and odometer fusion only
  --disable-odo   no odometer speed updates
  --vanilla-vmr   registration without transient masking, cropping, scale correction,
                  outlier removal, aggregation and noise tuning

Exit code 0 on success, 2 if an epoch failed unrecoverably.
"""


def add_world_arguments(parser):
    parser.add_argument("-w", "--world", default="garage",
                        help="World preset (garage|street) or a world JSON file.")
    parser.add_argument("-s", "--seed", type=int, default=0, help="Random seed.")
    parser.add_argument("--density", type=float,
                        help="Map sampling density in points per square meter. Preset default if omitted.")


def build_parser() -> argparse.ArgumentParser:
    """Builds the parser; the logging options are accepted before and after the sub-command."""
    logging_options = argparse.ArgumentParser(add_help=False)
    logging_options.add_argument("--log-level", default=argparse.SUPPRESS,
                                 choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Console log level.")
    logging_options.add_argument("-V", "--verbose", action="store_true", default=argparse.SUPPRESS,
                                 help="Shorthand for --log-level INFO.")

    parser = argparse.ArgumentParser(description=description, prog="monoloc", formatter_class=RawTextHelpFormatter,
                                     parents=[logging_options])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(required=True, help='Available sub-commands:')

    # Simulate
    parser_simulate = subparsers.add_parser('simulate', help='Simulate a drive through a synthetic world.',
                                            description='Generate IMU, odometer, depth frames and ground truth '
                                            'for a drive through a synthetic world.',
                                            parents=[logging_options])
    add_world_arguments(parser_simulate)
    parser_simulate.add_argument("-t", "--traj",
                                 help="Trajectory JSON file. '.json' is automatically appended. "
                                 "The preset path of the world is used if omitted.")
    parser_simulate.add_argument("--mems", action="store_true", help="Apply MEMS-grade sensor noise.")
    parser_simulate.add_argument("--no-map", action="store_true", help="Do not write the world map.")
    parser_simulate.add_argument("-o", "--out", required=True, help="Output dataset directory.")
    parser_simulate.set_defaults(func=handle_simulate)

    # World map only
    parser_world = subparsers.add_parser('world', help='Write the map of a synthetic world.', parents=[logging_options])
    add_world_arguments(parser_world)
    parser_world.add_argument("--tile-size", type=float, default=50.0, help="Tile size for tiled maps in meters.")
    parser_world.add_argument("-o", "--out", required=True,
                              help="Point file (garage) or tile store directory (street).")
    parser_world.set_defaults(func=handle_world)

    # Run
    parser_run = subparsers.add_parser('run', help='Run a navigation session.', description=run_description,
                                       formatter_class=RawTextHelpFormatter, parents=[logging_options])
    parser_run.add_argument("-d", "--dataset", required=True, help="Dataset directory.")
    parser_run.add_argument("-m", "--map", help="Indoor point file or outdoor tile store directory.")
    parser_run.add_argument("-c", "--config", help="Configuration file. '.ini' is automatically appended.")
    parser_run.add_argument("--mode", choices=["indoor", "outdoor"], default="indoor", help="Registration flow.")
    parser_run.add_argument("-o", "--out", required=True, help="Output directory.")
    parser_run.add_argument("--disable-vmr", action="store_true", help="Do not register frames against the map.")
    parser_run.add_argument("--disable-odo", action="store_true", help="Do not use odometer speed.")
    parser_run.add_argument("--vanilla-vmr", action="store_true", help="Register without the refinements.")
    parser_run.set_defaults(func=handle_run)

    # Metrics
    parser_metrics = subparsers.add_parser('metrics', help='Compute trajectory error statistics.',
                                           parents=[logging_options])
    parser_metrics.add_argument("-e", "--est", required=True, help="Estimated trajectory CSV.")
    parser_metrics.add_argument("-g", "--gt", required=True, help="Ground truth CSV.")
    parser_metrics.add_argument("--window", type=float, default=0.05,
                                help="Time alignment window in seconds.")
    parser_metrics.add_argument("--output", help="Save the metrics to this JSON file.")
    parser_metrics.set_defaults(func=handle_metrics)

    # Compare
    parser_compare = subparsers.add_parser('compare', help='Percentage improvement of one run over another.',
                                           parents=[logging_options])
    parser_compare.add_argument("-b", "--baseline", required=True, help="Baseline metrics JSON.")
    parser_compare.add_argument("-p", "--proposed", required=True, help="Proposed metrics JSON.")
    parser_compare.set_defaults(func=handle_compare)

    # Map ingestion
    parser_import = subparsers.add_parser('import_xyz', help="Convert an ASCII 'x y z' map to a point file.",
                                          parents=[logging_options])
    parser_import.add_argument("-i", "--input", required=True, help="ASCII file, one 'x y z' per line.")
    parser_import.add_argument("-o", "--output", required=True,
                               help="Point file. '.pts' is automatically appended.")
    parser_import.set_defaults(func=handle_import_xyz)

    parser_index = subparsers.add_parser('build_index', help='Tile point files and write index.json.',
                                         parents=[logging_options])
    parser_index.add_argument("-i", "--input", required=True, help="Directory of .pts, .xyz or .txt files.")
    parser_index.add_argument("--tile-size", type=float, default=50.0, help="Tile size in meters.")
    parser_index.add_argument("-o", "--out", help="Tile store directory. Defaults to the input directory.")
    parser_index.set_defaults(func=handle_build_index)

    # Configuration template
    parser_config = subparsers.add_parser('create_config', help='Write a configuration file with the defaults.',
                                          parents=[logging_options])
    parser_config.add_argument("-f", "--file", default="monoloc.ini",
                               help="Output file. '.ini' is automatically appended.")
    parser_config.add_argument("--mode", choices=["indoor", "outdoor"], default="indoor",
                               help="Mode whose crop defaults are written.")
    parser_config.set_defaults(func=handle_create_config)
    return parser


def console_level(args) -> int:
    """The console log level from --log-level, else INFO for --verbose, else WARNING."""
    if hasattr(args, "log_level"):
        return getattr(logging, args.log_level)
    return logging.INFO if getattr(args, "verbose", False) else logging.WARNING


def main():
    """Main function to handle the command line interface."""
    parser = build_parser()
    if len(sys.argv) == 1:
        parser.print_help(sys.stderr)
        sys.exit(1)

    args = parser.parse_args()
    level = console_level(args)
    console = logging.StreamHandler()
    console.setLevel(level)
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(console)
    logging.getLogger().setLevel(level)
    sys.exit(args.func(args) or 0)


if __name__ == "__main__":
    main()
