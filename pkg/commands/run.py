"""Implementation of the run command."""

from monolocapi.metrics import format_metrics
from monolocapi.session import run_session
from monolocapi.utils import ActionUnsuccessful, ConfigError, DataNotAsExpected, config_file_from_environment


def handle_run(args):
    """Runs a navigation session over a dataset.

    The configuration comes from --config, else from the file named by MONOLOC_CONFIG, else
    the defaults are used. trajectory.csv, metrics.json and events.log are written to --out.

    Parameters:
    - args: Namespace with dataset, map, config, mode, out, disable_vmr, disable_odo and vanilla_vmr.

    Returns:
    0 on success, 2 if an epoch failed unrecoverably, 1 if the session could not start.
    """
    config_file = config_file_from_environment(args.config)
    try:
        outcome = run_session(args.dataset, args.map, config_file, args.mode, args.out,
                              disable_vmr=args.disable_vmr, disable_odo=args.disable_odo,
                              vanilla=args.vanilla_vmr)
    except ConfigError as e:
        print(f"Configuration error: {e}")
        return 1
    except FileNotFoundError as e:
        print(f"File not found: {e.filename}")
        return 1
    except (OSError, DataNotAsExpected, ActionUnsuccessful) as e:
        print(e)
        return 1

    summary = outcome.summary()
    print(f"{summary['epochs']} epochs, {summary['pose_updates']} pose updates "
          f"({summary['pose_gated']} gated), {summary['speed_updates']} speed updates.")
    if outcome.metrics is not None:
        print(format_metrics(outcome.metrics))
    if outcome.exit_code:
        print(f"{outcome.failed_epochs} epochs failed. See {args.out}/events.log.")
    return outcome.exit_code
