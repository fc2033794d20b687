"""Implementation of the metrics command."""

from monolocapi.metrics import compute_metrics, format_metrics, metrics_to_json, read_trajectory
from monolocapi.utils import ActionUnsuccessful, DataNotAsExpected, append_ending, save_json


def handle_metrics(args):
    """Compares an estimated trajectory with ground truth and prints the error table."""
    try:
        estimated = read_trajectory(args.est)
        truth = read_trajectory(args.gt)
    except FileNotFoundError as e:
        print(f"File {e.filename} not found.")
        return 1
    except (OSError, ValueError, DataNotAsExpected) as e:
        print(f"Could not read trajectory: {e}")
        return 1

    try:
        metrics = compute_metrics(estimated, truth, args.window)
    except ActionUnsuccessful as e:
        print(e)
        return 1
    print(format_metrics(metrics))
    if args.output:
        filename = append_ending(args.output, ".json")
        save_json(metrics_to_json(metrics), filename)
        print(f"Metrics saved to {filename}.")
    return 0
