"""Implementation of the compare command."""

from json import JSONDecodeError

from monolocapi.metrics import compare_metrics, create_metrics_from_json
from monolocapi.utils import DataNotAsExpected, load_json


def _load_metrics(filename: str):
    item = load_json(filename)
    # metrics.json of a run nests the metrics
    if isinstance(item, dict) and "metrics" in item:
        item = item["metrics"]
    if item is None:
        raise DataNotAsExpected(f"{filename} holds no metrics.")
    return create_metrics_from_json(item)


def handle_compare(args):
    """Prints the percentage improvement of a proposed run over a baseline run."""
    try:
        baseline = _load_metrics(args.baseline)
        proposed = _load_metrics(args.proposed)
    except JSONDecodeError as e:
        print("Could not read metrics file.")
        print(e)
        return 1
    except FileNotFoundError as e:
        print(f"File {e.filename} not found.")
        return 1
    except DataNotAsExpected as e:
        print(e)
        return 1

    for key, value in compare_metrics(baseline, proposed).items():
        text = "n/a" if value is None else f"{value:+.1f} %"
        print(f"{key:18}{text:>10}")
    return 0
