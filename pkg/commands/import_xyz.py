"""Implementation of the import_xyz command."""

from monolocapi.mapstore import POINT_SUFFIX, import_xyz
from monolocapi.utils import DataNotAsExpected, append_ending


def handle_import_xyz(args):
    """Converts an ASCII 'x y z' map into a binary point file."""
    output = append_ending(args.output, POINT_SUFFIX)
    try:
        count = import_xyz(args.input, output)
    except FileNotFoundError as e:
        print(f"File {e.filename} not found.")
        return 1
    except (OSError, ValueError, DataNotAsExpected) as e:
        print(f"Could not import {args.input}: {e}")
        return 1
    print(f"Imported {count} points into {output}.")
    return 0
