"""Implementation of the build_index command."""

from monolocapi.mapstore import build_index
from monolocapi.utils import ActionUnsuccessful, DataNotAsExpected


def handle_build_index(args):
    """Tiles the point files of a directory and writes the tile store with its index.json."""
    try:
        index = build_index(args.input, args.tile_size, args.out)
    except (ActionUnsuccessful, DataNotAsExpected) as e:
        print(e)
        return 1
    except OSError as e:
        print(f"Could not read the point files: {e}")
        return 1
    total = sum(entry.count for entry in index.entries.values())
    print(f"Indexed {total} points in {len(index.entries)} tiles of {index.tile_size:g} m.")
    return 0
