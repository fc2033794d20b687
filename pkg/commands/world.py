"""Implementation of the world command."""

from json import JSONDecodeError
from pathlib import Path

from monolocapi.simulator import PRESETS, create_world_from_json, save_world_map, world_preset
from monolocapi.utils import DataNotAsExpected, load_json


def load_world(name: str, seed: int = 0, density=None):
    """A world preset by name, or a world from a JSON file."""
    if name in PRESETS:
        return world_preset(name, seed, density)
    world = create_world_from_json(load_json(name), seed)
    if density is not None:
        world.density = density
    return world


def handle_world(args):
    """Writes the map of a synthetic world without simulating a drive."""
    try:
        world = load_world(args.world, args.seed, args.density)
    except (JSONDecodeError, OSError, DataNotAsExpected) as e:
        print(f"Could not read world {args.world}: {e}")
        return 1
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_world_map(world, args.out, args.tile_size)
    print(f"Map of the {world.kind} world written to {args.out}.")
    return 0
