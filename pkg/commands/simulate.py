"""Implementation of the simulate command."""

from json import JSONDecodeError
from pathlib import Path

from monolocapi.dataset import write_dataset
from monolocapi.simulator import (
    STREET,
    SensorNoise,
    create_trajectory_spec_from_json,
    save_world_map,
    simulate,
    trajectory_preset
)
from monolocapi.utils import ActionUnsuccessful, DataNotAsExpected, append_ending, load_json
from commands.world import load_world


def handle_simulate(args):
    """Simulates a drive through a synthetic world and writes the dataset.

    The world is a preset name or a world file. Without --traj the preset trajectory of the
    world kind is driven. The map of the world is written next to the dataset unless
    --no-map is given.

    Parameters:
    - args: Namespace with world, traj, seed, density, mems, no_map and out.

    Returns:
    The process exit code.
    """
    try:
        world = load_world(args.world, args.seed, args.density)
    except (JSONDecodeError, OSError, DataNotAsExpected) as e:
        print(f"Could not read world {args.world}: {e}")
        return 1

    noise = SensorNoise.mems() if args.mems else None
    if args.traj:
        filename = append_ending(args.traj, ".json")
        try:
            traj = create_trajectory_spec_from_json(load_json(filename))
        except JSONDecodeError as e:
            print(f"Could not read trajectory file {filename}.")
            print(e)
            return 1
        except FileNotFoundError:
            print(f"File {filename} not found.")
            return 1
        except DataNotAsExpected as e:
            print(e)
            return 1
        if noise is not None:
            traj.noise = noise
    else:
        traj = trajectory_preset(world.kind, noise)

    try:
        dataset = simulate(world, traj, args.seed)
        write_dataset(dataset, args.out)
    except (DataNotAsExpected, ActionUnsuccessful) as e:
        print(e)
        return 1
    start, end = dataset.time_span()
    print(f"Simulated {end - start:.1f} s: {len(dataset.imu)} IMU samples, {len(dataset.odo)} odometer samples, "
          f"{len(dataset.frames)} frames. Dataset written to {args.out}.")

    if not args.no_map:
        map_path = str(Path(args.out) / ("map" if world.kind == STREET else "map.pts"))
        save_world_map(world, map_path)
        print(f"Map written to {map_path}.")
    return 0
