import json
import logging
from argparse import Namespace

import numpy as np
import pytest

from commands.build_index import handle_build_index
from commands.compare import handle_compare
from commands.create_config import handle_create_config
from commands.import_xyz import handle_import_xyz
from commands.metrics import handle_metrics
from commands.run import handle_run
from commands.simulate import handle_simulate
from commands.world import handle_world
from monoloc import build_parser, console_level
from monolocapi.datastructures import OUTDOOR, PoseSeries
from monolocapi.mapstore import load_index
from monolocapi.metrics import write_trajectory
from monolocapi.session import load_session_config
from monolocapi.utils import read_points


def test_create_config(tmp_path, capsys):
    assert handle_create_config(Namespace(file=str(tmp_path / "outdoor"), mode=OUTDOOR)) == 0
    assert "outdoor.ini" in capsys.readouterr().out
    assert load_session_config(str(tmp_path / "outdoor.ini"), OUTDOOR).cloudgen.d_max == 30.0


def test_run_uses_the_environment_config(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MONOLOC_CONFIG", str(tmp_path / "absent"))
    args = Namespace(dataset=str(tmp_path), map=None, config=None, mode="indoor", out=str(tmp_path / "out"),
                     disable_vmr=True, disable_odo=False, vanilla_vmr=False)
    assert handle_run(args) == 1
    assert "absent.ini" in capsys.readouterr().out


def test_run_without_dataset(tmp_path, capsys):
    args = Namespace(dataset=str(tmp_path / "nothing"), map=None, config=None, mode="indoor",
                     out=str(tmp_path / "out"), disable_vmr=True, disable_odo=False, vanilla_vmr=False)
    assert handle_run(args) == 1
    assert "not found" in capsys.readouterr().out


def test_metrics_and_compare(tmp_path, capsys):
    times = np.arange(10) / 10.0
    truth = PoseSeries(times, np.zeros((10, 3)), np.zeros((10, 3)))
    worse = PoseSeries(times, np.tile([2.0, 0.0, 0.0], (10, 1)), np.zeros((10, 3)))
    better = PoseSeries(times, np.tile([0.5, 0.0, 0.0], (10, 1)), np.zeros((10, 3)))
    for name, series in (("gt", truth), ("worse", worse), ("better", better)):
        write_trajectory(str(tmp_path / f"{name}.csv"), series)

    for name in ("worse", "better"):
        args = Namespace(est=str(tmp_path / f"{name}.csv"), gt=str(tmp_path / "gt.csv"), window=0.05,
                         output=str(tmp_path / name))
        assert handle_metrics(args) == 0
    assert json.loads((tmp_path / "better.json").read_text())["horizontal_rmse"] == 0.5

    capsys.readouterr()
    assert handle_compare(Namespace(baseline=str(tmp_path / "worse.json"),
                                    proposed=str(tmp_path / "better.json"))) == 0
    out = capsys.readouterr().out
    assert "+75.0 %" in out
    assert "n/a" in out

    assert handle_compare(Namespace(baseline=str(tmp_path / "absent.json"),
                                    proposed=str(tmp_path / "better.json"))) == 1


def test_import_and_index(tmp_path):
    source = tmp_path / "scan.xyz"
    source.write_text("0 0 0\n1 2 3\n60 1 0\n")
    assert handle_import_xyz(Namespace(input=str(source), output=str(tmp_path / "maps" / "scan"))) == 1
    (tmp_path / "maps").mkdir()
    assert handle_import_xyz(Namespace(input=str(source), output=str(tmp_path / "maps" / "scan"))) == 0
    np.testing.assert_array_equal(read_points(str(tmp_path / "maps" / "scan.pts"))[1], [1.0, 2.0, 3.0])

    assert handle_build_index(Namespace(input=str(tmp_path / "maps"), tile_size=50.0,
                                        out=str(tmp_path / "store"))) == 0
    assert sorted(load_index(str(tmp_path / "store")).entries) == [(0, 0), (1, 0)]


def test_world_and_simulate(tmp_path, capsys):
    world_file = tmp_path / "yard.json"
    world_file.write_text(json.dumps({
        "kind": "yard", "bounds": [-5, -5, 15, 5], "density": 2,
        "primitives": [
            {"type": "rectangle", "origin": [-5, -5, 0], "edge_a": [20, 0, 0], "edge_b": [0, 10, 0]},
            {"type": "box", "center": [12, 0], "size": [1, 4, 2]},
        ],
    }))
    traj_file = tmp_path / "drive.json"
    traj_file.write_text(json.dumps({"waypoints": [{"position": [0, 0, 0], "heading": 0, "speed": 1},
                                                   {"position": [2, 0, 0], "heading": 0, "speed": 1}]}))

    assert handle_world(Namespace(world=str(world_file), seed=0, density=None, tile_size=50.0,
                                  out=str(tmp_path / "yard.pts"))) == 0
    assert len(read_points(str(tmp_path / "yard.pts"))) == 400 + 2 * (2 + 2 + 8 + 8 + 4)

    args = Namespace(world=str(world_file), seed=0, density=None, traj=str(tmp_path / "drive"), mems=True,
                     no_map=False, out=str(tmp_path / "data"))
    assert handle_simulate(args) == 0
    assert (tmp_path / "data" / "map.pts").is_file()
    assert (tmp_path / "data" / "frames" / "000019.depth").is_file()
    assert "20 frames" in capsys.readouterr().out

    args.world = "moon"
    assert handle_simulate(args) == 1


@pytest.mark.parametrize("argv, level", [
    (["run", "-d", "data", "-o", "out", "--log-level", "DEBUG"], logging.DEBUG),
    (["--log-level", "ERROR", "run", "-d", "data", "-o", "out"], logging.ERROR),
    (["metrics", "-e", "est.csv", "-g", "gt.csv", "-V"], logging.INFO),
    (["-V", "compare", "-b", "a.json", "-p", "b.json"], logging.INFO),
    (["create_config"], logging.WARNING),
])
def test_logging_options_before_and_after_the_command(argv, level):
    args = build_parser().parse_args(argv)
    assert console_level(args) == level
    assert callable(args.func)
