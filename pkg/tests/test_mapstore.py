import math

import numpy as np
import pytest

from monolocapi.datastructures import LOCAL_FRAME, PointCloud, SplitConfig
from monolocapi.geom import EulerZYX, euler_to_rotation
from monolocapi.mapstore import (
    INDEX_FILE,
    build_index,
    fit_ground_plane,
    import_xyz,
    list_tiles,
    load_index,
    load_indoor_map,
    query_roi,
    split_cache_paths,
    split_cache_stamp_path,
    split_indoor,
    split_points,
    write_tile_store
)
from monolocapi.utils import DataNotAsExpected, EmptyRoi, EmptyStore, NoGroundPlane, read_points, write_points


@pytest.fixture
def street_points(rng):
    return np.column_stack([rng.uniform(-30.0, 170.0, 20000), rng.uniform(-40.0, 40.0, 20000),
                            rng.uniform(0.0, 10.0, 20000)])


def test_tiles_partition_the_points(tmp_path, street_points):
    index = write_tile_store(street_points, 50.0, str(tmp_path))
    assert (tmp_path / INDEX_FILE).is_file()
    assert sum(e.count for e in index.entries.values()) == len(street_points)
    for tile_id in list_tiles(index):
        tile = index.load_tile(tile_id)
        x_min, y_min, x_max, y_max = tile.bounds
        pts = tile.points.points
        assert np.all((pts[:, 0] >= x_min) & (pts[:, 0] < x_max))
        assert np.all((pts[:, 1] >= y_min) & (pts[:, 1] < y_max))


def test_reloaded_index_matches(tmp_path, street_points):
    written = write_tile_store(street_points, 50.0, str(tmp_path))
    loaded = load_index(str(tmp_path))
    assert loaded.tile_size == 50.0
    assert loaded.entries == written.entries
    assert loaded.bounds() == (-50.0, -50.0, 200.0, 50.0)


def test_roi_matches_brute_force_filter(tmp_path, street_points):
    index = write_tile_store(street_points, 50.0, str(tmp_path))
    stored = street_points.astype(np.float32).astype(np.float64)
    for center in ([0.0, 0.0], [72.5, -13.0], [160.0, 30.0]):
        roi = query_roi(index, center, 100.0)
        inside = (np.abs(stored[:, 0] - center[0]) <= 50.0) & (np.abs(stored[:, 1] - center[1]) <= 50.0)
        assert roi.frame == LOCAL_FRAME
        expected = stored[inside]
        order = np.lexsort(roi.points.T)
        expected_order = np.lexsort(expected.T)
        np.testing.assert_array_equal(roi.points[order], expected[expected_order])


def test_roi_far_from_the_map_is_empty(tmp_path, street_points):
    index = write_tile_store(street_points, 50.0, str(tmp_path))
    with pytest.raises(EmptyRoi):
        query_roi(index, [1000.0, 1000.0])


def test_point_on_tile_border_belongs_to_upper_tile(tmp_path):
    index = write_tile_store(np.array([[50.0, 0.0, 0.0], [49.5, 0.0, 0.0]]), 50.0, str(tmp_path))
    assert set(index.entries) == {(0, 0), (1, 0)}


def test_empty_store(tmp_path):
    with pytest.raises(EmptyStore):
        write_tile_store(np.zeros((0, 3)), 50.0, str(tmp_path))
    (tmp_path / "empty").mkdir()
    with pytest.raises(EmptyStore):
        build_index(str(tmp_path / "empty"))


def test_build_index_reads_ascii_and_binary_files(tmp_path):
    source = tmp_path / "source"
    source.mkdir()
    (source / "a.xyz").write_text("1 1 0\n2 2 0\n")
    write_points(str(source / "b.pts"), np.array([[120.0, 10.0, 1.0]]))
    (source / "notes.md").write_text("not a point file")
    index = build_index(str(source), 50.0, str(tmp_path / "store"))
    assert set(index.entries) == {(0, 0), (2, 0)}
    assert load_index(str(tmp_path / "store")).entries[(0, 0)].count == 2


def test_import_xyz(tmp_path):
    xyz = tmp_path / "map.xyz"
    xyz.write_text("0 0 0\n1 2 3\n4 5 6\n")
    assert import_xyz(str(xyz), str(tmp_path / "map.pts")) == 3
    np.testing.assert_array_equal(read_points(str(tmp_path / "map.pts"))[2], [4.0, 5.0, 6.0])


def test_duplicate_tiles_in_index_are_rejected(tmp_path):
    (tmp_path / INDEX_FILE).write_text(
        '{"tile_size": 50, "tiles": [{"id": [0, 0], "file": "a", "count": 1},'
        ' {"id": [0, 0], "file": "b", "count": 1}]}')
    with pytest.raises(DataNotAsExpected):
        load_index(str(tmp_path))


def tilted_floor(rng, angle_deg, n=3000):
    floor = np.column_stack([rng.uniform(-10, 10, n), rng.uniform(-10, 10, n), np.zeros(n)])
    return floor @ euler_to_rotation(EulerZYX(pitch=math.radians(angle_deg))).T


def test_ground_plane_tolerates_tilt(rng):
    plane = fit_ground_plane(tilted_floor(rng, 2.0), SplitConfig())
    angle = math.degrees(math.acos(plane.normal[2]))
    assert angle == pytest.approx(2.0, abs=0.01)
    assert plane.inlier_ratio == pytest.approx(1.0)


def test_steep_plane_is_not_ground(rng):
    with pytest.raises(NoGroundPlane):
        fit_ground_plane(tilted_floor(rng, 30.0), SplitConfig())
    with pytest.raises(NoGroundPlane):
        fit_ground_plane(np.zeros((2, 3)), SplitConfig())


def test_ground_plane_does_not_depend_on_point_order(rng, room_map):
    points = room_map.cloud.points
    shuffled = points[rng.permutation(len(points))]
    assert fit_ground_plane(points, SplitConfig()) == fit_ground_plane(shuffled, SplitConfig())


def test_split_recovers_labels(room_map):
    ground, surround, _ = split_points(room_map.cloud.points, SplitConfig())
    floor = room_map.labels == room_map.label_names.index("floor")
    assert np.all(ground[floor])
    # wall and pillar points only count as ground right above the floor
    assert np.all(room_map.cloud.points[ground & ~floor, 2] < 0.2)
    assert np.all(room_map.cloud.points[surround, 2] <= 2.2)
    assert not np.any(ground & surround)


def test_split_indoor_requires_local_frame(room_map):
    with pytest.raises(DataNotAsExpected):
        split_indoor(PointCloud(room_map.cloud.points, "body"))


def test_indoor_split_is_cached(tmp_path, room_map):
    map_file = str(tmp_path / "garage.pts")
    write_points(map_file, room_map.cloud.points)
    first = load_indoor_map(map_file)
    ground_file, surround_file = split_cache_paths(map_file)
    assert ground_file.name == "garage.ground.pts" and surround_file.is_file()
    second = load_indoor_map(map_file)
    np.testing.assert_array_equal(first.ground.points, second.ground.points)
    np.testing.assert_array_equal(first.surround.points, second.surround.points)


def test_indoor_split_cache_follows_split_config(tmp_path, room_map):
    map_file = str(tmp_path / "garage.pts")
    write_points(map_file, room_map.cloud.points)
    tall = load_indoor_map(map_file, SplitConfig(ceiling_height=2.2))
    low = load_indoor_map(map_file, SplitConfig(ceiling_height=1.0))
    fresh = load_indoor_map(map_file, SplitConfig(ceiling_height=1.0), use_cache=False)
    assert len(low.surround) < len(tall.surround)
    np.testing.assert_array_equal(low.surround.points, fresh.surround.points)
    assert split_cache_stamp_path(map_file).is_file()
    again = load_indoor_map(map_file, SplitConfig(ceiling_height=1.0))
    np.testing.assert_array_equal(again.surround.points, low.surround.points)


def test_indoor_split_cache_follows_map_file(tmp_path, room_map):
    map_file = str(tmp_path / "garage.pts")
    write_points(map_file, room_map.cloud.points)
    load_indoor_map(map_file)
    write_points(map_file, room_map.cloud.points[::2])
    reloaded = load_indoor_map(map_file)
    fresh = load_indoor_map(map_file, use_cache=False)
    assert len(reloaded.full) == len(room_map.cloud.points[::2])
    np.testing.assert_array_equal(reloaded.ground.points, fresh.ground.points)
    np.testing.assert_array_equal(reloaded.surround.points, fresh.surround.points)
