"""Prior 3-D maps: a tile store for outdoor maps and the split indoor map.

Tile store layout on disk:

    <root>/index.json
    <root>/tiles/tile_<ix>_<iy>.pts

index.json: {"tile_size": meters, "tiles": [{"id": [ix, iy], "file": "tiles/...", "count": n}]}.
Point files are little-endian float32 (x, y, z) triples in the local-level frame.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .datastructures import LOCAL_FRAME, PointCloud, SplitConfig
from .utils import (
    DataNotAsExpected,
    EmptyRoi,
    EmptyStore,
    NoGroundPlane,
    complainIfKeysAreNotInDict,
    complainIfNotAList,
    load_json,
    read_points,
    read_xyz,
    save_json,
    write_points
)

logger = logging.getLogger(__name__)

INDEX_FILE = "index.json"
TILES_DIR = "tiles"
POINT_SUFFIX = ".pts"


@dataclass(frozen=True)
class TileEntry:
    """Reference from the index to one tile file."""
    file: str
    count: int


@dataclass(frozen=True, eq=False)
class Tile:
    """One square tile of the map."""
    tile_id: Tuple[int, int]
    bounds: Tuple[float, float, float, float]  # (x_min, y_min, x_max, y_max)
    points: PointCloud


@dataclass(eq=False)
class TileIndex:
    """Spatial index of a tile store. Immutable after build; loaded tiles are cached."""
    tile_size: float
    entries: Dict[Tuple[int, int], TileEntry]
    root: Path
    _cache: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.tile_size > 0:
            raise DataNotAsExpected(f"Tile size must be positive, got {self.tile_size}")

    def bounds(self) -> Tuple[float, float, float, float]:
        """Bounding rectangle of all tiles."""
        ids = np.array(sorted(self.entries))
        return (float(ids[:, 0].min() * self.tile_size), float(ids[:, 1].min() * self.tile_size),
                float((ids[:, 0].max() + 1) * self.tile_size), float((ids[:, 1].max() + 1) * self.tile_size))

    def tile_points(self, tile_id: Tuple[int, int]) -> np.ndarray:
        if tile_id not in self._cache:
            self._cache[tile_id] = read_points(str(self.root / self.entries[tile_id].file))
        return self._cache[tile_id]

    def load_tile(self, tile_id: Tuple[int, int]) -> Tile:
        ix, iy = tile_id
        s = self.tile_size
        return Tile(tile_id, (ix * s, iy * s, (ix + 1) * s, (iy + 1) * s),
                    PointCloud(self.tile_points(tile_id), LOCAL_FRAME))


@dataclass(eq=False)
class IndoorMap:
    """Indoor map with its ground / surround partition.

    The *_target fields hold registration-ready copies (downsampled, with covariances)
    once registration.prepare_indoor_map has run.
    """
    ground: PointCloud
    surround: PointCloud
    full: PointCloud
    ground_target: Optional[PointCloud] = None
    surround_target: Optional[PointCloud] = None


def tile_ids_of(points: np.ndarray, tile_size: float) -> np.ndarray:
    """(N, 2) integer tile indices floor(x / size), floor(y / size)."""
    return np.floor(points[:, :2] / tile_size).astype(np.int64)


def write_tile_store(points: np.ndarray, tile_size: float, out_dir: str) -> TileIndex:
    """Splits points into tiles and writes the tile files and index.json.

    Raises:
    - EmptyStore: If there are no points.
    """
    if not tile_size > 0:
        raise DataNotAsExpected(f"Tile size must be positive, got {tile_size}")
    if len(points) == 0:
        raise EmptyStore("No map points to store.")
    # tiles are assigned on the stored float32 values so that reloaded points stay in bounds
    stored = np.asarray(points, dtype='<f4').astype(np.float64).reshape(-1, 3)
    ids = tile_ids_of(stored, tile_size)
    root = Path(out_dir)
    (root / TILES_DIR).mkdir(parents=True, exist_ok=True)

    unique_ids, inverse = np.unique(ids, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    entries = {}
    for n, (ix, iy) in enumerate(unique_ids):
        tile_points = stored[inverse == n]
        relative = f"{TILES_DIR}/tile_{ix}_{iy}{POINT_SUFFIX}"
        write_points(str(root / relative), tile_points)
        entries[(int(ix), int(iy))] = TileEntry(relative, len(tile_points))

    save_json({
        "tile_size": tile_size,
        "tiles": [{"id": list(tile_id), "file": e.file, "count": e.count} for tile_id, e in sorted(entries.items())],
    }, str(root / INDEX_FILE))
    logger.info("Wrote %d tiles with %d points to %s.", len(entries), len(stored), root)
    return TileIndex(tile_size, entries, root)


def read_point_file(path: Path) -> np.ndarray:
    """Reads a binary .pts file or an ASCII .xyz / .txt file."""
    if path.suffix == POINT_SUFFIX:
        return read_points(str(path))
    return read_xyz(str(path))


def build_index(tiles_dir: str, tile_size: float = 50.0, out_dir: Optional[str] = None) -> TileIndex:
    """Ingests every point file of a directory into a tile store.

    Parameters:
    - tiles_dir: Directory with .pts (binary) or .xyz (ASCII) files in the local-level frame.
    - tile_size: Tile edge length in meters.
    - out_dir: Where to write the store. Defaults to tiles_dir.

    Raises:
    - OSError: If the directory cannot be read.
    - EmptyStore: If no points were found.
    """
    source = Path(tiles_dir)
    if not source.is_dir():
        raise FileNotFoundError(f"Directory {tiles_dir} not found.")
    files = sorted(p for p in source.iterdir()
                   if p.is_file() and p.suffix in (POINT_SUFFIX, ".xyz", ".txt"))
    clouds = [read_point_file(p) for p in files]
    clouds = [c for c in clouds if len(c)]
    if not clouds:
        raise EmptyStore(f"No points found in {tiles_dir}.")
    return write_tile_store(np.vstack(clouds), tile_size, out_dir or tiles_dir)


def load_index(store_dir: str) -> TileIndex:
    """Loads the index.json of a tile store."""
    root = Path(store_dir)
    data = load_json(str(root / INDEX_FILE))
    complainIfKeysAreNotInDict(data, ["tile_size", "tiles"])
    complainIfNotAList(data["tiles"])
    entries = {}
    for item in data["tiles"]:
        complainIfKeysAreNotInDict(item, ["id", "file", "count"])
        complainIfNotAList(item["id"], 2)
        tile_id = (int(item["id"][0]), int(item["id"][1]))
        if tile_id in entries:
            raise DataNotAsExpected(f"Tile {tile_id} appears twice in the index.")
        entries[tile_id] = TileEntry(item["file"], int(item["count"]))
    if not entries:
        raise EmptyStore(f"Tile store {store_dir} has no tiles.")
    return TileIndex(float(data["tile_size"]), entries, root)


def query_roi(index: TileIndex, center, extent: float = 100.0) -> PointCloud:
    """Map points inside the square [center ± extent/2]^2.

    Raises:
    - EmptyRoi: If no stored point lies in the square.
    """
    if not extent > 0:
        raise DataNotAsExpected(f"ROI extent must be positive, got {extent}")
    cx, cy = float(center[0]), float(center[1])
    half = extent / 2.0
    s = index.tile_size
    ix_range = range(math.floor((cx - half) / s), math.floor((cx + half) / s) + 1)
    iy_range = range(math.floor((cy - half) / s), math.floor((cy + half) / s) + 1)
    hits = [(ix, iy) for ix in ix_range for iy in iy_range if (ix, iy) in index.entries]
    if not hits:
        raise EmptyRoi(f"No map tile intersects the ROI around ({cx:.1f}, {cy:.1f}).")

    points = np.vstack([index.tile_points(tile_id) for tile_id in hits])
    inside = (np.abs(points[:, 0] - cx) <= half) & (np.abs(points[:, 1] - cy) <= half)
    if not inside.any():
        raise EmptyRoi(f"The ROI around ({cx:.1f}, {cy:.1f}) holds no map points.")
    return PointCloud(points[inside], LOCAL_FRAME)


# ------------------ Ground / surround splitting ------------------

@dataclass(frozen=True)
class GroundPlane:
    """Plane n·p + d = 0 with n pointing up."""
    normal: Tuple[float, float, float]
    offset: float
    inlier_ratio: float


def fit_ground_plane(points: np.ndarray, cfg: SplitConfig) -> GroundPlane:
    """RANSAC fit of the dominant near-horizontal plane.

    Points are visited in lexicographic order, so the result does not depend on input order.

    Raises:
    - NoGroundPlane: If no admissible plane reaches cfg.min_inlier_ratio.
    """
    n = len(points)
    if n < 3:
        raise NoGroundPlane(f"Cannot fit a plane to {n} points.")
    ordered = points[np.lexsort((points[:, 2], points[:, 1], points[:, 0]))]
    cos_limit = math.cos(math.radians(cfg.max_normal_angle_deg))
    rng = np.random.default_rng(cfg.seed)

    best_count = 0
    best_normal, best_offset = None, 0.0
    for _ in range(cfg.iterations):
        p0, p1, p2 = ordered[rng.choice(n, 3, replace=False)]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-9:
            continue
        normal = normal / norm
        if normal[2] < 0:
            normal = -normal
        if normal[2] < cos_limit:
            continue
        offset = -normal @ p0
        count = int(np.count_nonzero(np.abs(ordered @ normal + offset) <= cfg.inlier_distance))
        if count > best_count:
            best_count, best_normal, best_offset = count, normal, offset

    if best_normal is None or best_count / n < cfg.min_inlier_ratio:
        raise NoGroundPlane(f"Best ground plane holds {best_count} of {n} points.")

    # least-squares refinement on the inliers
    inliers = ordered[np.abs(ordered @ best_normal + best_offset) <= cfg.inlier_distance]
    centroid = inliers.mean(axis=0)
    _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
    refined = vt[-1] if vt[-1][2] >= 0 else -vt[-1]
    if refined[2] >= cos_limit:
        best_normal, best_offset = refined, -refined @ centroid
        best_count = int(np.count_nonzero(np.abs(ordered @ best_normal + best_offset) <= cfg.inlier_distance))

    return GroundPlane(tuple(float(v) for v in best_normal), float(best_offset), best_count / n)


def split_points(points: np.ndarray, cfg: SplitConfig) -> Tuple[np.ndarray, np.ndarray, GroundPlane]:
    """Boolean masks (ground, surround) over the input points.

    Ground: within cfg.inlier_distance of the plane. Surround: the rest, without points higher
    than cfg.ceiling_height above the plane.
    """
    plane = fit_ground_plane(points, cfg)
    height = points @ np.asarray(plane.normal) + plane.offset
    ground = np.abs(height) <= cfg.inlier_distance
    surround = ~ground & (height <= cfg.ceiling_height)
    return ground, surround, plane


def split_indoor(map_cloud: PointCloud, cfg: Optional[SplitConfig] = None) -> IndoorMap:
    """Partitions an indoor map into ground and surround.

    Raises:
    - DataNotAsExpected: If the map is not in the local-level frame.
    - NoGroundPlane: See fit_ground_plane.
    """
    cfg = cfg or SplitConfig()
    if map_cloud.frame != LOCAL_FRAME:
        raise DataNotAsExpected(f"Indoor map must be in the local-level frame, got '{map_cloud.frame}'.")
    if len(map_cloud) == 0:
        raise DataNotAsExpected("Indoor map is empty.")
    ground, surround, plane = split_points(map_cloud.points, cfg)
    logger.info("Indoor map split: %d ground, %d surround of %d points (plane normal %s).",
                int(ground.sum()), int(surround.sum()), len(map_cloud), np.round(plane.normal, 4))
    return IndoorMap(ground=PointCloud(map_cloud.points[ground], LOCAL_FRAME),
                     surround=PointCloud(map_cloud.points[surround], LOCAL_FRAME),
                     full=map_cloud)


def split_cache_stamp_path(map_file: str) -> Path:
    return Path(f"{Path(map_file).with_suffix('')}.split.json")


def split_cache_stamp(map_file: str, cfg: SplitConfig) -> dict:
    """What a cached split was computed from: the split parameters and the map file size and mtime."""
    stat = Path(map_file).stat()
    return {"split": asdict(cfg), "map_size": stat.st_size, "map_mtime_ns": stat.st_mtime_ns}


def _cached_split_is_current(map_file: str, cfg: SplitConfig) -> bool:
    ground_file, surround_file = split_cache_paths(map_file)
    stamp_file = split_cache_stamp_path(map_file)
    if not (ground_file.is_file() and surround_file.is_file() and stamp_file.is_file()):
        return False
    try:
        return load_json(str(stamp_file)) == split_cache_stamp(map_file, cfg)
    except ValueError:
        return False


def split_cache_paths(map_file: str) -> Tuple[Path, Path]:
    path = Path(map_file)
    stem = path.with_suffix("")
    return Path(f"{stem}.ground{POINT_SUFFIX}"), Path(f"{stem}.surround{POINT_SUFFIX}")


def load_indoor_map(map_file: str, cfg: Optional[SplitConfig] = None, use_cache: bool = True) -> IndoorMap:
    """Loads an indoor map point file and its ground / surround split.

    A cached split (<stem>.ground.pts and <stem>.surround.pts) is used when <stem>.split.json
    matches the split parameters and the current map file; otherwise the split is recomputed
    and the cache rewritten.
    """
    cfg = cfg or SplitConfig()
    full = PointCloud(read_point_file(Path(map_file)), LOCAL_FRAME)
    ground_file, surround_file = split_cache_paths(map_file)
    if use_cache and _cached_split_is_current(map_file, cfg):
        logger.info("Using cached split %s / %s.", ground_file, surround_file)
        return IndoorMap(ground=PointCloud(read_points(str(ground_file)), LOCAL_FRAME),
                         surround=PointCloud(read_points(str(surround_file)), LOCAL_FRAME),
                         full=full)
    indoor = split_indoor(full, cfg)
    if use_cache:
        write_points(str(ground_file), indoor.ground.points)
        write_points(str(surround_file), indoor.surround.points)
        save_json(split_cache_stamp(map_file, cfg), str(split_cache_stamp_path(map_file)))
    return indoor


def import_xyz(xyz_file: str, out_file: str) -> int:
    """Converts an ASCII 'x y z' file into a binary point file. Returns the point count."""
    points = read_xyz(xyz_file)
    write_points(out_file, points)
    return len(points)


def list_tiles(index: TileIndex) -> List[Tuple[int, int]]:
    return sorted(index.entries)
