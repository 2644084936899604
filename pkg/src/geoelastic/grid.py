"""Regular geographic grids and the planar geometry layered on top of them.

A grid is an axis-aligned lattice of square cells covering a rectangular
patch of the Earth, anchored at its south-west corner.  Geographic
coordinates are flattened with an equirectangular projection about the
grid's central latitude; for city-scale regions the distortion is a
fraction of a percent, which is far below the cell size.  Cells are indexed
row-major from the south-west corner: ``index = row * nx + col``.

All distances are meters.  All balls are closed (boundary included).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Final, Iterator

import numpy as np

from .fileio import atomic_write_text

EARTH_RADIUS_M: Final = 6_371_000.0

#: Cells are addressed by a plain integer index, row-major from the SW corner.
CellId = int


# ---------------------------------------------------------------------------
# grid specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a grid: anchor coordinates, cell size, and extent.

    Attributes:
        origin_lat: Latitude of the south-west corner, decimal degrees.
        origin_lon: Longitude of the south-west corner, decimal degrees.
        cell_size_m: Side length of each square cell in meters.
        nx: Number of columns (west to east).
        ny: Number of rows (south to north).
    """

    origin_lat: float
    origin_lon: float
    cell_size_m: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if not -90.0 <= self.origin_lat <= 90.0:
            raise ValueError(f"origin_lat {self.origin_lat} outside [-90, 90]")
        if not -180.0 <= self.origin_lon <= 180.0:
            raise ValueError(f"origin_lon {self.origin_lon} outside [-180, 180]")
        if not self.cell_size_m > 0:
            raise ValueError(f"cell_size_m must be positive, got {self.cell_size_m}")
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid extent must be at least 1x1, got {self.nx}x{self.ny}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def center_lat(self) -> float:
        """Latitude of the grid's center, about which the projection is taken."""
        half_north = 0.5 * self.ny * self.cell_size_m
        return self.origin_lat + math.degrees(half_north / EARTH_RADIUS_M)

    def cell_index(self, col: int, row: int) -> CellId:
        if not (0 <= col < self.nx and 0 <= row < self.ny):
            raise ValueError(f"cell ({col}, {row}) outside {self.nx}x{self.ny} grid")
        return row * self.nx + col

    def cell_colrow(self, cell: CellId) -> tuple[int, int]:
        self.validate_cell(cell)
        return cell % self.nx, cell // self.nx

    def validate_cell(self, cell: CellId) -> None:
        if not 0 <= cell < self.n_cells:
            raise ValueError(f"cell index {cell} outside [0, {self.n_cells})")

    def iter_cells(self) -> Iterator[CellId]:
        return iter(range(self.n_cells))


@dataclass(frozen=True)
class PlanarPoint:
    """A point in the grid's local planar frame, meters east/north of origin."""

    east: float
    north: float


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def project(spec: GridSpec, lat: float, lon: float) -> PlanarPoint:
    """Project geographic coordinates onto the grid's planar frame.

    Equirectangular about the grid's central latitude: east distances are
    scaled by cos(center latitude), north distances are proportional to the
    latitude difference.

    Args:
        spec: Grid whose frame to project into.
        lat: Latitude in decimal degrees, must lie in [-90, 90].
        lon: Longitude in decimal degrees, must lie in [-180, 180].

    Returns:
        The projected point in meters east/north of the grid origin.

    Raises:
        ValueError: If ``lat`` or ``lon`` is outside its coordinate domain.
    """
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude {lon} outside [-180, 180]")
    east = EARTH_RADIUS_M * math.radians(lon - spec.origin_lon) * math.cos(
        math.radians(spec.center_lat)
    )
    north = EARTH_RADIUS_M * math.radians(lat - spec.origin_lat)
    return PlanarPoint(east, north)


def unproject(spec: GridSpec, point: PlanarPoint) -> tuple[float, float]:
    """Inverse of :func:`project`; returns ``(lat, lon)`` in degrees."""
    lat = spec.origin_lat + math.degrees(point.north / EARTH_RADIUS_M)
    lon = spec.origin_lon + math.degrees(
        point.east / (EARTH_RADIUS_M * math.cos(math.radians(spec.center_lat)))
    )
    return lat, lon


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------


def cell_of(spec: GridSpec, point: PlanarPoint) -> CellId | None:
    """Map a planar point to the cell containing it, or None if off-grid.

    Cells own their south and west boundaries; a point sitting exactly on a
    cell's east or north boundary belongs to the next cell over.  Falling
    outside the grid is an ordinary answer, not an error.
    """
    col = math.floor(point.east / spec.cell_size_m)
    row = math.floor(point.north / spec.cell_size_m)
    if not (0 <= col < spec.nx and 0 <= row < spec.ny):
        return None
    return row * spec.nx + col


def cell_center(spec: GridSpec, cell: CellId) -> PlanarPoint:
    """Planar center of a cell; cell geometry is carried by its center point."""
    col, row = spec.cell_colrow(cell)
    return PlanarPoint((col + 0.5) * spec.cell_size_m, (row + 0.5) * spec.cell_size_m)


def cell_center_latlon(spec: GridSpec, cell: CellId) -> tuple[float, float]:
    return unproject(spec, cell_center(spec, cell))


def all_cell_centers(spec: GridSpec) -> np.ndarray:
    """Planar centers of every cell as an ``(n_cells, 2)`` east/north array."""
    cols = np.arange(spec.n_cells) % spec.nx
    rows = np.arange(spec.n_cells) // spec.nx
    out = np.empty((spec.n_cells, 2), dtype=np.float64)
    out[:, 0] = (cols + 0.5) * spec.cell_size_m
    out[:, 1] = (rows + 0.5) * spec.cell_size_m
    return out


def euclidean(spec: GridSpec, a: CellId, b: CellId) -> float:
    """Planar distance between two cell centers, meters."""
    ca, ra = spec.cell_colrow(a)
    cb, rb = spec.cell_colrow(b)
    return math.hypot((ca - cb) * spec.cell_size_m, (ra - rb) * spec.cell_size_m)


# ---------------------------------------------------------------------------
# Euclidean balls
# ---------------------------------------------------------------------------


def ball_offsets(cell_size_m: float, radius_m: float) -> list[tuple[int, int]]:
    """Lattice offsets whose centers lie within ``radius_m`` of a center.

    This is the unbounded-lattice ball: it ignores any grid border, which
    makes it the right reference count for interior cells.

    Raises:
        ValueError: If ``radius_m`` is negative.
    """
    if radius_m < 0:
        raise ValueError(f"ball radius must be nonnegative, got {radius_m}")
    reach = int(radius_m // cell_size_m) + 1
    out = []
    for dj in range(-reach, reach + 1):
        for di in range(-reach, reach + 1):
            if math.hypot(di * cell_size_m, dj * cell_size_m) <= radius_m:
                out.append((di, dj))
    return out


def euclid_ball(spec: GridSpec, cell: CellId, radius_m: float) -> np.ndarray:
    """Cells whose centers lie within ``radius_m`` of ``cell``'s center.

    The ball is closed (distance equal to the radius is inside) and clipped
    to the grid, so it always contains ``cell`` itself.

    Returns:
        Sorted array of cell indices.
    """
    col, row = spec.cell_colrow(cell)
    members = []
    for di, dj in ball_offsets(spec.cell_size_m, radius_m):
        c, r = col + di, row + dj
        if 0 <= c < spec.nx and 0 <= r < spec.ny:
            members.append(r * spec.nx + c)
    return np.array(sorted(members), dtype=np.int64)


# ---------------------------------------------------------------------------
# grid spec files
# ---------------------------------------------------------------------------

_GRID_KEYS = ("origin_lat", "origin_lon", "cell_size_m", "nx", "ny")


def load_grid_spec(path: str | Path) -> GridSpec:
    """Read a grid specification from a ``key = value`` text file.

    Recognized keys: origin_lat, origin_lon, cell_size_m, nx, ny.  Blank
    lines and ``#`` comments are ignored.

    Raises:
        ValueError: On unknown or missing keys, or malformed lines; the
            message carries the offending line number.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _GRID_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown grid key {key!r}")
        if key in values:
            raise ValueError(f"{path}:{lineno}: duplicate grid key {key!r}")
        values[key] = value.strip()
    missing = [k for k in _GRID_KEYS if k not in values]
    if missing:
        raise ValueError(f"{path}: missing grid keys: {', '.join(missing)}")
    return GridSpec(
        origin_lat=float(values["origin_lat"]),
        origin_lon=float(values["origin_lon"]),
        cell_size_m=float(values["cell_size_m"]),
        nx=int(values["nx"]),
        ny=int(values["ny"]),
    )


def save_grid_spec(spec: GridSpec, path: str | Path) -> None:
    lines = [
        f"origin_lat = {spec.origin_lat!r}",
        f"origin_lon = {spec.origin_lon!r}",
        f"cell_size_m = {spec.cell_size_m!r}",
        f"nx = {spec.nx}",
        f"ny = {spec.ny}",
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def format_grid_meta(spec: GridSpec) -> str:
    """One-line embeddable form of a grid spec, used in file metadata."""
    return (
        f"origin_lat={spec.origin_lat!r} origin_lon={spec.origin_lon!r} "
        f"cell_size_m={spec.cell_size_m!r} nx={spec.nx} ny={spec.ny}"
    )


def parse_grid_meta(text: str) -> GridSpec:
    """Inverse of :func:`format_grid_meta`."""
    values: dict[str, str] = {}
    for token in text.split():
        key, _, value = token.partition("=")
        values[key] = value
    try:
        return GridSpec(
            origin_lat=float(values["origin_lat"]),
            origin_lon=float(values["origin_lon"]),
            cell_size_m=float(values["cell_size_m"]),
            nx=int(values["nx"]),
            ny=int(values["ny"]),
        )
    except KeyError as exc:
        raise ValueError(f"embedded grid metadata missing key {exc}") from exc
