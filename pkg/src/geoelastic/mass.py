"""Privacy mass: how much protection each cell contributes to a ball.

Each cell carries a mass ``m(x) = a + q(x) * b`` derived from a terrain
quality score ``q`` (a weighted count of map features).  The two
normalizers pin the scale to a pair of reference radii:

* ``a`` is the floor shared by every cell, chosen so that a large ball of
  featureless terrain sums to exactly one unit of protection.
* ``b`` converts quality into extra mass, scaled so that around an average
  location the small ball already provides most of that unit.

Ball cardinalities behind the normalizers are counted on the unbounded
lattice (interior reference), not clipped at the grid border; per-location
quality sums do use the grid-clipped balls.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fileio import atomic_write_text
from .grid import GridSpec, ball_offsets, euclid_ball, format_grid_meta, parse_grid_meta

#: Default weight for map feature categories not listed explicitly.
DEFAULT_CATEGORY_WEIGHT = 1.0
#: Buildings are plentiful and individually weak signals, so they count less.
DEFAULT_BUILDING_WEIGHT = 0.1


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MassNormalizers:
    """Calibration constants mapping quality to privacy mass.

    Attributes:
        base: Mass floor ``a`` shared by every cell (> 0).
        quality_gain: Marginal mass ``b`` per unit of quality (>= 0).
        avg_quality: Mean small-ball quality over the calibration cells.
        r_small_m: Radius of the small reference ball, meters.
        r_large_m: Radius of the large reference ball, meters.
    """

    base: float
    quality_gain: float
    avg_quality: float
    r_small_m: float
    r_large_m: float


@dataclass
class QualityGrid:
    """Per-cell terrain quality scores over a grid.

    Attributes:
        grid: The grid the scores live on.
        values: Nonnegative float array of length ``grid.n_cells``.
        weights: Category weights used during aggregation, when known;
            recorded in output metadata for provenance.
    """

    grid: GridSpec
    values: np.ndarray
    weights: dict[str, float] | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.n_cells,):
            raise ValueError(
                f"quality array has shape {self.values.shape}, "
                f"expected ({self.grid.n_cells},)"
            )
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("quality values must be finite and nonnegative")


@dataclass
class MassGrid:
    """Per-cell privacy mass over a grid, plus the normalizers that made it."""

    grid: GridSpec
    values: np.ndarray
    normalizers: MassNormalizers | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.n_cells,):
            raise ValueError(
                f"mass array has shape {self.values.shape}, "
                f"expected ({self.grid.n_cells},)"
            )
        if np.any(self.values <= 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("privacy mass must be finite and strictly positive")


# ---------------------------------------------------------------------------
# quality aggregation
# ---------------------------------------------------------------------------


def aggregate_quality(
    grid: GridSpec,
    counts: Mapping[str, np.ndarray],
    weights: Mapping[str, float] | None = None,
) -> QualityGrid:
    """Collapse per-category feature counts into a single quality score.

    ``q(x) = sum_t w_t * count_t(x)``.  Unlisted categories get weight 1.0,
    except ``building`` which defaults to 0.1.

    Args:
        grid: Grid the counts live on.
        counts: Mapping from category name to per-cell count array.
        weights: Optional per-category weight overrides.

    Returns:
        The aggregated quality grid, with the effective weights recorded.
    """
    if not counts:
        raise ValueError("no feature categories to aggregate")
    effective: dict[str, float] = {}
    total = np.zeros(grid.n_cells, dtype=np.float64)
    for name in counts:
        if weights is not None and name in weights:
            w = float(weights[name])
        elif name == "building":
            w = DEFAULT_BUILDING_WEIGHT
        else:
            w = DEFAULT_CATEGORY_WEIGHT
        effective[name] = w
    for name in sorted(counts):  # fixed order, reproducible sums
        arr = np.asarray(counts[name], dtype=np.float64)
        if arr.shape != (grid.n_cells,):
            raise ValueError(
                f"category {name!r} has shape {arr.shape}, expected ({grid.n_cells},)"
            )
        total += effective[name] * arr
    return QualityGrid(grid=grid, values=total, weights=effective)


def default_calibration_cells(quality: QualityGrid) -> np.ndarray:
    """Default calibration set: every cell with strictly positive quality.

    A grid with no quality anywhere falls back to all cells, so the
    average comes out zero and the quality term drops out of the mass.
    """
    positive = np.flatnonzero(quality.values > 0)
    if positive.size:
        return positive
    return np.arange(quality.grid.n_cells, dtype=np.int64)


# ---------------------------------------------------------------------------
# normalizers and mass
# ---------------------------------------------------------------------------


def compute_normalizers(
    quality: QualityGrid,
    r_small_m: float,
    r_large_m: float,
    calibration: Sequence[int] | np.ndarray | None = None,
) -> MassNormalizers:
    """Derive the mass normalizers from a quality grid and two radii.

    ``a = 1 / |B_large|`` with the ball cardinality counted on the unbounded
    lattice.  ``b = (1 / avg_q) * (1 - |B_small| / |B_large|)`` where
    ``avg_q`` is the mean small-ball quality over the calibration cells
    (grid-clipped balls).  A region with no quality anywhere (``avg_q = 0``)
    degrades gracefully to ``b = 0``: mass becomes uniform.

    Args:
        quality: Quality grid to calibrate against.
        r_small_m: Small reference radius, meters.
        r_large_m: Large reference radius, strictly above ``r_small_m``.
        calibration: Cells to average small-ball quality over; defaults to
            all cells with positive quality.

    Raises:
        ValueError: If the radii are mis-ordered or the calibration set is
            empty.
    """
    if not 0 < r_small_m < r_large_m:
        raise ValueError(
            f"radii must satisfy 0 < r_small ({r_small_m}) < r_large ({r_large_m})"
        )
    size = quality.grid.cell_size_m
    n_small = len(ball_offsets(size, r_small_m))
    n_large = len(ball_offsets(size, r_large_m))
    base = 1.0 / n_large

    if calibration is None:
        calibration_arr = default_calibration_cells(quality)
    else:
        calibration_arr = np.asarray(calibration, dtype=np.int64)
        if calibration_arr.size and (
            calibration_arr.min() < 0 or calibration_arr.max() >= quality.grid.n_cells
        ):
            raise ValueError("calibration contains out-of-grid cell indices")
    if calibration_arr.size == 0:
        raise ValueError("calibration set is empty")

    total = 0.0
    for cell in calibration_arr:  # fixed order, reproducible sum
        ball = euclid_ball(quality.grid, int(cell), r_small_m)
        total += float(np.sum(quality.values[ball]))
    avg_quality = total / calibration_arr.size

    if avg_quality > 0:
        quality_gain = (1.0 / avg_quality) * (1.0 - n_small / n_large)
    else:
        quality_gain = 0.0
    return MassNormalizers(
        base=base,
        quality_gain=quality_gain,
        avg_quality=avg_quality,
        r_small_m=r_small_m,
        r_large_m=r_large_m,
    )


def privacy_mass(quality: QualityGrid, normalizers: MassNormalizers) -> MassGrid:
    """Apply the normalizers: ``m(x) = a + q(x) * b`` for every cell."""
    values = normalizers.base + quality.values * normalizers.quality_gain
    return MassGrid(grid=quality.grid, values=values, normalizers=normalizers)


def mass_of(mass: MassGrid, cells: Iterable[int] | np.ndarray) -> float:
    """Total mass of a set of cells; additive, and 0.0 for the empty set.

    Cells are summed in ascending index order so that equal sets always
    produce bit-equal totals.

    Raises:
        ValueError: If any index falls outside the grid.
    """
    arr = np.asarray(list(cells) if not isinstance(cells, np.ndarray) else cells)
    if arr.size == 0:
        return 0.0
    arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() >= mass.grid.n_cells:
        raise ValueError("cell set contains indices outside the grid")
    return float(np.sum(mass.values[np.sort(arr)]))


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------


def _split_meta_lines(text: str) -> tuple[dict[str, str], list[str]]:
    """Separate leading ``# key: value`` metadata lines from CSV body lines."""
    meta: dict[str, str] = {}
    body: list[str] = []
    for line in text.splitlines():
        if line.startswith("#"):
            stripped = line[1:].strip()
            key, _, value = stripped.partition(":")
            if value:
                meta[key.strip()] = value.strip()
        else:
            body.append(line)
    return meta, body


def load_quality_csv(path: str | Path, grid: GridSpec) -> QualityGrid:
    """Read a quality file: header ``cell_index,q`` or ``col,row,q``.

    Cells absent from the file score zero.  If the file embeds grid
    metadata it must match ``grid``.

    Raises:
        ValueError: On unknown headers, malformed rows (with line number),
            duplicate or out-of-grid cells, or a grid mismatch.
    """
    text = Path(path).read_text()
    meta, body = _split_meta_lines(text)
    if "grid" in meta and parse_grid_meta(meta["grid"]) != grid:
        raise ValueError(f"{path}: embedded grid spec does not match the given grid")
    rows = list(csv.reader([ln for ln in body if ln.strip()]))
    if not rows:
        raise ValueError(f"{path}: empty quality file")
    header = [h.strip() for h in rows[0]]
    values = np.zeros(grid.n_cells, dtype=np.float64)
    seen = np.zeros(grid.n_cells, dtype=bool)
    if header == ["cell_index", "q"]:
        index_form = True
    elif header == ["col", "row", "q"]:
        index_form = False
    else:
        raise ValueError(
            f"{path}:1: unrecognized quality header {','.join(header)!r}; "
            "expected 'cell_index,q' or 'col,row,q'"
        )
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            if index_form:
                cell = int(row[0])
            else:
                cell = grid.cell_index(int(row[0]), int(row[1]))
            q = float(row[-1])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed quality row: {exc}") from exc
        if not 0 <= cell < grid.n_cells:
            raise ValueError(f"{path}:{lineno}: cell index {cell} outside the grid")
        if seen[cell]:
            raise ValueError(f"{path}:{lineno}: duplicate cell {cell}")
        seen[cell] = True
        values[cell] = q
    return QualityGrid(grid=grid, values=values)


def load_count_csv(path: str | Path, grid: GridSpec) -> dict[str, np.ndarray]:
    """Read per-category feature counts: ``cell_index,<cat>,...`` columns."""
    text = Path(path).read_text()
    _, body = _split_meta_lines(text)
    rows = list(csv.reader([ln for ln in body if ln.strip()]))
    if not rows:
        raise ValueError(f"{path}: empty count file")
    header = [h.strip() for h in rows[0]]
    if header[:1] == ["cell_index"]:
        categories = header[1:]
        coords = 1
    elif header[:2] == ["col", "row"]:
        categories = header[2:]
        coords = 2
    else:
        raise ValueError(
            f"{path}:1: count header must start with 'cell_index' or 'col,row'"
        )
    if not categories:
        raise ValueError(f"{path}:1: no feature categories in header")
    counts = {name: np.zeros(grid.n_cells, dtype=np.float64) for name in categories}
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            if coords == 1:
                cell = int(row[0])
            else:
                cell = grid.cell_index(int(row[0]), int(row[1]))
            for k, name in enumerate(categories):
                counts[name][cell] += float(row[coords + k])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed count row: {exc}") from exc
    return counts


def save_mass_csv(
    mass: MassGrid, path: str | Path, extra_meta: Mapping[str, str] | None = None
) -> None:
    """Write a mass grid as ``cell_index,mass`` with a metadata header.

    The header records the grid spec, the normalizers, and the aggregation
    weights when known, so downstream artifacts can verify provenance.
    """
    buf = _io.StringIO()
    buf.write(f"# grid: {format_grid_meta(mass.grid)}\n")
    norm = mass.normalizers
    if norm is not None:
        buf.write(f"# base: {norm.base!r}\n")
        buf.write(f"# quality_gain: {norm.quality_gain!r}\n")
        buf.write(f"# avg_quality: {norm.avg_quality!r}\n")
        buf.write(f"# r_small_m: {norm.r_small_m!r}\n")
        buf.write(f"# r_large_m: {norm.r_large_m!r}\n")
    if extra_meta:
        for key, value in extra_meta.items():
            buf.write(f"# {key}: {value}\n")
    buf.write("cell_index,mass\n")
    for cell in range(mass.grid.n_cells):
        buf.write(f"{cell},{float(mass.values[cell])!r}\n")
    atomic_write_text(path, buf.getvalue())


def load_mass_csv(path: str | Path, grid: GridSpec | None = None) -> MassGrid:
    """Read a mass CSV written by :func:`save_mass_csv`.

    Args:
        path: File to read.
        grid: Expected grid; mismatch with the embedded spec is an error.
            When omitted the embedded spec is used as-is.

    Raises:
        ValueError: On missing/malformed rows, missing cells, or grid
            mismatch.
    """
    text = Path(path).read_text()
    meta, body = _split_meta_lines(text)
    if "grid" not in meta:
        raise ValueError(f"{path}: mass file lacks embedded grid metadata")
    embedded = parse_grid_meta(meta["grid"])
    if grid is not None and embedded != grid:
        raise ValueError(f"{path}: embedded grid spec does not match the given grid")
    grid = embedded
    normalizers = None
    if "base" in meta:
        normalizers = MassNormalizers(
            base=float(meta["base"]),
            quality_gain=float(meta.get("quality_gain", "0.0")),
            avg_quality=float(meta.get("avg_quality", "0.0")),
            r_small_m=float(meta.get("r_small_m", "0.0")),
            r_large_m=float(meta.get("r_large_m", "0.0")),
        )
    rows = list(csv.reader([ln for ln in body if ln.strip()]))
    if not rows or [h.strip() for h in rows[0]] != ["cell_index", "mass"]:
        raise ValueError(f"{path}: expected 'cell_index,mass' header")
    values = np.full(grid.n_cells, np.nan)
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            cell = int(row[0])
            values[cell] = float(row[1])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed mass row: {exc}") from exc
    if np.any(np.isnan(values)):
        missing = int(np.flatnonzero(np.isnan(values))[0])
        raise ValueError(f"{path}: no mass for cell {missing}")
    return MassGrid(grid=grid, values=values, normalizers=normalizers)
