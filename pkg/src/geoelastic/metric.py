"""Elastic distinguishability metrics over grid cells.

The metric is the shortest-path pseudo-metric of an undirected weighted
graph grown iteratively: every vertex keeps raising its certified level
``l_x`` to what the mass inside its current ball supports, then connects
to the nearest cell not yet within reach, until the ball at the level cap
holds enough privacy mass everywhere.  The defining guarantee, and the
thing :func:`audit_requirement` checks independently, is

    mass(ball(x, l)) >= (l / l_star)^2   for all levels l in [0, l_top].

Fences are cell sets that must stay mutually indistinguishable while being
perfectly distinguishable from the outside: each fence is wired as a
zero-weight star and never connects to anything else, so in-fence
distances are 0 and fence-to-outside distances are infinite.

Cells too close to the grid border cannot honestly certify the cap (their
balls are clipped), so a configurable frame band is allowed to terminate
incomplete; those cells are excluded from the usable set.
"""

from __future__ import annotations

import csv
import io as _io
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _sp_dijkstra

from . import _buildcore
from .fileio import atomic_write_bytes, atomic_write_text
from .grid import CellId, GridSpec
from .mass import MassGrid

DEFAULT_L_TOP = 10.0
DEFAULT_FRAME_FRACTION = 0.03

MAGIC = b"ELGM"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# requirement curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Requirement:
    """The mass a ball must hold to certify a level: quadratic in the level.

    ``l_star`` is the level at which exactly one unit of mass is required;
    levels scale as the square root of available mass.

    Attributes:
        l_star: Reference level, must be positive.
    """

    l_star: float

    def __post_init__(self) -> None:
        if not (self.l_star > 0 and math.isfinite(self.l_star)):
            raise ValueError(f"l_star must be positive and finite, got {self.l_star}")

    def required_mass(self, level: float) -> float:
        """Mass required at ``level``; rejects negative levels."""
        if level < 0:
            raise ValueError(f"level must be nonnegative, got {level}")
        return (level / self.l_star) ** 2

    def level_for_mass(self, mass: float) -> float:
        """Largest level a given mass supports (inverse of required_mass)."""
        if mass < 0:
            raise ValueError(f"mass must be nonnegative, got {mass}")
        return self.l_star * math.sqrt(mass)


# ---------------------------------------------------------------------------
# fences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FenceSet:
    """Disjoint groups of cells that report as one location.

    Canonical form: each fence is a sorted tuple of cell indices, fences
    ordered by their first (lowest) cell.
    """

    fences: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for group in self.fences:
            if len(group) == 0:
                raise ValueError("fence groups must be nonempty")
            if list(group) != sorted(group):
                raise ValueError("fence groups must be sorted ascending")
            for cell in group:
                if cell in seen:
                    raise ValueError(f"cell {cell} appears in more than one fence")
                seen.add(cell)
        firsts = [g[0] for g in self.fences]
        if firsts != sorted(firsts):
            raise ValueError("fences must be ordered by their first cell")

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[int]]) -> "FenceSet":
        canon = sorted(tuple(sorted(int(c) for c in g)) for g in groups)
        return cls(fences=tuple(canon))

    def __len__(self) -> int:
        return len(self.fences)

    def __iter__(self):
        return iter(self.fences)

    def all_cells(self) -> np.ndarray:
        if not self.fences:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate([np.array(g, dtype=np.int64) for g in self.fences]))

    def fence_index(self, n_cells: int) -> np.ndarray:
        """Per-cell fence number, -1 for cells outside every fence."""
        out = np.full(n_cells, -1, dtype=np.int32)
        for k, group in enumerate(self.fences):
            for cell in group:
                if not 0 <= cell < n_cells:
                    raise ValueError(f"fence cell {cell} outside [0, {n_cells})")
                out[cell] = k
        return out

    def fence_of(self, cell: int) -> int | None:
        for k, group in enumerate(self.fences):
            if cell in group:
                return k
        return None

    def star_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Zero-weight star per fence, centered on its lowest cell."""
        xs: list[int] = []
        ys: list[int] = []
        for group in self.fences:
            center = group[0]
            for other in group[1:]:
                xs.append(center)
                ys.append(other)
        return (
            np.array(xs, dtype=np.int64),
            np.array(ys, dtype=np.int64),
            np.zeros(len(xs), dtype=np.float64),
        )


def fenced_distance(
    base: Callable[[CellId, CellId], float],
    fences: FenceSet,
    x: CellId,
    y: CellId,
) -> float:
    """Distance with fences folded in: the three-case rule.

    Zero when both cells share a fence, the base distance when neither is
    fenced, infinite otherwise.  ``base`` only ever gets called on
    unfenced pairs, so it may be a metric defined on non-fence cells only.
    """
    fx = fences.fence_of(x)
    fy = fences.fence_of(y)
    if fx is None and fy is None:
        return base(x, y)
    if fx is not None and fx == fy:
        return 0.0
    return math.inf


# ---------------------------------------------------------------------------
# frame band
# ---------------------------------------------------------------------------


def frame_threshold_cells(spec: GridSpec, frame_fraction: float) -> int:
    """Width of the border band in cells: fraction of the larger side."""
    return int(round(frame_fraction * max(spec.nx, spec.ny)))


def frame_mask(spec: GridSpec, frame_fraction: float) -> np.ndarray:
    """True for cells whose border distance is below the band threshold."""
    threshold = frame_threshold_cells(spec, frame_fraction)
    cells = np.arange(spec.n_cells)
    cols = cells % spec.nx
    rows = cells // spec.nx
    border = np.minimum(
        np.minimum(cols, rows), np.minimum(spec.nx - 1 - cols, spec.ny - 1 - rows)
    )
    return border < threshold


# ---------------------------------------------------------------------------
# the graph
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class MetricGraph:
    """A built elastic metric: edge multiset plus query machinery.

    Attributes:
        grid: Grid the metric lives on.
        edge_x, edge_y, edge_w: Undirected edges in insertion order.
            Parallel edges are legal; queries use the lightest.
        fences: Fence groups wired into the graph.
        usable: Per-cell flag: outside every fence, outside the frame
            band, and certified to the cap at build termination.
        l_top: Level cap the build certified toward.
        frame_fraction: Border band fraction used at build time.
    """

    grid: GridSpec
    edge_x: np.ndarray
    edge_y: np.ndarray
    edge_w: np.ndarray
    fences: FenceSet
    usable: np.ndarray
    l_top: float
    frame_fraction: float
    _adjacency: csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.edge_x = np.asarray(self.edge_x, dtype=np.uint32)
        self.edge_y = np.asarray(self.edge_y, dtype=np.uint32)
        self.edge_w = np.asarray(self.edge_w, dtype=np.float64)
        self.usable = np.asarray(self.usable, dtype=bool)
        n = self.grid.n_cells
        if not (len(self.edge_x) == len(self.edge_y) == len(self.edge_w)):
            raise ValueError("edge arrays must have equal length")
        if len(self.edge_x) and (
            int(self.edge_x.max()) >= n or int(self.edge_y.max()) >= n
        ):
            raise ValueError("edge endpoint outside the grid")
        if np.any(self.edge_w < 0) or np.any(self.edge_w > self.l_top):
            raise ValueError("edge weights must lie in [0, l_top]")
        if self.usable.shape != (n,):
            raise ValueError(f"usable mask must have shape ({n},)")
        self.fences.fence_index(n)  # validates fence cells against the grid

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MetricGraph):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.edge_x, other.edge_x)
            and np.array_equal(self.edge_y, other.edge_y)
            and np.array_equal(self.edge_w, other.edge_w)
            and self.fences == other.fences
            and np.array_equal(self.usable, other.usable)
            and self.l_top == other.l_top
            and self.frame_fraction == other.frame_fraction
        )

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def n_edges(self) -> int:
        return len(self.edge_x)

    def adjacency(self) -> csr_matrix:
        """Symmetric CSR over the edge multiset, parallel edges collapsed
        to their minimum weight.  Explicit zeros are real zero-weight edges."""
        if self._adjacency is None:
            n = self.n_cells
            src = np.concatenate([self.edge_x, self.edge_y]).astype(np.int64)
            dst = np.concatenate([self.edge_y, self.edge_x]).astype(np.int64)
            wgt = np.concatenate([self.edge_w, self.edge_w])
            key = src * n + dst
            order = np.lexsort((wgt, key))
            key = key[order]
            wgt = wgt[order]
            keep = np.ones(len(key), dtype=bool)
            keep[1:] = key[1:] != key[:-1]
            key = key[keep]
            wgt = wgt[keep]
            self._adjacency = csr_matrix(
                (wgt, (key // n, key % n)), shape=(n, n), dtype=np.float64
            )
        return self._adjacency

    def distances_from(
        self, sources: Sequence[int] | np.ndarray, limit: float = np.inf
    ) -> np.ndarray:
        """Shortest-path distances from each source to every cell.

        Entries beyond ``limit`` come back infinite; unreachable cells are
        infinite regardless.
        """
        sources = np.asarray(sources, dtype=np.int64)
        if sources.size == 0:
            return np.empty((0, self.n_cells), dtype=np.float64)
        return _sp_dijkstra(
            self.adjacency(), directed=True, indices=sources, limit=limit
        )

    def distance(self, x: CellId, y: CellId) -> float:
        """Metric distance between two cells; infinite when disconnected."""
        self.grid.validate_cell(x)
        self.grid.validate_cell(y)
        row = self.distances_from([x])
        return float(row[0, y])

    def ball(self, x: CellId, level: float) -> np.ndarray:
        """Closed ball: sorted cells within ``level`` of ``x``; rejects
        negative levels."""
        if level < 0:
            raise ValueError(f"ball level must be nonnegative, got {level}")
        self.grid.validate_cell(x)
        row = self.distances_from([x], limit=level)[0]
        return np.flatnonzero(row <= level)


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------

_OFFSET_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def candidate_offsets(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    """Lattice offsets covering the grid, in nearest-first candidate order.

    Sorted by squared Euclidean distance, ties broken by angle from east
    counterclockwise.  Two distinct offsets can never tie on both keys, so
    the order is total; it is shared by every vertex (translation
    invariance of the lattice).
    """
    cached = _OFFSET_CACHE.get((nx, ny))
    if cached is not None:
        return cached
    di = np.arange(-(nx - 1), nx)
    dj = np.arange(-(ny - 1), ny)
    dii, djj = np.meshgrid(di, dj, indexing="ij")
    dii = dii.ravel()
    djj = djj.ravel()
    d2 = dii.astype(np.int64) ** 2 + djj.astype(np.int64) ** 2
    ang = np.arctan2(djj, dii)
    ang = np.where(ang < 0, ang + 2 * np.pi, ang)
    order = np.lexsort((ang, d2))
    result = (
        np.ascontiguousarray(dii[order], dtype=np.int64),
        np.ascontiguousarray(djj[order], dtype=np.int64),
    )
    _OFFSET_CACHE[(nx, ny)] = result
    return result


@dataclass
class BuildResult:
    """Outcome of a build: the graph plus per-cell diagnostics.

    Attributes:
        graph: The built metric.
        levels: Per-cell certified level at termination (l_top when done).
        complete: Per-cell flag: reached the cap (fence cells count).
        stuck: Per-cell flag: exhausted every candidate short of the cap.
        n_iterations: Number of full sweeps performed.
        build_seconds: Wall time spent in the core loop.
    """

    graph: MetricGraph
    levels: np.ndarray
    complete: np.ndarray
    stuck: np.ndarray
    n_iterations: int
    build_seconds: float


def build_elastic_graph(
    mass: MassGrid,
    requirement: Requirement,
    *,
    l_top: float = DEFAULT_L_TOP,
    frame_fraction: float = DEFAULT_FRAME_FRACTION,
    fences: FenceSet | None = None,
) -> BuildResult:
    """Grow the elastic metric for a mass grid.

    Vertices start at the level their own mass supports and are swept in
    row-major order; each sweep recomputes a vertex's ball, raises its
    level to what the ball's mass supports, and connects it to the nearest
    cell still out of reach.  Fence cells are pre-completed and wired as
    zero-weight stars.  The build stops when every vertex has reached the
    cap, only frame-band vertices remain, or no pending vertex can make
    progress; cells stopped short are excluded from the usable set.

    The whole process is deterministic: identical inputs give an identical
    edge list, in the same insertion order.

    Args:
        mass: Per-cell privacy mass (strictly positive everywhere).
        requirement: The mass-per-level curve to certify against.
        l_top: Level cap, must be positive and finite.
        frame_fraction: Border band width as a fraction of the larger grid
            side; must lie in [0, 0.5).
        fences: Optional disjoint cell groups to wire as fences.

    Returns:
        A :class:`BuildResult`; its ``graph`` field is the metric.
    """
    if not (l_top > 0 and math.isfinite(l_top)):
        raise ValueError(f"l_top must be positive and finite, got {l_top}")
    if not 0 <= frame_fraction < 0.5:
        raise ValueError(f"frame_fraction must lie in [0, 0.5), got {frame_fraction}")
    fences = fences if fences is not None else FenceSet()
    spec = mass.grid
    fence_idx = fences.fence_index(spec.n_cells)
    is_fence = fence_idx >= 0
    seed_x, seed_y, seed_w = fences.star_edges()
    off_di, off_dj = candidate_offsets(spec.nx, spec.ny)

    start = time.perf_counter()
    edge_x, edge_y, edge_w, levels, complete, stuck, n_iter = _buildcore.run_build(
        spec.nx,
        spec.ny,
        np.ascontiguousarray(mass.values, dtype=np.float64),
        np.ascontiguousarray(is_fence),
        requirement.l_star,
        float(l_top),
        frame_threshold_cells(spec, frame_fraction),
        off_di,
        off_dj,
        seed_x,
        seed_y,
        seed_w,
    )
    elapsed = time.perf_counter() - start

    usable = complete & ~is_fence & ~frame_mask(spec, frame_fraction)
    graph = MetricGraph(
        grid=spec,
        edge_x=edge_x.astype(np.uint32),
        edge_y=edge_y.astype(np.uint32),
        edge_w=edge_w,
        fences=fences,
        usable=usable,
        l_top=float(l_top),
        frame_fraction=float(frame_fraction),
    )
    return BuildResult(
        graph=graph,
        levels=levels,
        complete=complete,
        stuck=stuck,
        n_iterations=int(n_iter),
        build_seconds=elapsed,
    )


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditViolation:
    cell: int
    level: float
    required: float
    achieved: float


@dataclass
class AuditReport:
    """Outcome of an independent requirement audit.

    ``violations`` lists every (cell, level) whose ball mass fell short of
    the requirement by more than the tolerance.
    """

    violations: list[AuditViolation]
    n_cells: int
    n_checks: int
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def save_csv(self, path: str | Path) -> None:
        buf = _io.StringIO()
        buf.write("cell,level,required,achieved\n")
        for v in self.violations:
            buf.write(
                f"{v.cell},{float(v.level)!r},{float(v.required)!r},"
                f"{float(v.achieved)!r}\n"
            )
        atomic_write_text(path, buf.getvalue())


def _sorted_reach(row: np.ndarray, mass_values: np.ndarray):
    """Finite distances of one source row, sorted by (distance, cell),
    with the matching mass prefix sums."""
    finite = np.flatnonzero(np.isfinite(row))
    dists = row[finite]
    order = np.lexsort((finite, dists))
    dists = dists[order]
    cells = finite[order]
    prefix = np.cumsum(mass_values[cells])
    return dists, prefix


def audit_requirement(
    graph: MetricGraph,
    mass: MassGrid,
    requirement: Requirement,
    levels: Sequence[float] | np.ndarray | None = None,
    *,
    cells: Sequence[int] | np.ndarray | None = None,
    tolerance: float = 1e-9,
    chunk_size: int = 512,
) -> AuditReport:
    """Independently verify the mass requirement on a built graph.

    Runs a fresh bounded shortest-path search (scipy's Dijkstra, a separate
    implementation from the builder's) from every audited cell and checks
    ``mass(ball(x, l)) >= required(l) - tolerance``.

    Args:
        graph: The metric to audit.
        mass: Mass grid the metric was built from; grids must match.
        requirement: The curve the build certified against.
        levels: Levels to check, all within [0, l_top].  ``None`` checks
            the entire continuum of levels up to the cap exactly, by
            checking each jump of the (piecewise-constant) ball mass
            against the requirement just below the next jump.
        cells: Cells to audit; defaults to the usable set.
        tolerance: Slack subtracted from the required mass.
        chunk_size: Sources per batched Dijkstra call (memory knob).

    Returns:
        An :class:`AuditReport`; ``report.ok`` means no violations.
    """
    if mass.grid != graph.grid:
        raise ValueError("mass grid does not match the metric's grid")
    if cells is None:
        cells_arr = np.flatnonzero(graph.usable)
    else:
        cells_arr = np.asarray(cells, dtype=np.int64)
    level_arr: np.ndarray | None = None
    if levels is not None:
        level_arr = np.asarray(levels, dtype=np.float64)
        if level_arr.size == 0:
            raise ValueError("levels must be nonempty when given")
        if np.any(level_arr < 0) or np.any(level_arr > graph.l_top):
            raise ValueError("audit levels must lie within [0, l_top]")
        required_at = np.array(
            [requirement.required_mass(l) for l in level_arr], dtype=np.float64
        )

    violations: list[AuditViolation] = []
    n_checks = 0
    for lo in range(0, len(cells_arr), chunk_size):
        batch = cells_arr[lo : lo + chunk_size]
        rows = graph.distances_from(batch, limit=graph.l_top)
        for cell, row in zip(batch, rows):
            dists, prefix = _sorted_reach(row, mass.values)
            if level_arr is not None:
                pos = np.searchsorted(dists, level_arr, side="right") - 1
                achieved = prefix[pos]
                n_checks += level_arr.size
                for k in np.flatnonzero(achieved < required_at - tolerance):
                    violations.append(
                        AuditViolation(
                            cell=int(cell),
                            level=float(level_arr[k]),
                            required=float(required_at[k]),
                            achieved=float(achieved[k]),
                        )
                    )
            else:
                # Ball mass is a right-continuous step function of the
                # level, so checking each plateau against the requirement
                # at the next jump (capped at l_top) covers every level.
                ends = np.flatnonzero(dists[1:] != dists[:-1])
                bind = np.minimum(
                    np.append(dists[ends + 1], graph.l_top), graph.l_top
                )
                plateau = np.append(prefix[ends], prefix[-1])
                required = (bind / requirement.l_star) ** 2
                n_checks += bind.size
                for k in np.flatnonzero(plateau < required - tolerance):
                    violations.append(
                        AuditViolation(
                            cell=int(cell),
                            level=float(bind[k]),
                            required=float(required[k]),
                            achieved=float(plateau[k]),
                        )
                    )
    return AuditReport(
        violations=violations,
        n_cells=len(cells_arr),
        n_checks=n_checks,
        tolerance=tolerance,
    )


def reach_levels(
    graph: MetricGraph,
    mass: MassGrid,
    requirement: Requirement,
    cells: Sequence[int] | np.ndarray | None = None,
    chunk_size: int = 512,
) -> np.ndarray:
    """Per-cell highest level the requirement actually holds through.

    Walks each cell's ball outward and stops at the first level where the
    accumulated mass no longer supports it; cells certified all the way
    report ``l_top``.  Diagnostic companion to :func:`audit_requirement`.

    Returns:
        Float array aligned with ``cells`` (default: all non-fence cells).
    """
    if mass.grid != graph.grid:
        raise ValueError("mass grid does not match the metric's grid")
    if cells is None:
        fence_cells = set(int(c) for c in graph.fences.all_cells())
        cells_arr = np.array(
            [c for c in range(graph.n_cells) if c not in fence_cells], dtype=np.int64
        )
    else:
        cells_arr = np.asarray(cells, dtype=np.int64)
    out = np.empty(len(cells_arr), dtype=np.float64)
    for lo in range(0, len(cells_arr), chunk_size):
        batch = cells_arr[lo : lo + chunk_size]
        rows = graph.distances_from(batch, limit=graph.l_top)
        for k, row in enumerate(rows):
            dists, prefix = _sorted_reach(row, mass.values)
            ends = np.flatnonzero(dists[1:] != dists[:-1])
            bind = np.minimum(np.append(dists[ends + 1], graph.l_top), graph.l_top)
            plateau = np.append(prefix[ends], prefix[-1])
            supported = requirement.l_star * np.sqrt(plateau)
            reach = graph.l_top
            for j in range(len(bind)):
                if supported[j] < bind[j]:
                    reach = supported[j]
                    break
            out[lo + k] = min(reach, graph.l_top)
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_EDGE_DTYPE = np.dtype([("x", "<u4"), ("y", "<u4"), ("w", "<f8")])


class MetricFormatError(ValueError):
    """Raised when metric bytes cannot be parsed; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def serialize(graph: MetricGraph) -> bytes:
    """Pack a metric into the little-endian binary wire form."""
    parts = [struct.pack("<4sH", MAGIC, FORMAT_VERSION)]
    parts.append(
        struct.pack(
            "<dddII",
            graph.grid.origin_lat,
            graph.grid.origin_lon,
            graph.grid.cell_size_m,
            graph.grid.nx,
            graph.grid.ny,
        )
    )
    parts.append(struct.pack("<dd", graph.l_top, graph.frame_fraction))
    parts.append(struct.pack("<Q", graph.n_edges))
    rec = np.empty(graph.n_edges, dtype=_EDGE_DTYPE)
    rec["x"] = graph.edge_x
    rec["y"] = graph.edge_y
    rec["w"] = graph.edge_w
    parts.append(rec.tobytes())
    parts.append(struct.pack("<I", len(graph.fences)))
    for group in graph.fences:
        parts.append(struct.pack("<I", len(group)))
        parts.append(np.asarray(group, dtype="<u4").tobytes())
    parts.append(struct.pack("<Q", graph.n_cells))
    parts.append(np.packbits(graph.usable, bitorder="little").tobytes())
    return b"".join(parts)


def _take(data: bytes, offset: int, size: int, what: str) -> tuple[bytes, int]:
    if offset + size > len(data):
        raise MetricFormatError(f"truncated metric: expected {what}", offset)
    return data[offset : offset + size], offset + size


def deserialize(data: bytes) -> MetricGraph:
    """Parse metric bytes; malformed input raises :class:`MetricFormatError`
    pointing at the offending byte offset."""
    raw, offset = _take(data, 0, 6, "magic and version")
    magic, version = struct.unpack("<4sH", raw)
    if magic != MAGIC:
        raise MetricFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise MetricFormatError(f"unsupported format version {version}", 4)
    raw, offset = _take(data, offset, 32, "grid header")
    origin_lat, origin_lon, cell_size_m, nx, ny = struct.unpack("<dddII", raw)
    try:
        spec = GridSpec(
            origin_lat=origin_lat,
            origin_lon=origin_lon,
            cell_size_m=cell_size_m,
            nx=nx,
            ny=ny,
        )
    except ValueError as exc:
        raise MetricFormatError(f"invalid grid header: {exc}", offset - 32) from exc
    raw, offset = _take(data, offset, 16, "build parameters")
    l_top, frame_fraction = struct.unpack("<dd", raw)
    raw, offset = _take(data, offset, 8, "edge count")
    (n_edges,) = struct.unpack("<Q", raw)
    edges_at = offset
    raw, offset = _take(data, offset, n_edges * _EDGE_DTYPE.itemsize, "edge records")
    rec = np.frombuffer(raw, dtype=_EDGE_DTYPE)
    if n_edges and (
        int(rec["x"].max()) >= spec.n_cells or int(rec["y"].max()) >= spec.n_cells
    ):
        raise MetricFormatError("edge endpoint outside the grid", edges_at)
    raw, offset = _take(data, offset, 4, "fence count")
    (n_fences,) = struct.unpack("<I", raw)
    groups = []
    for _ in range(n_fences):
        raw, offset = _take(data, offset, 4, "fence size")
        (size,) = struct.unpack("<I", raw)
        raw, offset = _take(data, offset, 4 * size, "fence cells")
        groups.append(tuple(int(c) for c in np.frombuffer(raw, dtype="<u4")))
    raw, offset = _take(data, offset, 8, "cell count")
    (n_cells,) = struct.unpack("<Q", raw)
    if n_cells != spec.n_cells:
        raise MetricFormatError(
            f"usable bitmap for {n_cells} cells, grid has {spec.n_cells}", offset - 8
        )
    bitmap_bytes = (n_cells + 7) // 8
    raw, offset = _take(data, offset, bitmap_bytes, "usable bitmap")
    usable = np.unpackbits(
        np.frombuffer(raw, dtype=np.uint8), bitorder="little", count=n_cells
    ).astype(bool)
    if offset != len(data):
        raise MetricFormatError("trailing bytes after metric", offset)
    try:
        return MetricGraph(
            grid=spec,
            edge_x=rec["x"].copy(),
            edge_y=rec["y"].copy(),
            edge_w=rec["w"].copy(),
            fences=FenceSet(fences=tuple(groups)),
            usable=usable,
            l_top=l_top,
            frame_fraction=frame_fraction,
        )
    except ValueError as exc:
        raise MetricFormatError(f"inconsistent metric contents: {exc}", 0) from exc


def save_metric(graph: MetricGraph, path: str | Path) -> None:
    atomic_write_bytes(path, serialize(graph))


def load_metric(path: str | Path) -> MetricGraph:
    return deserialize(Path(path).read_bytes())


def save_edges_csv(graph: MetricGraph, path: str | Path) -> None:
    """Debug view of the edge multiset, insertion order."""
    buf = _io.StringIO()
    buf.write("cell_a,cell_b,weight\n")
    for x, y, w in zip(graph.edge_x, graph.edge_y, graph.edge_w):
        buf.write(f"{x},{y},{float(w)!r}\n")
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# fence files
# ---------------------------------------------------------------------------


def load_fence_file(path: str | Path, grid: GridSpec) -> FenceSet:
    """Read fences from CSV: per-cell rows or rectangles.

    Accepted headers:
        ``fence_id,cell_index`` - one cell per row.
        ``fence_id,col_min,row_min,col_max,row_max`` - inclusive rectangles;
        several rows may share an id, their union forms the fence.

    Raises:
        ValueError: On unknown headers, malformed rows (with line numbers),
            out-of-grid cells, or overlapping fences.
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty fence file")
    header = [h.strip() for h in rows[0]]
    groups: dict[str, set[int]] = {}
    if header == ["fence_id", "cell_index"]:
        for lineno, row in enumerate(rows[1:], start=2):
            try:
                fid, cell = row[0], int(row[1])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed fence row: {exc}") from exc
            if not 0 <= cell < grid.n_cells:
                raise ValueError(f"{path}:{lineno}: cell {cell} outside the grid")
            groups.setdefault(fid, set()).add(cell)
    elif header == ["fence_id", "col_min", "row_min", "col_max", "row_max"]:
        for lineno, row in enumerate(rows[1:], start=2):
            try:
                fid = row[0]
                c0, r0, c1, r1 = (int(v) for v in row[1:5])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed fence row: {exc}") from exc
            if not (0 <= c0 <= c1 < grid.nx and 0 <= r0 <= r1 < grid.ny):
                raise ValueError(
                    f"{path}:{lineno}: rectangle ({c0},{r0})-({c1},{r1}) "
                    f"outside the {grid.nx}x{grid.ny} grid"
                )
            cells = groups.setdefault(fid, set())
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    cells.add(r * grid.nx + c)
    else:
        raise ValueError(
            f"{path}:1: unrecognized fence header {','.join(header)!r}"
        )
    try:
        return FenceSet.from_groups(groups.values())
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
