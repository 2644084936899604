"""Obfuscation mechanisms: graph-exponential and planar Laplace.

A mechanism is a row-stochastic matrix from secret cells to report cells.
The exponential mechanism weights reports by ``exp(-d(x, z) / 2)`` under
the elastic metric; the half in the exponent pays for the per-secret
normalization, so the full multiplicative distinguishability bound

    K(x)(z) <= exp(d(x, x')) * K(x')(z)

holds for every pair of secrets.  Unreachable reports (infinite distance)
get probability exactly zero, which is what makes fences airtight.

The planar Laplace mechanism is the classic fixed-rate baseline: reports
fall around the secret with density proportional to ``exp(-eps * d_euc)``,
sampled exactly by drawing a uniform angle and a radius distributed as the
sum of two exponentials (the polar radial law), and discretized onto the
grid by renormalizing over cell centers.
"""

from __future__ import annotations

import io as _io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .fileio import atomic_write_text
from .grid import CellId, GridSpec, PlanarPoint, all_cell_centers
from .metric import MetricGraph


# ---------------------------------------------------------------------------
# precision configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpsilonConfig:
    """Planar Laplace precision: the per-meter decay rate of report density.

    Attributes:
        epsilon: Rate in 1/meters; larger means less noise.
    """

    epsilon: float

    def __post_init__(self) -> None:
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")

    @classmethod
    def from_protection(cls, l_star: float, r_star: float) -> "EpsilonConfig":
        """Rate giving ``l_star`` of distinguishability at ``r_star`` meters."""
        if not l_star > 0 or not r_star > 0:
            raise ValueError("l_star and r_star must both be positive")
        return cls(epsilon=l_star / r_star)

    @property
    def expected_displacement(self) -> float:
        """Mean report displacement on the continuous plane: 2 / epsilon."""
        return 2.0 / self.epsilon


# ---------------------------------------------------------------------------
# mechanism matrices
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class MechanismMatrix:
    """Row-stochastic mechanism over grid cells.

    Attributes:
        grid: Grid both secrets and reports live on.
        secrets: Cell index per row.
        reports: Cell index per column.
        rows: ``(len(secrets), len(reports))`` probabilities; every row
            sums to one within 1e-9 (checked on construction).
    """

    grid: GridSpec
    secrets: np.ndarray
    reports: np.ndarray
    rows: np.ndarray
    _secret_pos: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.secrets = np.asarray(self.secrets, dtype=np.int64)
        self.reports = np.asarray(self.reports, dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.float64)
        n = self.grid.n_cells
        for name, arr in (("secrets", self.secrets), ("reports", self.reports)):
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"{name} must be a nonempty 1-d array")
            if arr.min() < 0 or arr.max() >= n:
                raise ValueError(f"{name} contain cell indices outside the grid")
            if len(np.unique(arr)) != len(arr):
                raise ValueError(f"{name} contain duplicate cells")
        if self.rows.shape != (len(self.secrets), len(self.reports)):
            raise ValueError(
                f"rows have shape {self.rows.shape}, expected "
                f"({len(self.secrets)}, {len(self.reports)})"
            )
        if np.any(self.rows < 0):
            raise ValueError("mechanism probabilities must be nonnegative")
        sums = self.rows.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
        if bad.size:
            raise ValueError(
                f"row for secret {int(self.secrets[bad[0]])} sums to "
                f"{sums[bad[0]]!r}, expected 1"
            )
        self._secret_pos = {int(c): i for i, c in enumerate(self.secrets)}

    def secret_position(self, cell: CellId) -> int:
        try:
            return self._secret_pos[int(cell)]
        except KeyError:
            raise ValueError(f"cell {cell} is not a secret of this mechanism") from None

    def row(self, cell: CellId) -> np.ndarray:
        """Report distribution of one secret (a view, do not mutate)."""
        return self.rows[self.secret_position(cell)]


def save_matrix_csv(mech: MechanismMatrix, path: str | Path) -> None:
    """Sparse CSV export: ``secret_index,report_index,probability``,
    zero entries omitted."""
    buf = _io.StringIO()
    buf.write("secret_index,report_index,probability\n")
    for i, secret in enumerate(mech.secrets):
        row = mech.rows[i]
        for j in np.flatnonzero(row > 0):
            buf.write(f"{secret},{mech.reports[j]},{float(row[j])!r}\n")
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# graph-exponential mechanism
# ---------------------------------------------------------------------------


def exponential_mechanism(
    graph: MetricGraph,
    secrets: Sequence[int] | np.ndarray,
    reports: Sequence[int] | np.ndarray | None = None,
) -> MechanismMatrix:
    """Exponential mechanism under the graph metric.

    ``K(x)(z) = exp(-d(x, z) / 2) / sum_z' exp(-d(x, z') / 2)``.

    Secrets inside the same fence are metrically identical, so their rows
    are computed once from the fence's lowest cell and shared; equal
    secrets therefore get bit-equal rows, not merely close ones.

    Args:
        graph: The metric to weight reports by.
        secrets: Cells the mechanism must serve.
        reports: Candidate report cells; defaults to the whole grid.

    Raises:
        ValueError: If some secret has no report at finite distance (its
            row would not normalize); the message names the cell.
    """
    secrets = np.asarray(secrets, dtype=np.int64)
    if reports is None:
        reports = np.arange(graph.n_cells, dtype=np.int64)
    else:
        reports = np.asarray(reports, dtype=np.int64)

    fence_idx = graph.fences.fence_index(graph.n_cells)
    rep_of = np.array(
        [
            graph.fences.fences[fence_idx[c]][0] if fence_idx[c] >= 0 else c
            for c in secrets
        ],
        dtype=np.int64,
    )
    unique_reps, inverse = np.unique(rep_of, return_inverse=True)
    dist = graph.distances_from(unique_reps)[:, reports]
    weights = np.exp(-dist / 2.0)  # exp(-inf/2) is exactly 0
    sums = weights.sum(axis=1)
    dead = np.flatnonzero(sums == 0)
    if dead.size:
        culprit = secrets[np.flatnonzero(inverse == dead[0])[0]]
        raise ValueError(
            f"secret cell {int(culprit)} has no report at finite distance"
        )
    rows = (weights / sums[:, None])[inverse]
    return MechanismMatrix(grid=graph.grid, secrets=secrets, reports=reports, rows=rows)


@dataclass
class PrivacyCheck:
    """Result of an exhaustive distinguishability-bound check."""

    violations: list[tuple[int, int, int, float, float]]
    n_checked: int
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_dx_privacy(
    mech: MechanismMatrix, graph: MetricGraph, tolerance: float = 1e-12
) -> PrivacyCheck:
    """Exhaustively check ``K(x)(z) <= exp(d(x,x')) * K(x')(z) + tolerance``.

    Pairs at infinite distance pass vacuously (the bound is infinite),
    which is exactly when a zero may face a nonzero.  Zero against zero
    always passes.

    Returns:
        A :class:`PrivacyCheck` listing violating ``(x, x', z)`` triples
        with both sides of the failed inequality.
    """
    dist = graph.distances_from(mech.secrets)[:, mech.secrets]
    violations: list[tuple[int, int, int, float, float]] = []
    n_checked = 0
    n_s = len(mech.secrets)
    for i in range(n_s):
        with np.errstate(over="ignore"):
            factor = np.exp(dist[:, i])  # d(x_j, x_i) = d(x_i, x_j)
        bound = np.where(
            np.isinf(dist[:, i])[:, None], np.inf, factor[:, None] * mech.rows
        )
        exceed = mech.rows[i][None, :] > bound + tolerance
        n_checked += exceed.size
        for j, z in zip(*np.nonzero(exceed)):
            violations.append(
                (
                    int(mech.secrets[i]),
                    int(mech.secrets[j]),
                    int(mech.reports[z]),
                    float(mech.rows[i, z]),
                    float(bound[j, z]),
                )
            )
    return PrivacyCheck(violations=violations, n_checked=n_checked, tolerance=tolerance)


def expected_error(
    mech: MechanismMatrix,
    secret: CellId,
    loss: Callable[[CellId, np.ndarray], np.ndarray] | None = None,
) -> float:
    """Mean loss of the raw reports for one secret, no adversary involved.

    Args:
        mech: The mechanism.
        secret: Secret cell to evaluate.
        loss: Distance from the secret to each report cell; defaults to
            planar Euclidean between cell centers.
    """
    row = mech.row(secret)
    if loss is None:
        centers = all_cell_centers(mech.grid)
        delta = centers[mech.reports] - centers[secret]
        costs = np.hypot(delta[:, 0], delta[:, 1])
    else:
        costs = np.asarray(loss(secret, mech.reports), dtype=np.float64)
    return float(row @ costs)


def sample_report(
    mech: MechanismMatrix,
    secret: CellId,
    rng: np.random.Generator,
    n: int | None = None,
) -> int | np.ndarray:
    """Draw report cells for a secret; deterministic given the generator."""
    row = mech.row(secret)
    picks = rng.choice(len(mech.reports), size=n, p=row)
    if n is None:
        return int(mech.reports[picks])
    return mech.reports[picks]


def compose_level(dx: float, n_uses: int) -> float:
    """Distinguishability level after ``n_uses`` independent reports.

    Levels add per use: ``n * dx``.  Zero stays zero no matter how often
    the mechanism runs, and infinity stays infinite.

    Raises:
        ValueError: If ``n_uses`` is not a positive integer or ``dx`` is
            negative.
    """
    if not isinstance(n_uses, (int, np.integer)) or n_uses < 1:
        raise ValueError(f"n_uses must be a positive integer, got {n_uses!r}")
    if dx < 0:
        raise ValueError(f"distinguishability level must be nonnegative, got {dx}")
    return float(n_uses * dx)


# ---------------------------------------------------------------------------
# planar Laplace
# ---------------------------------------------------------------------------


def planar_laplace_sample(
    point: PlanarPoint,
    config: EpsilonConfig,
    rng: np.random.Generator,
    n: int | None = None,
) -> PlanarPoint | np.ndarray:
    """Sample planar Laplace noise around a point, exactly.

    Draws the angle uniformly, then the radius as the sum of two
    exponentials of rate epsilon, which is the exact radial law of the
    planar density ``eps^2/(2 pi) * exp(-eps * d)``.  Mean displacement is
    ``2 / eps``.  Batch draws consume the stream as one angle block
    followed by one radius block.

    Args:
        point: Center, in planar meters.
        config: Precision (the rate).
        rng: Source of randomness; identical generators give identical
            reports.
        n: Number of samples; ``None`` returns a single point.

    Returns:
        A :class:`PlanarPoint`, or an ``(n, 2)`` east/north array.
    """
    count = 1 if n is None else int(n)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
    radius = rng.exponential(1.0 / config.epsilon, size=(count, 2)).sum(axis=1)
    east = point.east + radius * np.cos(theta)
    north = point.north + radius * np.sin(theta)
    if n is None:
        return PlanarPoint(float(east[0]), float(north[0]))
    return np.column_stack([east, north])


def planar_laplace_matrix(
    spec: GridSpec,
    config: EpsilonConfig,
    secrets: Sequence[int] | np.ndarray | None = None,
    reports: Sequence[int] | np.ndarray | None = None,
) -> MechanismMatrix:
    """Planar Laplace discretized onto the grid.

    Cell probabilities follow the density at cell centers,
    ``K(x)(z) proportional to exp(-eps * d_euc(x, z))``, renormalized over
    the report set; truncation at the grid border is handled by that same
    renormalization.

    Raises:
        ValueError: If the report set is empty or some row underflows to
            an all-zero weight vector.
    """
    if secrets is None:
        secrets = np.arange(spec.n_cells, dtype=np.int64)
    else:
        secrets = np.asarray(secrets, dtype=np.int64)
    if reports is None:
        reports = np.arange(spec.n_cells, dtype=np.int64)
    else:
        reports = np.asarray(reports, dtype=np.int64)
        if reports.size == 0:
            raise ValueError("report set must be nonempty")
    centers = all_cell_centers(spec)
    dist = cdist(centers[secrets], centers[reports])
    weights = np.exp(-config.epsilon * dist)
    sums = weights.sum(axis=1)
    dead = np.flatnonzero(sums == 0)
    if dead.size:
        raise ValueError(
            f"secret cell {int(secrets[dead[0]])} has all-zero report weights "
            "(epsilon too large for this grid)"
        )
    rows = weights / sums[:, None]
    return MechanismMatrix(grid=spec, secrets=secrets, reports=reports, rows=rows)
