"""Adversarial evaluation: priors from check-in data, Bayesian remap,
expected adversarial error, utility, and rate calibration.

The adversary here is Bayesian and optimal: it knows the mechanism and
the prior, observes a report, and guesses the cell minimizing expected
loss.  The remap it uses is a deterministic report-to-guess table, so
computing it once per mechanism and reusing it across users is both
correct and cheap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.spatial.distance import cdist

from .grid import GridSpec, all_cell_centers, cell_of, project
from .mech import EpsilonConfig, MechanismMatrix, planar_laplace_matrix


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossSpec:
    """Adversary loss between a true cell and a guessed cell.

    Kinds:
        ``binary``: 1 unless the guess is exactly right.
        ``euclidean``: planar distance between cell centers, meters.
        ``threshold``: 1 unless the guess lands strictly within
            ``radius_m`` meters of the truth.
    """

    kind: str
    radius_m: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("binary", "euclidean", "threshold"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "threshold":
            if self.radius_m is None or not (
                self.radius_m > 0 and math.isfinite(self.radius_m)
            ):
                raise ValueError("threshold loss needs a positive finite radius")
        elif self.radius_m is not None:
            raise ValueError(f"{self.kind} loss takes no radius")

    @classmethod
    def parse(cls, text: str) -> "LossSpec":
        """Parse ``binary``, ``euclidean``, or ``threshold:<meters>``."""
        text = text.strip()
        if text in ("binary", "euclidean"):
            return cls(kind=text)
        if text.startswith("threshold:"):
            try:
                radius = float(text.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad threshold radius in {text!r}") from None
            return cls(kind="threshold", radius_m=radius)
        raise ValueError(f"unknown loss {text!r}")

    def label(self) -> str:
        if self.kind == "threshold":
            return f"threshold{self.radius_m:g}"
        return self.kind

    def matrix(
        self, grid: GridSpec, truths: np.ndarray, guesses: np.ndarray
    ) -> np.ndarray:
        """Loss table, shape ``(len(truths), len(guesses))``."""
        truths = np.asarray(truths, dtype=np.int64)
        guesses = np.asarray(guesses, dtype=np.int64)
        if self.kind == "binary":
            return (truths[:, None] != guesses[None, :]).astype(np.float64)
        centers = all_cell_centers(grid)
        dist = cdist(centers[truths], centers[guesses])
        if self.kind == "euclidean":
            return dist
        return (dist >= self.radius_m).astype(np.float64)


# ---------------------------------------------------------------------------
# priors and check-in data
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Prior:
    """Probability vector over grid cells, supported inside a region."""

    grid: GridSpec
    p: np.ndarray
    region: np.ndarray

    def __post_init__(self) -> None:
        self.p = np.asarray(self.p, dtype=np.float64)
        self.region = np.asarray(self.region, dtype=bool)
        n = self.grid.n_cells
        if self.p.shape != (n,) or self.region.shape != (n,):
            raise ValueError("prior and region must have one entry per grid cell")
        if np.any(self.p < 0) or not np.all(np.isfinite(self.p)):
            raise ValueError("prior probabilities must be finite and nonnegative")
        total = float(self.p.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"prior sums to {total!r}, expected 1")
        if np.any(self.p[~self.region] > 0):
            raise ValueError("prior puts mass outside its region")

    @property
    def support(self) -> np.ndarray:
        """Cells with positive probability, ascending."""
        return np.flatnonzero(self.p > 0).astype(np.int64)


@dataclass(frozen=True)
class CheckinRecord:
    """One check-in: who, when (epoch seconds), where."""

    user: str
    timestamp: float
    lat: float
    lon: float
    venue: str


def _parse_timestamp(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()
    except ValueError:
        raise ValueError(f"bad timestamp {text!r}") from None


def load_checkins(path: str | Path) -> tuple[list[CheckinRecord], int]:
    """Load tab-separated check-ins: user, timestamp, lat, lon, venue.

    Timestamps may be epoch seconds or ISO 8601.  Malformed lines (wrong
    field count, unparseable numbers, coordinates outside the valid
    range) are skipped and counted, not fatal.

    Returns:
        The records plus the number of skipped lines.
    """
    records: list[CheckinRecord] = []
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                skipped += 1
                continue
            user, ts_text, lat_text, lon_text, venue = parts
            try:
                ts = _parse_timestamp(ts_text)
                lat = float(lat_text)
                lon = float(lon_text)
            except ValueError:
                skipped += 1
                continue
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                skipped += 1
                continue
            records.append(
                CheckinRecord(user=user, timestamp=ts, lat=lat, lon=lon, venue=venue)
            )
    return records, skipped


def snap_cells(records: Iterable[CheckinRecord], spec: GridSpec) -> np.ndarray:
    """Snap check-ins to cells; -1 marks records off the grid."""
    out = []
    for rec in records:
        try:
            point = project(spec, rec.lat, rec.lon)
        except ValueError:
            out.append(-1)
            continue
        cell = cell_of(spec, point)
        out.append(-1 if cell is None else cell)
    return np.array(out, dtype=np.int64)


def load_region(path: str | Path, spec: GridSpec) -> np.ndarray:
    """Load a region mask from a cell-list CSV (``cell_index`` or
    ``col,row`` header)."""
    mask = np.zeros(spec.n_cells, dtype=bool)
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty region file") from None
        header = [h.strip() for h in header]
        if header == ["cell_index"]:
            by_pair = False
        elif header == ["col", "row"]:
            by_pair = True
        else:
            raise ValueError(
                f"{path}: expected header 'cell_index' or 'col,row', got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(f.strip() for f in row):
                continue
            try:
                if by_pair:
                    col, r = int(row[0]), int(row[1])
                    cell = spec.cell_index(col, r)
                else:
                    cell = int(row[0])
                    spec.validate_cell(cell)
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            mask[cell] = True
    if not mask.any():
        raise ValueError(f"{path}: region selects no cells")
    return mask


def rectangle_region(
    spec: GridSpec, col_min: int, row_min: int, col_max: int, row_max: int
) -> np.ndarray:
    """Region mask for an inclusive cell rectangle."""
    if not (0 <= col_min <= col_max < spec.nx and 0 <= row_min <= row_max < spec.ny):
        raise ValueError(
            f"rectangle ({col_min},{row_min})..({col_max},{row_max}) "
            f"does not fit a {spec.nx}x{spec.ny} grid"
        )
    mask = np.zeros(spec.n_cells, dtype=bool)
    for r in range(row_min, row_max + 1):
        mask[spec.cell_index(col_min, r) : spec.cell_index(col_max, r) + 1] = True
    return mask


def build_prior(
    records: Iterable[CheckinRecord],
    spec: GridSpec,
    region: np.ndarray | None = None,
) -> Prior:
    """Empirical prior from check-ins: snap to cells, drop what falls
    outside the region, normalize counts.

    Raises:
        ValueError: If no check-in lands inside the region.
    """
    if region is None:
        region = np.ones(spec.n_cells, dtype=bool)
    region = np.asarray(region, dtype=bool)
    counts = np.zeros(spec.n_cells, dtype=np.float64)
    cells = snap_cells(records, spec)
    for cell in cells:
        if cell >= 0 and region[cell]:
            counts[cell] += 1.0
    total = counts.sum()
    if total == 0:
        raise ValueError(
            f"no check-ins fall inside the region ({int(region.sum())} cells)"
        )
    return Prior(grid=spec, p=counts / total, region=region)


def group_by_user(
    records: Iterable[CheckinRecord],
) -> dict[str, list[CheckinRecord]]:
    """Bucket check-ins per user, users in sorted order."""
    buckets: dict[str, list[CheckinRecord]] = {}
    for rec in records:
        buckets.setdefault(rec.user, []).append(rec)
    return {user: buckets[user] for user in sorted(buckets)}


# ---------------------------------------------------------------------------
# optimal remap and adversarial error
# ---------------------------------------------------------------------------


def _support_positions(mech: MechanismMatrix, support: np.ndarray) -> np.ndarray:
    try:
        return np.array(
            [mech.secret_position(int(c)) for c in support], dtype=np.int64
        )
    except ValueError as exc:
        raise ValueError(
            f"prior support is not covered by the mechanism: {exc}"
        ) from None


def optimal_remap(
    mech: MechanismMatrix,
    prior: Prior,
    loss: LossSpec,
    include_all_guesses: bool = False,
) -> np.ndarray:
    """Bayes-optimal guess per report cell.

    For each report ``z`` the guess minimizes
    ``sum_x prior(x) K(x)(z) loss(x, g)`` over candidate guesses; ties go
    to the smallest cell index.  Candidates are the prior's support,
    or every grid cell when ``include_all_guesses`` is set (useful for
    geometric losses where a midpoint can beat both endpoints).  Reports
    no secret ever produces keep themselves as the guess.

    Returns:
        Guessed cell per report, aligned with ``mech.reports``.
    """
    support = prior.support
    pos = _support_positions(mech, support)
    weighted = prior.p[support][:, None] * mech.rows[pos]
    marginal = weighted.sum(axis=0)
    if include_all_guesses:
        guesses = np.arange(mech.grid.n_cells, dtype=np.int64)
    else:
        guesses = support
    if loss.kind == "binary" and not include_all_guesses:
        # argmax of the posterior; first occurrence is the smallest cell
        best = np.argmax(weighted, axis=0)
        remap = support[best]
    else:
        table = loss.matrix(mech.grid, support, guesses)
        objective = table.T @ weighted
        remap = guesses[np.argmin(objective, axis=0)]
    remap = remap.copy()
    dead = marginal == 0
    remap[dead] = mech.reports[dead]
    return remap


def adv_error(
    mech: MechanismMatrix,
    prior: Prior,
    remap: np.ndarray,
    loss: LossSpec,
) -> float:
    """Expected loss of a guessing strategy against a prior.

    ``sum_{x,z} prior(x) K(x)(z) loss(x, remap(z))``.
    """
    remap = np.asarray(remap, dtype=np.int64)
    if remap.shape != mech.reports.shape:
        raise ValueError("remap must assign one guess per report cell")
    support = prior.support
    pos = _support_positions(mech, support)
    weighted = prior.p[support][:, None] * mech.rows[pos]
    unique_guesses, inverse = np.unique(remap, return_inverse=True)
    table = loss.matrix(mech.grid, support, unique_guesses)
    return float((weighted * table[:, inverse]).sum())


def adv_error_optimal(
    mech: MechanismMatrix,
    prior: Prior,
    loss: LossSpec,
    include_all_guesses: bool = False,
) -> float:
    """Adversarial error under the optimal remap for this same prior."""
    remap = optimal_remap(mech, prior, loss, include_all_guesses=include_all_guesses)
    return adv_error(mech, prior, remap, loss)


def per_user_adv_error(
    mech: MechanismMatrix,
    user_priors: dict[str, Prior],
    base_prior: Prior,
    loss: LossSpec,
) -> dict[str, float]:
    """Per-user adversarial error under one shared strategy.

    The adversary optimizes its remap against the base (population)
    prior, then each user's error is scored with their own prior, which
    mirrors an attacker who knows the crowd but not the individual.
    """
    remap = optimal_remap(mech, base_prior, loss)
    return {
        user: adv_error(mech, prior, remap, loss)
        for user, prior in user_priors.items()
    }


def utility(mech: MechanismMatrix, prior: Prior, loss: LossSpec) -> float:
    """Expected loss of the raw reports, no remap: service quality.

    ``sum_{x,z} prior(x) K(x)(z) loss(x, z)``, linear in the prior.
    """
    support = prior.support
    pos = _support_positions(mech, support)
    table = loss.matrix(mech.grid, support, mech.reports)
    per_secret = (mech.rows[pos] * table).sum(axis=1)
    return float(prior.p[support] @ per_secret)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def bisect_decreasing(
    fn: Callable[[float], float],
    target: float,
    lo: float,
    hi: float,
    tolerance: float,
    max_iter: int = 200,
) -> float:
    """Solve ``fn(x) == target`` for a decreasing ``fn`` by bisection.

    Raises:
        ValueError: If the target is outside ``[fn(hi), fn(lo)]``; the
            message reports that achievable interval.
    """
    if not lo < hi:
        raise ValueError(f"bad bracket [{lo}, {hi}]")
    f_lo = fn(lo)
    f_hi = fn(hi)
    if f_lo < f_hi:
        raise ValueError(
            f"function is not decreasing on [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}"
        )
    if not (f_hi - tolerance <= target <= f_lo + tolerance):
        raise ValueError(
            f"target {target} is outside the achievable range "
            f"[{f_hi}, {f_lo}] on this bracket"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        value = fn(mid)
        if abs(value - target) <= tolerance:
            return mid
        if value > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    raise RuntimeError(
        f"bisection did not reach the target within {max_iter} iterations"
    )


def calibrate_pl(
    target_utility: float,
    prior: Prior,
    loss: LossSpec,
    eps_lo: float = 1e-5,
    eps_hi: float = 1.0,
) -> EpsilonConfig:
    """Find the planar Laplace rate whose utility matches a target.

    Utility here is mean Euclidean-style loss of the raw reports, which
    decreases as the rate grows (less noise).  Solved by bisection to
    ``max(1e-6 * target, 1e-9)`` absolute tolerance.

    Raises:
        ValueError: If no rate in ``[eps_lo, eps_hi]`` meets the target;
            the message reports the achievable utility interval.
    """
    if not (target_utility > 0 and math.isfinite(target_utility)):
        raise ValueError(f"target utility must be positive, got {target_utility}")

    def f(eps: float) -> float:
        mech = planar_laplace_matrix(
            prior.grid, EpsilonConfig(eps), secrets=prior.support
        )
        return utility(mech, prior, loss)

    tolerance = max(1e-6 * target_utility, 1e-9)
    eps = bisect_decreasing(f, target_utility, eps_lo, eps_hi, tolerance)
    return EpsilonConfig(eps)
