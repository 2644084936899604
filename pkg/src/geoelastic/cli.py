"""Command-line pipeline: mass, build, sample, eval, heatmap.

Commands are thin compositions of the library modules; all policy lives
there.  Everything here is deterministic given identical inputs, flags,
and seed: outputs are byte-identical across runs, randomness flows from
the single --seed flag through one named generator (numpy-pcg64), and
files land atomically.

Exit codes, stable by contract:
    0  success, all requested outputs written, audits clean
    1  missing input file
    2  malformed input, bad flag or config value, unknown quantity
    3  requirement audit failed; the metric file was not written
    4  illegal secret cell (frame band, or metric incomplete there)
    5  empty region or dataset
"""

from __future__ import annotations

import argparse
import io as _io
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluate, mass as mass_mod, mech, metric, report
from .fileio import atomic_write_text
from .grid import (
    GridSpec,
    PlanarPoint,
    all_cell_centers,
    cell_center,
    cell_center_latlon,
    cell_of,
    format_grid_meta,
    load_grid_spec,
    project,
    unproject,
)

EXIT_OK = 0
EXIT_MISSING = 1
EXIT_FORMAT = 2
EXIT_AUDIT = 3
EXIT_SECRET = 4
EXIT_EMPTY = 5

GENERATOR_NAME = "numpy-pcg64"  # changing this is a breaking change

LN2 = math.log(2.0)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------


def _load_config_file(path: str) -> dict[str, str]:
    """Read a ``key = value`` config file; keys use flag names with
    dashes or underscores."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CliError(EXIT_MISSING, f"config file not found: {path}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(
                EXIT_FORMAT, f"{path}:{lineno}: expected 'key = value', got {line!r}"
            )
        key, _, value = stripped.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(
    parser: argparse.ArgumentParser,
    subparsers: dict[str, argparse.ArgumentParser],
    args: argparse.Namespace,
) -> None:
    """Re-parse with config values as defaults so flags keep priority.

    A config file may serve a whole pipeline, so keys belonging to other
    subcommands are ignored here; keys matching no subcommand at all are
    rejected as typos.
    """
    if not args.config:
        return
    values = _load_config_file(args.config)
    sub = subparsers[args.command]
    local = {a.dest: a for a in list(parser._actions) + list(sub._actions)}
    anywhere = {a.dest for p in subparsers.values() for a in p._actions}
    anywhere.update(a.dest for a in parser._actions)
    unknown = sorted(set(values) - anywhere)
    if unknown:
        raise CliError(
            EXIT_FORMAT, f"{args.config}: unknown config keys: {', '.join(unknown)}"
        )
    defaults: dict[str, object] = {}
    for key, raw in values.items():
        action = local.get(key)
        if action is None:
            continue  # belongs to a different subcommand
        if action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (TypeError, ValueError):
                raise CliError(
                    EXIT_FORMAT, f"{args.config}: bad value for {key}: {raw!r}"
                ) from None
        else:
            defaults[key] = raw
    parser.set_defaults(**{k: v for k, v in defaults.items() if k in
                           {a.dest for a in parser._actions}})
    sub.set_defaults(**{k: v for k, v in defaults.items() if k in
                        {a.dest for a in sub._actions}})
    fresh = parser.parse_args(args._argv)
    fresh._argv = args._argv
    args.__dict__.update(fresh.__dict__)


def _meta_block(grid: GridSpec | None, settings: dict[str, object]) -> str:
    """Metadata header lines echoing the effective configuration."""
    lines = []
    if grid is not None:
        lines.append(f"# grid: {format_grid_meta(grid)}")
    for key, value in settings.items():
        lines.append(f"# {key}: {value}")
    return "".join(line + "\n" for line in lines)


def _emit(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(output, text)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, f"{what} not found: {path}")
    return p


def _load_metric(path: str) -> metric.MetricGraph:
    _require_file(path, "metric file")
    try:
        return metric.load_metric(path)
    except metric.MetricFormatError as exc:
        raise CliError(
            EXIT_FORMAT, f"{path}: bad metric file at byte {exc.offset}: {exc}"
        ) from None


def _parse_weights(text: str | None) -> dict[str, float] | None:
    if text is None:
        return None
    weights: dict[str, float] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise CliError(EXIT_FORMAT, f"bad weight entry {part!r}, expected name=value")
        name, _, value = part.partition("=")
        try:
            weights[name.strip()] = float(value)
        except ValueError:
            raise CliError(EXIT_FORMAT, f"bad weight value in {part!r}") from None
    return weights


# ---------------------------------------------------------------------------
# mass
# ---------------------------------------------------------------------------


def cmd_mass(args: argparse.Namespace) -> int:
    spec = load_grid_spec(_require_file(args.grid, "grid spec"))
    if (args.quality is None) == (args.counts is None):
        raise CliError(EXIT_FORMAT, "provide exactly one of --quality or --counts")
    if args.quality is not None:
        quality = mass_mod.load_quality_csv(
            _require_file(args.quality, "quality file"), spec
        )
    else:
        counts = mass_mod.load_count_csv(
            _require_file(args.counts, "count file"), spec
        )
        quality = mass_mod.aggregate_quality(
            spec, counts, _parse_weights(args.weights)
        )
    calibration = None
    if args.calibration is not None:
        calibration = evaluate.load_region(
            _require_file(args.calibration, "calibration file"), spec
        ).nonzero()[0]
    norms = mass_mod.compute_normalizers(
        quality, args.r_small, args.r_large, calibration=calibration
    )
    result = mass_mod.privacy_mass(quality, norms)
    extra = {"command": "mass"}
    if quality.weights is not None:
        extra["weights"] = ",".join(
            f"{name}={value!r}" for name, value in sorted(quality.weights.items())
        )
    mass_mod.save_mass_csv(result, args.output, extra_meta=extra)
    print(
        f"mass: {spec.n_cells} cells, base={norms.base!r}, "
        f"quality_gain={norms.quality_gain!r}, avg_quality={norms.avg_quality!r}"
    )
    print(f"wrote {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------


def cmd_build(args: argparse.Namespace) -> int:
    grid_mass = mass_mod.load_mass_csv(_require_file(args.mass, "mass file"))
    fences = None
    if args.fences is not None:
        fences = metric.load_fence_file(
            _require_file(args.fences, "fence file"), grid_mass.grid
        )
    requirement = metric.Requirement(l_star=args.l_star)
    started = time.perf_counter()
    result = metric.build_elastic_graph(
        grid_mass,
        requirement,
        l_top=args.l_top,
        frame_fraction=args.frame_fraction,
        fences=fences,
    )
    wall = time.perf_counter() - started
    graph = result.graph

    audit = metric.audit_requirement(graph, grid_mass, requirement)
    if args.audit_csv is not None:
        audit.save_csv(args.audit_csv)
    n_usable = int(graph.usable.sum())
    print(
        f"build: {result.n_iterations} iterations, {graph.n_edges} edges, "
        f"{n_usable} usable cells, {wall:.2f}s wall time"
    )
    if not audit.ok:
        for v in audit.violations[:10]:
            print(
                f"audit violation: cell {v.cell} at level {v.level:.6f} "
                f"requires {v.required:.9f}, has {v.achieved:.9f}",
                file=sys.stderr,
            )
        print(
            f"audit failed with {len(audit.violations)} violations; "
            "metric not written",
            file=sys.stderr,
        )
        return EXIT_AUDIT
    if n_usable == 0:
        print("warning: no usable cells (fences/frame cover the grid)", file=sys.stderr)
    metric.save_metric(graph, args.output)
    if args.edges_csv is not None:
        metric.save_edges_csv(graph, args.edges_csv)
    print(f"wrote {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def _resolve_cell(args: argparse.Namespace, spec: GridSpec) -> int:
    given_cell = args.cell is not None
    given_coords = args.lat is not None or args.lon is not None
    if given_cell == given_coords:
        raise CliError(EXIT_FORMAT, "provide either --cell or both --lat and --lon")
    if given_cell:
        try:
            spec.validate_cell(args.cell)
        except ValueError as exc:
            raise CliError(EXIT_FORMAT, str(exc)) from None
        return args.cell
    if args.lat is None or args.lon is None:
        raise CliError(EXIT_FORMAT, "--lat and --lon go together")
    try:
        point = project(spec, args.lat, args.lon)
    except ValueError as exc:
        raise CliError(EXIT_FORMAT, str(exc)) from None
    cell = cell_of(spec, point)
    if cell is None:
        raise CliError(EXIT_FORMAT, f"({args.lat}, {args.lon}) falls outside the grid")
    return cell


def cmd_sample(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise CliError(EXIT_FORMAT, f"--n must be at least 1, got {args.n}")
    rng = np.random.default_rng(args.seed)
    pl_flags = (
        args.epsilon is not None
        or args.l_star_pl is not None
        or args.r_star is not None
    )
    if args.metric is not None and pl_flags:
        raise CliError(
            EXIT_FORMAT,
            "--metric selects the exponential mechanism; it conflicts with "
            "--epsilon/--l-star/--r-star",
        )

    if args.metric is not None:
        graph = _load_metric(args.metric)
        spec = graph.grid
        cell = _resolve_cell(args, spec)
        fence_idx = graph.fences.fence_index(spec.n_cells)
        fenced = fence_idx[cell] >= 0
        if not graph.usable[cell] and not fenced:
            in_frame = metric.frame_mask(spec, graph.frame_fraction)[cell]
            reason = (
                "it sits in the frame band, where the requirement is waived"
                if in_frame
                else "the metric never completed its requirement there"
            )
            raise CliError(
                EXIT_SECRET, f"cell {cell} cannot be used as a secret: {reason}"
            )
        mechanism = mech.exponential_mechanism(graph, [cell])
        reports = mech.sample_report(mechanism, cell, rng, n=args.n)
        settings = {
            "command": "sample",
            "mechanism": "exponential",
            "secret_cell": cell,
            "n": args.n,
            "rng": f"{GENERATOR_NAME} seed={args.seed}",
        }
        buf = _io.StringIO()
        buf.write(_meta_block(spec, settings))
        buf.write("report_cell,lat,lon\n")
        for rep in np.atleast_1d(reports):
            lat, lon = cell_center_latlon(spec, int(rep))
            buf.write(f"{int(rep)},{lat!r},{lon!r}\n")
        _emit(buf.getvalue(), args.output)
        return EXIT_OK

    if args.grid is None:
        raise CliError(
            EXIT_FORMAT,
            "planar Laplace sampling needs --grid (or pass --metric for the "
            "exponential mechanism)",
        )
    spec = load_grid_spec(_require_file(args.grid, "grid spec"))
    if args.epsilon is not None:
        if args.l_star_pl is not None or args.r_star is not None:
            raise CliError(EXIT_FORMAT, "--epsilon conflicts with --l-star/--r-star")
        try:
            config = mech.EpsilonConfig(args.epsilon)
        except ValueError as exc:
            raise CliError(EXIT_FORMAT, str(exc)) from None
    elif args.l_star_pl is not None and args.r_star is not None:
        try:
            config = mech.EpsilonConfig.from_protection(args.l_star_pl, args.r_star)
        except ValueError as exc:
            raise CliError(EXIT_FORMAT, str(exc)) from None
    else:
        raise CliError(
            EXIT_FORMAT, "provide --epsilon, or --l-star with --r-star"
        )
    cell = _resolve_cell(args, spec)
    center = cell_center(spec, cell)
    samples = mech.planar_laplace_sample(center, config, rng, n=args.n)
    settings = {
        "command": "sample",
        "mechanism": "planar-laplace",
        "epsilon": repr(config.epsilon),
        "secret_cell": cell,
        "n": args.n,
        "rng": f"{GENERATOR_NAME} seed={args.seed}",
    }
    buf = _io.StringIO()
    buf.write(_meta_block(spec, settings))
    buf.write("lat,lon\n")
    for east, north in np.atleast_2d(samples):
        lat, lon = unproject(spec, PlanarPoint(float(east), float(north)))
        buf.write(f"{lat!r},{lon!r}\n")
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _quartiles(values: np.ndarray) -> tuple[float, float, float]:
    return (
        float(np.percentile(values, 25)),
        float(np.percentile(values, 50)),
        float(np.percentile(values, 75)),
    )


def cmd_eval(args: argparse.Namespace) -> int:
    graph = _load_metric(args.metric)
    spec = graph.grid
    records, skipped = evaluate.load_checkins(
        _require_file(args.checkins, "check-in file")
    )
    if skipped:
        print(f"warning: skipped {skipped} malformed check-in lines", file=sys.stderr)
    if not records:
        raise CliError(EXIT_EMPTY, "check-in file holds no usable records")

    if (args.region is None) == (args.rect is None):
        raise CliError(EXIT_FORMAT, "provide exactly one of --region or --rect")
    if args.region is not None:
        region = evaluate.load_region(_require_file(args.region, "region file"), spec)
    else:
        try:
            c0, r0, c1, r1 = (int(v) for v in args.rect.split(","))
            region = evaluate.rectangle_region(spec, c0, r0, c1, r1)
        except ValueError as exc:
            raise CliError(EXIT_FORMAT, f"bad --rect: {exc}") from None

    fence_idx = graph.fences.fence_index(spec.n_cells)
    allowed = graph.usable | (fence_idx >= 0)
    dropped = int((region & ~allowed).sum())
    if dropped:
        print(
            f"warning: {dropped} region cells are neither usable nor fenced; "
            "dropped from the region",
            file=sys.stderr,
        )
    region &= allowed
    if not region.any():
        raise CliError(EXIT_EMPTY, "region contains no usable or fenced cells")

    try:
        base_prior = evaluate.build_prior(records, spec, region)
    except ValueError as exc:
        raise CliError(EXIT_EMPTY, str(exc)) from None
    if args.min_checkins < 1:
        raise CliError(EXIT_FORMAT, "--min-checkins must be at least 1")
    user_priors: dict[str, evaluate.Prior] = {}
    user_counts: dict[str, int] = {}
    for user, recs in evaluate.group_by_user(records).items():
        cells = evaluate.snap_cells(recs, spec)
        n_inside = int(sum(1 for c in cells if c >= 0 and region[c]))
        if n_inside < args.min_checkins:
            continue
        user_priors[user] = evaluate.build_prior(recs, spec, region)
        user_counts[user] = n_inside
    if not user_priors:
        raise CliError(
            EXIT_EMPTY,
            f"no user reaches --min-checkins {args.min_checkins} inside the region",
        )

    secrets = np.flatnonzero(region)
    em = mech.exponential_mechanism(graph, secrets)
    euclidean = evaluate.LossSpec(kind="euclidean")
    binary = evaluate.LossSpec(kind="binary")
    em_utility = evaluate.utility(em, base_prior, euclidean)

    if args.pl_epsilon is not None:
        config = mech.EpsilonConfig(args.pl_epsilon)
        target = None
    else:
        target = em_utility if args.pl_target is None else args.pl_target
        try:
            config = evaluate.calibrate_pl(target, base_prior, euclidean)
        except ValueError as exc:
            raise CliError(EXIT_FORMAT, f"calibration failed: {exc}") from None
    pl = mech.planar_laplace_matrix(spec, config, secrets=secrets)
    pl_utility = evaluate.utility(pl, base_prior, euclidean)

    mechs = {"em": em, "pl": pl}
    losses = {"binary": binary, "euclidean": euclidean}
    per_user: dict[tuple[str, str], dict[str, float]] = {}
    population: dict[tuple[str, str], float] = {}
    for mname, mechanism in mechs.items():
        for lname, loss in losses.items():
            per_user[(mname, lname)] = evaluate.per_user_adv_error(
                mechanism, user_priors, base_prior, loss
            )
            population[(mname, lname)] = evaluate.adv_error_optimal(
                mechanism, base_prior, loss
            )

    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = {
        "command": "eval",
        "loss_calibration": "euclidean",
        "pl_epsilon": repr(config.epsilon),
        "pl_utility_target": "none" if target is None else repr(target),
        "n_users": len(user_priors),
        "n_checkins_in_region": sum(user_counts.values()),
    }

    users = sorted(user_priors)
    per_user_paths = []
    for (mname, lname), by_user in per_user.items():
        buf = _io.StringIO()
        buf.write(_meta_block(spec, settings))
        buf.write(f"# mechanism: {mname}\n# loss: {lname}\n")
        buf.write("user,n_checkins,adv_error\n")
        for user in users:
            buf.write(f"{user},{user_counts[user]},{by_user[user]!r}\n")
        path = out_dir / f"per_user_{mname}_{lname}.csv"
        atomic_write_text(path, buf.getvalue())
        per_user_paths.append(path)

    buf = _io.StringIO()
    buf.write(_meta_block(spec, settings))
    buf.write("mechanism,loss,statistic,value\n")
    summary_rows: list[tuple[str, str, str, float]] = []
    for (mname, lname), by_user in per_user.items():
        values = np.array([by_user[u] for u in users], dtype=np.float64)
        q1, med, q3 = _quartiles(values)
        summary_rows += [
            (mname, lname, "population_adv_error", population[(mname, lname)]),
            (mname, lname, "user_q1", q1),
            (mname, lname, "user_median", med),
            (mname, lname, "user_q3", q3),
        ]
    summary_rows += [
        ("em", "euclidean", "utility", em_utility),
        ("pl", "euclidean", "utility", pl_utility),
        ("pl", "euclidean", "epsilon", config.epsilon),
    ]
    for mname, lname, stat, value in summary_rows:
        buf.write(f"{mname},{lname},{stat},{value!r}\n")
    atomic_write_text(out_dir / "summary.csv", buf.getvalue())

    for lname, ylabel in (("binary", "adversary error"), ("euclidean",
                                                          "adversary error (m)")):
        groups = {
            name.upper(): [per_user[(name, lname)][u] for u in users]
            for name in ("em", "pl")
        }
        report.save_boxplot_png(
            groups,
            out_dir / f"adv_error_{lname}.png",
            f"Per-user adversary error, {lname} loss",
            ylabel,
        )

    print(
        f"eval: {len(users)} users, EM utility {em_utility:.1f} m, "
        f"PL utility {pl_utility:.1f} m at epsilon {config.epsilon:.6g}"
    )
    for (mname, lname), value in population.items():
        print(f"  {mname} {lname} population AdvError: {value:.4f}")
    for path in per_user_paths:
        print(f"wrote {path}")
    print(f"wrote {out_dir / 'summary.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# heatmap
# ---------------------------------------------------------------------------


def _em_error_raster(graph: metric.MetricGraph, chunk_size: int = 128) -> np.ndarray:
    """Expected Euclidean error of the exponential mechanism per usable
    cell; NaN elsewhere."""
    centers = all_cell_centers(graph.grid)
    out = np.full(graph.n_cells, np.nan)
    cells = np.flatnonzero(graph.usable)
    for lo in range(0, len(cells), chunk_size):
        batch = cells[lo : lo + chunk_size]
        dist = graph.distances_from(batch)
        weights = np.exp(-dist / 2.0)
        sums = weights.sum(axis=1)
        for k, cell in enumerate(batch):
            if sums[k] == 0:
                continue
            delta = centers - centers[cell]
            euclid = np.hypot(delta[:, 0], delta[:, 1])
            out[cell] = float((weights[k] / sums[k]) @ euclid)
    return out


def cmd_heatmap(args: argparse.Namespace) -> int:
    if args.quantity not in ("mass", "expected_error", "l_reach"):
        raise CliError(EXIT_FORMAT, f"unknown quantity {args.quantity!r}")

    if args.quantity == "mass":
        if args.mass is None:
            raise CliError(EXIT_FORMAT, "quantity 'mass' needs --mass")
        grid_mass = mass_mod.load_mass_csv(_require_file(args.mass, "mass file"))
        spec = grid_mass.grid
        values = grid_mass.values.astype(np.float64)
        units = "privacy mass"
    elif args.quantity == "expected_error":
        if args.metric is None:
            raise CliError(EXIT_FORMAT, "quantity 'expected_error' needs --metric")
        graph = _load_metric(args.metric)
        spec = graph.grid
        values = _em_error_raster(graph)
        units = "expected error (m)"
    else:
        if args.metric is None or args.mass is None:
            raise CliError(EXIT_FORMAT, "quantity 'l_reach' needs --metric and --mass")
        graph = _load_metric(args.metric)
        grid_mass = mass_mod.load_mass_csv(_require_file(args.mass, "mass file"), graph.grid)
        spec = graph.grid
        requirement = metric.Requirement(l_star=args.l_star)
        values = np.full(spec.n_cells, np.nan)
        fence_cells = graph.fences.all_cells()
        cells = np.array(
            sorted(set(range(spec.n_cells)) - set(int(c) for c in fence_cells)),
            dtype=np.int64,
        )
        values[cells] = metric.reach_levels(graph, grid_mass, requirement, cells=cells)
        units = "certified level"

    settings = {"command": "heatmap", "quantity": args.quantity}
    buf = _io.StringIO()
    buf.write(_meta_block(spec, settings))
    buf.write("col,row,value\n")
    for cell in range(spec.n_cells):
        col, row = spec.cell_colrow(cell)
        value = values[cell]
        text = "nan" if np.isnan(value) else repr(float(value))
        buf.write(f"{col},{row},{text}\n")
    atomic_write_text(args.output, buf.getvalue())

    png_path = Path(args.output).with_suffix(".png")
    report.save_raster_png(
        spec,
        values,
        png_path,
        f"{args.quantity} raster",
        units=units,
        mask=~np.isnan(values),
    )
    print(f"wrote {args.output}")
    print(f"wrote {png_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="geoelastic",
        description="Elastic location-privacy metrics: build, sample, evaluate.",
    )
    parser.add_argument("--config", help="key = value config file; flags override it")
    parser.add_argument(
        "--seed", type=int, default=0, help="seed for all randomness (numpy-pcg64)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mass", help="turn map quality into a privacy-mass grid")
    p.add_argument("--grid", required=True, help="grid spec file")
    p.add_argument("--quality", help="per-cell quality CSV")
    p.add_argument("--counts", help="per-cell category count CSV")
    p.add_argument("--weights", help="category weights, name=value[,name=value...]")
    p.add_argument("--r-small", type=float, default=300.0, help="protection radius, m")
    p.add_argument("--r-large", type=float, default=3000.0, help="coverage radius, m")
    p.add_argument("--calibration", help="cell list CSV for the quality average")
    p.add_argument("-o", "--output", required=True, help="mass CSV to write")
    p.set_defaults(func=cmd_mass)

    p = sub.add_parser("build", help="grow and audit the elastic metric")
    p.add_argument("--mass", required=True, help="mass CSV from the mass command")
    p.add_argument("--fences", help="fence rectangles or cell list CSV")
    p.add_argument("--l-star", type=float, default=LN2, help="requirement scale")
    p.add_argument("--l-top", type=float, default=metric.DEFAULT_L_TOP,
                   help="distinguishability cap")
    p.add_argument("--frame-fraction", type=float,
                   default=metric.DEFAULT_FRAME_FRACTION,
                   help="border band waived from the requirement")
    p.add_argument("--edges-csv", help="also write the edge list as CSV")
    p.add_argument("--audit-csv", help="also write audit violations as CSV")
    p.add_argument("-o", "--output", required=True, help="metric file to write")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("sample", help="draw sanitized locations for one secret")
    p.add_argument("--metric", help="metric file (exponential mechanism)")
    p.add_argument("--grid", help="grid spec (planar Laplace)")
    p.add_argument("--epsilon", type=float, help="planar Laplace rate, 1/m")
    p.add_argument("--l-star", dest="l_star_pl", type=float,
                   help="protection level (with --r-star)")
    p.add_argument("--r-star", type=float, help="protection radius, m")
    p.add_argument("--cell", type=int, help="secret cell index")
    p.add_argument("--lat", type=float, help="secret latitude")
    p.add_argument("--lon", type=float, help="secret longitude")
    p.add_argument("--n", type=int, default=1, help="number of reports")
    p.add_argument("-o", "--output", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="adversarial evaluation on check-in data")
    p.add_argument("--metric", required=True, help="metric file")
    p.add_argument("--checkins", required=True, help="tab-separated check-ins")
    p.add_argument("--region", help="region cell list CSV")
    p.add_argument("--rect", help="region rectangle col0,row0,col1,row1")
    p.add_argument("--pl-epsilon", type=float,
                   help="fixed planar Laplace rate (skips calibration)")
    p.add_argument("--pl-target", type=float,
                   help="calibrate planar Laplace to this utility in meters "
                        "(default: match the exponential mechanism)")
    p.add_argument("--min-checkins", type=int, default=1,
                   help="drop users with fewer in-region check-ins")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="per-cell raster of a derived quantity")
    p.add_argument("--quantity", required=True,
                   help="one of: mass, expected_error, l_reach")
    p.add_argument("--metric", help="metric file")
    p.add_argument("--mass", help="mass CSV")
    p.add_argument("--l-star", type=float, default=LN2,
                   help="requirement scale for l_reach")
    p.add_argument("-o", "--output", required=True, help="CSV to write "
                   "(PNG lands alongside)")
    p.set_defaults(func=cmd_heatmap)

    return parser, dict(sub.choices)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        _apply_config(parser, subparsers, args)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
