import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoelastic.grid import (
    EARTH_RADIUS_M,
    GridSpec,
    PlanarPoint,
    all_cell_centers,
    ball_offsets,
    cell_center,
    cell_center_latlon,
    cell_of,
    euclid_ball,
    euclidean,
    load_grid_spec,
    project,
    save_grid_spec,
    unproject,
)
from helpers import euclid_ball_oracle, make_spec


class TestGridSpec:
    def test_cell_count(self):
        assert make_spec(nx=7, ny=5).n_cells == 35

    def test_row_major_indexing(self):
        spec = make_spec(nx=10)
        assert spec.cell_index(3, 2) == 23
        assert spec.cell_colrow(23) == (3, 2)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(cell=0.0),
            dict(cell=-5.0),
            dict(nx=0),
            dict(ny=0),
            dict(lat=95.0),
            dict(lon=-200.0),
        ],
    )
    def test_invalid_parameters_rejected(self, kw):
        with pytest.raises(ValueError):
            make_spec(**kw)

    def test_spec_file_round_trip(self, tmp_path):
        spec = make_spec(nx=12, ny=9, cell=250.0, lat=-33.9, lon=18.4)
        path = tmp_path / "grid.txt"
        save_grid_spec(spec, path)
        assert load_grid_spec(path) == spec

    def test_spec_file_errors_carry_line_numbers(self, tmp_path):
        path = tmp_path / "grid.txt"
        path.write_text("origin_lat = 48.8\nnot a pair\n")
        with pytest.raises(ValueError, match=":2"):
            load_grid_spec(path)


class TestProjection:
    def test_origin_maps_to_origin(self):
        spec = make_spec()
        p = project(spec, spec.origin_lat, spec.origin_lon)
        assert p.east == 0.0 and p.north == 0.0

    def test_pure_north_displacement(self):
        spec = make_spec()
        delta = 0.02
        p = project(spec, spec.origin_lat + delta, spec.origin_lon)
        assert p.east == 0.0
        assert p.north == pytest.approx(EARTH_RADIUS_M * math.radians(delta), rel=1e-12)

    def test_east_displacement_at_center_latitude(self):
        # grid whose center latitude is exactly 48.85; going 0.01 degrees
        # east must give R * rad(0.01) * cos(48.85deg), evaluated
        # independently beforehand
        ny, cell = 10, 100.0
        origin_lat = 48.85 - math.degrees(0.5 * ny * cell / EARTH_RADIUS_M)
        spec = GridSpec(
            origin_lat=origin_lat, origin_lon=2.3, cell_size_m=cell, nx=10, ny=ny
        )
        p = project(spec, origin_lat, spec.origin_lon + 0.01)
        assert p.east == pytest.approx(731.6988707775796, abs=1e-6)

    def test_out_of_domain_rejected(self):
        spec = make_spec()
        with pytest.raises(ValueError):
            project(spec, 91.0, 0.0)
        with pytest.raises(ValueError):
            project(spec, 0.0, 180.5)

    def test_unproject_round_trip(self):
        spec = make_spec()
        lat, lon = unproject(spec, PlanarPoint(east=512.5, north=-40.0))
        p = project(spec, lat, lon)
        assert p.east == pytest.approx(512.5, abs=1e-9)
        assert p.north == pytest.approx(-40.0, abs=1e-9)

    def test_every_cell_center_maps_back(self):
        spec = make_spec(nx=6, ny=4)
        for cell in range(spec.n_cells):
            lat, lon = cell_center_latlon(spec, cell)
            assert cell_of(spec, project(spec, lat, lon)) == cell


class TestCellOf:
    def test_origin_point(self):
        assert cell_of(make_spec(), PlanarPoint(0.0, 0.0)) == 0

    def test_interior_point(self):
        assert cell_of(make_spec(nx=10), PlanarPoint(150.0, 50.0)) == 1

    def test_negative_point_is_off_grid(self):
        assert cell_of(make_spec(), PlanarPoint(-1.0, 0.0)) is None

    def test_east_boundary_belongs_to_next_cell(self):
        spec = make_spec(nx=10)
        assert cell_of(spec, PlanarPoint(100.0, 0.0)) == 1
        # the outer boundary is off-grid
        assert cell_of(spec, PlanarPoint(1000.0, 0.0)) is None

    def test_north_boundary_belongs_to_next_cell(self):
        spec = make_spec(nx=10, ny=10)
        assert cell_of(spec, PlanarPoint(0.0, 100.0)) == 10
        assert cell_of(spec, PlanarPoint(0.0, 1000.0)) is None


class TestEuclidean:
    def test_self_distance_zero(self):
        spec = make_spec()
        assert euclidean(spec, 42, 42) == 0.0

    def test_orthogonal_neighbors(self):
        spec = make_spec(nx=10)
        assert euclidean(spec, 0, 1) == pytest.approx(100.0)

    def test_diagonal_neighbors(self):
        spec = make_spec(nx=10)
        assert euclidean(spec, 0, 11) == pytest.approx(141.4213562373095)

    def test_invalid_cell_rejected(self):
        spec = make_spec(nx=3, ny=3)
        with pytest.raises(ValueError):
            euclidean(spec, 0, 9)

    @given(st.integers(0, 63), st.integers(0, 63))
    def test_symmetry_and_identity(self, a, b):
        spec = make_spec(nx=8, ny=8)
        assert euclidean(spec, a, b) == euclidean(spec, b, a)
        assert (euclidean(spec, a, b) == 0.0) == (a == b)


class TestEuclidBall:
    def test_radius_zero_is_singleton(self):
        spec = make_spec()
        assert list(euclid_ball(spec, 44, 0.0)) == [44]

    def test_interior_counts_match_enumeration(self):
        # 5 at r=100 (diagonal 141.4 excluded) and 13 at r=200, both
        # verified by the brute-force oracle
        spec = make_spec(nx=11, ny=11)
        center = spec.cell_index(5, 5)
        assert len(euclid_ball(spec, center, 100.0)) == 5
        assert len(euclid_ball(spec, center, 200.0)) == 13
        for r in (0.0, 100.0, 150.0, 200.0, 316.0):
            got = euclid_ball(spec, center, r)
            want = euclid_ball_oracle(spec, center, r)
            assert np.array_equal(got, want)

    def test_clipping_at_corner(self):
        spec = make_spec(nx=11, ny=11)
        got = euclid_ball(spec, 0, 200.0)
        want = euclid_ball_oracle(spec, 0, 200.0)
        assert np.array_equal(got, want)
        assert len(got) < 13

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            euclid_ball(make_spec(), 0, -1.0)
        with pytest.raises(ValueError):
            ball_offsets(100.0, -0.5)

    @given(st.floats(0.0, 400.0), st.floats(0.0, 400.0))
    def test_monotone_in_radius(self, r1, r2):
        spec = make_spec(nx=9, ny=9)
        lo, hi = sorted([r1, r2])
        small = set(euclid_ball(spec, 40, lo).tolist())
        large = set(euclid_ball(spec, 40, hi).tolist())
        assert small <= large

    def test_translation_invariance_for_interior_cells(self):
        spec = make_spec(nx=12, ny=12)
        sizes = {
            len(euclid_ball(spec, spec.cell_index(c, r), 200.0))
            for c in range(3, 9)
            for r in range(3, 9)
        }
        assert sizes == {13}

    def test_always_contains_center(self):
        spec = make_spec(nx=7, ny=7)
        for cell in range(spec.n_cells):
            assert cell in euclid_ball(spec, cell, 140.0)


class TestCenters:
    def test_cell_center_geometry(self):
        spec = make_spec(nx=10)
        p = cell_center(spec, spec.cell_index(2, 3))
        assert (p.east, p.north) == (250.0, 350.0)

    def test_all_cell_centers_agree(self):
        spec = make_spec(nx=5, ny=4)
        table = all_cell_centers(spec)
        for cell in range(spec.n_cells):
            p = cell_center(spec, cell)
            assert table[cell, 0] == p.east
            assert table[cell, 1] == p.north
