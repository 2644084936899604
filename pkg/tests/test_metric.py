import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoelastic.mass import MassGrid
from geoelastic.metric import (
    AuditReport,
    FenceSet,
    MetricFormatError,
    MetricGraph,
    Requirement,
    audit_requirement,
    build_elastic_graph,
    candidate_offsets,
    deserialize,
    fenced_distance,
    frame_mask,
    frame_threshold_cells,
    load_fence_file,
    load_metric,
    reach_levels,
    save_metric,
    serialize,
)
from helpers import (
    LN2,
    all_pairs_distances,
    dijkstra_oracle,
    make_spec,
    quick_build,
    toy_graph,
    uniform_mass,
)


class TestRequirement:
    def test_req_values(self):
        r = Requirement(l_star=LN2)
        assert r.required_mass(0.0) == 0.0
        assert r.required_mass(LN2) == pytest.approx(1.0, rel=1e-12)
        assert r.required_mass(2 * LN2) == pytest.approx(4.0, rel=1e-12)

    def test_inverse_values(self):
        r = Requirement(l_star=LN2)
        assert r.level_for_mass(0.0) == 0.0
        assert r.level_for_mass(1.0) == pytest.approx(LN2, rel=1e-12)
        assert r.level_for_mass(4.0) == pytest.approx(2 * LN2, rel=1e-12)

    def test_negative_inputs_rejected(self):
        r = Requirement(l_star=1.0)
        with pytest.raises(ValueError):
            r.required_mass(-0.1)
        with pytest.raises(ValueError):
            r.level_for_mass(-0.1)

    def test_bad_l_star_rejected(self):
        for bad in (0.0, -1.0, math.inf, math.nan):
            with pytest.raises(ValueError):
                Requirement(l_star=bad)

    @given(st.floats(0.0, 100.0))
    def test_round_trip(self, m):
        r = Requirement(l_star=0.7)
        assert r.required_mass(r.level_for_mass(m)) == pytest.approx(m, abs=1e-9)


class TestFenceSet:
    def test_from_groups_sorts_and_orders(self):
        fs = FenceSet.from_groups([[9, 3], [1, 5]])
        assert fs.fences == ((1, 5), (3, 9))

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            FenceSet.from_groups([[1, 2], [2, 3]])

    def test_empty_fence_rejected(self):
        with pytest.raises(ValueError):
            FenceSet.from_groups([[1], []])

    def test_lookup(self):
        fs = FenceSet.from_groups([[1, 5], [3, 9]])
        assert fs.fence_of(5) == 0
        assert fs.fence_of(9) == 1
        assert fs.fence_of(2) is None
        idx = fs.fence_index(10)
        assert idx[1] == 0 and idx[3] == 1 and idx[0] == -1

    def test_star_edges_are_zero_weight(self):
        fs = FenceSet.from_groups([[4, 2, 8]])
        ex, ey, ew = fs.star_edges()
        assert len(ex) == 2
        assert np.all(ew == 0.0)
        assert set(ex) == {2}  # star centered on the lowest cell


class TestFencedDistance:
    def test_three_cases(self):
        fences = FenceSet.from_groups([[0, 1], [5, 6]])
        base = lambda x, y: 42.0
        assert fenced_distance(base, fences, 0, 1) == 0.0
        assert fenced_distance(base, fences, 0, 0) == 0.0
        assert fenced_distance(base, fences, 0, 3) == math.inf
        assert fenced_distance(base, fences, 3, 6) == math.inf
        assert fenced_distance(base, fences, 0, 5) == math.inf
        assert fenced_distance(base, fences, 3, 4) == 42.0


class TestFrame:
    def test_threshold_rounding(self):
        assert frame_threshold_cells(make_spec(nx=40, ny=40), 0.03) == 1
        assert frame_threshold_cells(make_spec(nx=100, ny=50), 0.03) == 3
        assert frame_threshold_cells(make_spec(nx=10, ny=10), 0.0) == 0

    def test_mask_shape(self):
        spec = make_spec(nx=6, ny=5)
        mask = frame_mask(spec, 0.2)  # threshold round(1.2) = 1
        grid = mask.reshape(5, 6)
        assert grid[0].all() and grid[-1].all()
        assert grid[:, 0].all() and grid[:, -1].all()
        assert not grid[1:-1, 1:-1].any()


class TestMetricGraphQueries:
    def spec3(self):
        return make_spec(nx=3, ny=1)

    def test_shortest_path_beats_direct_edge(self):
        g = toy_graph(self.spec3(), [(0, 1, 0.5), (1, 2, 0.7), (0, 2, 1.5)])
        assert g.distance(0, 2) == pytest.approx(1.2, rel=1e-12)
        assert g.distance(0, 0) == 0.0
        assert g.distance(2, 0) == g.distance(0, 2)

    def test_parallel_edges_collapse_to_lightest(self):
        g = toy_graph(self.spec3(), [(0, 1, 0.9), (0, 1, 0.3), (1, 0, 0.6)])
        assert g.distance(0, 1) == pytest.approx(0.3, rel=1e-12)

    def test_disconnected_distance_is_infinite(self):
        g = toy_graph(make_spec(nx=4, ny=1), [(0, 1, 0.5)])
        assert g.distance(0, 3) == math.inf

    def test_ball_examples(self):
        g = toy_graph(self.spec3(), [(0, 1, 0.5), (1, 2, 0.7)])
        assert list(g.ball(0, 0.0)) == [0]
        assert set(g.ball(0, 1.0).tolist()) == {0, 1}
        assert set(g.ball(0, 1.2).tolist()) == {0, 1, 2}

    def test_ball_of_fence_cell_at_zero(self):
        spec = make_spec(nx=4, ny=1)
        fences = FenceSet.from_groups([[1, 2, 3]])
        ex, ey, ew = fences.star_edges()
        g = toy_graph(
            spec, list(zip(ex, ey, ew)), fences=fences,
            usable=np.zeros(4, dtype=bool),
        )
        assert set(g.ball(2, 0.0).tolist()) == {1, 2, 3}

    def test_negative_level_rejected(self):
        g = toy_graph(self.spec3(), [(0, 1, 0.5)])
        with pytest.raises(ValueError):
            g.ball(0, -0.1)

    def test_bad_edges_rejected(self):
        spec = self.spec3()
        with pytest.raises(ValueError):
            toy_graph(spec, [(0, 5, 0.5)])
        with pytest.raises(ValueError):
            toy_graph(spec, [(0, 1, -0.5)])
        with pytest.raises(ValueError):
            toy_graph(spec, [(0, 1, 11.0)])  # above l_top

    @settings(max_examples=30)
    @given(st.lists(
        st.tuples(st.integers(0, 15), st.integers(0, 15), st.floats(0.0, 5.0)),
        max_size=40,
    ))
    def test_distances_match_heapq_oracle(self, edges):
        spec = make_spec(nx=4, ny=4)
        g = toy_graph(spec, edges, l_top=5.0)
        got = all_pairs_distances(g)
        for src in range(spec.n_cells):
            want = dijkstra_oracle(spec.n_cells, edges, src)
            finite = np.isfinite(want)
            assert np.array_equal(np.isfinite(got[src]), finite)
            assert np.allclose(got[src][finite], want[finite], rtol=1e-12, atol=0)


class TestCandidateOrder:
    def test_first_ring_is_counterclockwise_from_east(self):
        di, dj = candidate_offsets(9, 9)
        first = list(zip(di[:9].tolist(), dj[:9].tolist()))
        assert first[0] == (0, 0)
        assert first[1:5] == [(1, 0), (0, 1), (-1, 0), (0, -1)]
        assert first[5:9] == [(1, 1), (-1, 1), (-1, -1), (1, -1)]

    def test_sorted_by_distance(self):
        di, dj = candidate_offsets(12, 12)
        d2 = di.astype(np.int64) ** 2 + dj.astype(np.int64) ** 2
        assert np.all(np.diff(d2) >= 0)


class TestBuilder:
    def test_single_cell_complete_by_own_mass(self):
        spec = make_spec(nx=1, ny=1)
        req = Requirement(l_star=LN2)
        mg = uniform_mass(spec, req.required_mass(2.0) + 1.0)
        result = build_elastic_graph(mg, req, l_top=2.0, frame_fraction=0.0)
        assert result.graph.n_edges == 0
        assert result.complete.all()
        assert result.graph.usable.all()

    def test_uniform_build_is_audit_clean(self):
        spec = make_spec(nx=12, ny=12)
        result = quick_build(spec, 0.3)
        graph = result.graph
        assert graph.usable.sum() > 0
        mg = uniform_mass(spec, 0.3)
        report = audit_requirement(graph, mg, Requirement(l_star=LN2))
        assert report.ok, report.violations[:5]

    def test_build_determinism_bit_identical(self):
        spec = make_spec(nx=10, ny=10)
        blob1 = serialize(quick_build(spec, 0.2).graph)
        blob2 = serialize(quick_build(spec, 0.2).graph)
        assert blob1 == blob2

    def test_levels_monotone_under_larger_top(self):
        # raising l_top can only extend levels, never shrink them
        spec = make_spec(nx=8, ny=8)
        low = quick_build(spec, 0.4, l_top=1.0)
        high = quick_build(spec, 0.4, l_top=2.0)
        assert np.all(high.levels >= low.levels - 1e-12)

    def test_whole_grid_fence(self):
        spec = make_spec(nx=4, ny=4)
        fences = FenceSet.from_groups([list(range(16))])
        result = quick_build(spec, 0.3, fences=fences)
        graph = result.graph
        assert not graph.usable.any()
        assert np.all(graph.edge_w == 0.0)
        dist = all_pairs_distances(graph)
        assert np.all(dist == 0.0)

    def test_mass_starved_grid_terminates_with_incomplete_cells(self):
        spec = make_spec(nx=4, ny=4)
        result = quick_build(spec, 0.001, frame_fraction=0.0)
        assert not result.complete.all()
        assert result.stuck.any()
        assert not result.graph.usable[~result.complete].any()

    def test_fence_semantics_in_built_graph(self):
        spec = make_spec(nx=8, ny=8)
        f1 = [spec.cell_index(c, r) for c in (2, 3) for r in (2, 3)]
        f2 = [spec.cell_index(c, r) for c in (5, 6) for r in (5, 6)]
        fences = FenceSet.from_groups([f1, f2])
        result = quick_build(spec, 0.3, fences=fences)
        dist = all_pairs_distances(result.graph)
        outside = sorted(set(range(64)) - set(f1) - set(f2))
        for x in f1:
            for y in f1:
                assert dist[x, y] == 0.0
            for y in f2:
                assert dist[x, y] == math.inf
            for y in outside:
                assert dist[x, y] == math.inf

    def test_fence_cells_receive_no_weighted_edges(self):
        spec = make_spec(nx=8, ny=8)
        f1 = [spec.cell_index(c, r) for c in (2, 3) for r in (2, 3)]
        fences = FenceSet.from_groups([f1])
        graph = quick_build(spec, 0.3, fences=fences).graph
        in_fence = np.isin(graph.edge_x, f1) | np.isin(graph.edge_y, f1)
        assert np.all(graph.edge_w[in_fence] == 0.0)

    def test_edge_weights_bounded_by_top(self):
        graph = quick_build(make_spec(nx=9, ny=9), 0.25).graph
        assert np.all(graph.edge_w <= graph.l_top)
        assert np.all(graph.edge_w >= 0.0)

    def test_frame_fraction_range_enforced(self):
        spec = make_spec(nx=4, ny=4)
        mg = uniform_mass(spec, 0.3)
        req = Requirement(l_star=LN2)
        with pytest.raises(ValueError):
            build_elastic_graph(mg, req, frame_fraction=0.5)
        with pytest.raises(ValueError):
            build_elastic_graph(mg, req, l_top=0.0)


class TestPseudoMetricAxioms:
    def test_axioms_on_built_graph(self):
        result = quick_build(make_spec(nx=8, ny=8), 0.3)
        dist = all_pairs_distances(result.graph)
        # path sums accumulate in opposite orders from the two ends,
        # so symmetry holds to rounding, not bitwise
        assert np.allclose(dist, dist.T, rtol=0, atol=1e-12)
        assert np.all(np.diag(dist) == 0.0)
        n = dist.shape[0]
        for k in range(n):
            via = dist[:, k][:, None] + dist[k][None, :]
            assert np.all(dist <= via + 1e-12)


class TestAudit:
    def test_valid_build_passes_exact_audit(self):
        spec = make_spec(nx=10, ny=10)
        result = quick_build(spec, 0.3)
        mg = uniform_mass(spec, 0.3)
        report = audit_requirement(result.graph, mg, Requirement(l_star=LN2))
        assert report.ok
        assert report.n_cells == int(result.graph.usable.sum())

    def test_level_list_audit(self):
        spec = make_spec(nx=10, ny=10)
        result = quick_build(spec, 0.3)
        mg = uniform_mass(spec, 0.3)
        levels = [0.05 * k for k in range(1, 41)]
        report = audit_requirement(
            result.graph, mg, Requirement(l_star=LN2), levels=levels
        )
        assert report.ok

    def test_gutted_graph_fails_audit(self):
        spec = make_spec(nx=10, ny=10)
        result = quick_build(spec, 0.3)
        graph = result.graph
        gutted = MetricGraph(
            grid=graph.grid,
            edge_x=np.empty(0, dtype=np.uint32),
            edge_y=np.empty(0, dtype=np.uint32),
            edge_w=np.empty(0, dtype=np.float64),
            fences=graph.fences,
            usable=graph.usable,
            l_top=graph.l_top,
            frame_fraction=graph.frame_fraction,
        )
        mg = uniform_mass(spec, 0.3)
        report = audit_requirement(gutted, mg, Requirement(l_star=LN2))
        assert not report.ok
        assert len(report.violations) > 0

    def test_empty_cell_set_is_trivially_clean(self):
        spec = make_spec(nx=6, ny=6)
        result = quick_build(spec, 0.3)
        mg = uniform_mass(spec, 0.3)
        report = audit_requirement(
            result.graph, mg, Requirement(l_star=LN2), cells=[]
        )
        assert report.ok and report.n_checks == 0

    def test_violation_csv(self, tmp_path):
        from geoelastic.metric import AuditViolation

        report = AuditReport(
            violations=[AuditViolation(cell=3, level=0.5, required=0.52, achieved=0.4)],
            n_cells=1,
            n_checks=10,
            tolerance=1e-9,
        )
        path = tmp_path / "audit.csv"
        report.save_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "cell,level,required,achieved"
        assert lines[1].startswith("3,0.5,")

    def test_reach_levels_certify_usable_cells_to_top(self):
        spec = make_spec(nx=10, ny=10)
        result = quick_build(spec, 0.3)
        mg = uniform_mass(spec, 0.3)
        usable_cells = np.flatnonzero(result.graph.usable)
        reached = reach_levels(
            result.graph, mg, Requirement(l_star=LN2), cells=usable_cells
        )
        assert np.all(reached == result.graph.l_top)


class TestSerialization:
    def test_round_trip_identity(self):
        spec = make_spec(nx=8, ny=8)
        fences = FenceSet.from_groups([[9, 10], [20, 21, 28]])
        graph = quick_build(spec, 0.3, fences=fences).graph
        assert deserialize(serialize(graph)) == graph

    def test_file_round_trip(self, tmp_path):
        graph = quick_build(make_spec(nx=6, ny=6), 0.3).graph
        path = tmp_path / "m.bin"
        save_metric(graph, path)
        assert load_metric(path) == graph

    def test_empty_graph_round_trips(self):
        spec = make_spec(nx=2, ny=2)
        graph = toy_graph(spec, [], usable=np.zeros(4, dtype=bool))
        blob = serialize(graph)
        assert deserialize(blob) == graph

    def test_bad_magic_reports_offset_zero(self):
        blob = bytearray(serialize(quick_build(make_spec(nx=4, ny=4), 0.3).graph))
        blob[0] = 0x58
        with pytest.raises(MetricFormatError) as err:
            deserialize(bytes(blob))
        assert err.value.offset == 0

    def test_bad_version_reports_offset(self):
        blob = bytearray(serialize(quick_build(make_spec(nx=4, ny=4), 0.3).graph))
        blob[4] = 0xFF
        with pytest.raises(MetricFormatError) as err:
            deserialize(bytes(blob))
        assert err.value.offset == 4

    def test_truncation_detected(self):
        blob = serialize(quick_build(make_spec(nx=4, ny=4), 0.3).graph)
        with pytest.raises(MetricFormatError):
            deserialize(blob[: len(blob) // 2])

    def test_trailing_garbage_detected(self):
        blob = serialize(quick_build(make_spec(nx=4, ny=4), 0.3).graph)
        with pytest.raises(MetricFormatError):
            deserialize(blob + b"\x00")


class TestFenceFile:
    def test_cell_list_format(self, tmp_path):
        spec = make_spec(nx=5, ny=5)
        path = tmp_path / "fences.csv"
        path.write_text("fence_id,cell_index\n0,3\n0,4\n1,10\n")
        fs = load_fence_file(path, spec)
        assert fs.fences == ((3, 4), (10,))

    def test_rectangle_format_unions_per_id(self, tmp_path):
        spec = make_spec(nx=6, ny=6)
        path = tmp_path / "fences.csv"
        path.write_text(
            "fence_id,col_min,row_min,col_max,row_max\n"
            "a,0,0,1,0\n"
            "a,0,1,0,1\n"
        )
        fs = load_fence_file(path, spec)
        assert fs.fences == ((0, 1, 6),)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "fences.csv"
        path.write_text("id,cell\n0,1\n")
        with pytest.raises(ValueError, match=":1"):
            load_fence_file(path, make_spec())

    def test_out_of_grid_rectangle_rejected(self, tmp_path):
        path = tmp_path / "fences.csv"
        path.write_text("fence_id,col_min,row_min,col_max,row_max\nz,0,0,9,9\n")
        with pytest.raises(ValueError):
            load_fence_file(path, make_spec(nx=5, ny=5))
