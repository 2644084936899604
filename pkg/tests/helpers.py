"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately avoid the package's own algorithms: the
shortest-path oracle is a plain heapq Dijkstra over an adjacency dict,
and the ball oracle enumerates lattice offsets directly.  Tests compare
package output against these, not against itself.
"""

import heapq
import math

import numpy as np

from geoelastic.grid import GridSpec
from geoelastic.mass import MassGrid, QualityGrid
from geoelastic.metric import FenceSet, MetricGraph, Requirement, build_elastic_graph

LN2 = math.log(2.0)


def make_spec(nx=10, ny=10, cell=100.0, lat=48.8, lon=2.3):
    return GridSpec(origin_lat=lat, origin_lon=lon, cell_size_m=cell, nx=nx, ny=ny)


def uniform_mass(spec, value):
    return MassGrid(grid=spec, values=np.full(spec.n_cells, float(value)))


def quality_from_dict(spec, mapping):
    values = np.zeros(spec.n_cells)
    for cell, q in mapping.items():
        values[cell] = q
    return QualityGrid(grid=spec, values=values)


def quick_build(spec, mass_value, l_top=2.0, frame_fraction=0.03, fences=None,
                l_star=LN2):
    mg = uniform_mass(spec, mass_value)
    return build_elastic_graph(
        mg,
        Requirement(l_star=l_star),
        l_top=l_top,
        frame_fraction=frame_fraction,
        fences=fences,
    )


def toy_graph(spec, edges, fences=None, usable=None, l_top=10.0):
    """MetricGraph straight from an edge list, no builder involved."""
    n = spec.n_cells
    if usable is None:
        usable = np.ones(n, dtype=bool)
    ex = np.array([e[0] for e in edges], dtype=np.uint32)
    ey = np.array([e[1] for e in edges], dtype=np.uint32)
    ew = np.array([e[2] for e in edges], dtype=np.float64)
    return MetricGraph(
        grid=spec,
        edge_x=ex,
        edge_y=ey,
        edge_w=ew,
        fences=fences if fences is not None else FenceSet(fences=()),
        usable=np.asarray(usable, dtype=bool),
        l_top=l_top,
        frame_fraction=0.0,
    )


def dijkstra_oracle(n, edges, source):
    """Plain heapq Dijkstra over an undirected edge list; returns a
    length-n distance array with inf for unreachable vertices."""
    adj = {}
    for x, y, w in edges:
        adj.setdefault(int(x), []).append((int(y), float(w)))
        adj.setdefault(int(y), []).append((int(x), float(w)))
    dist = [math.inf] * n
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = [False] * n
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in adj.get(u, ()):
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return np.array(dist)


def ball_count_oracle(radius, cell=100.0):
    """Closed-ball lattice count by direct enumeration."""
    reach = int(radius // cell) + 2
    n = 0
    for i in range(-reach, reach + 1):
        for j in range(-reach, reach + 1):
            if math.hypot(i * cell, j * cell) <= radius:
                n += 1
    return n


def euclid_ball_oracle(spec, cell, radius):
    """Grid-clipped closed ball by scanning every cell."""
    col0, row0 = cell % spec.nx, cell // spec.nx
    out = []
    for c in range(spec.n_cells):
        col, row = c % spec.nx, c // spec.nx
        d = math.hypot((col - col0) * spec.cell_size_m, (row - row0) * spec.cell_size_m)
        if d <= radius:
            out.append(c)
    return np.array(out, dtype=np.int64)


def all_pairs_distances(graph):
    """Full distance matrix for small graphs."""
    return graph.distances_from(np.arange(graph.n_cells, dtype=np.int64))
