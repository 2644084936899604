"""Inner loop of the elastic graph builder.

This is a single sequential thread of control over shared mutable graph
state: vertices are swept in row-major order, and an edge added for one
vertex is visible to every vertex processed after it, within the same
sweep.  Everything here is deterministic; two runs over the same inputs
produce the same edge list in the same order.

The hot path is a weight-bounded Dijkstra per pending vertex per sweep,
so the whole function is written against the numba-compatible subset of
numpy and JIT-compiled when numba is available.
"""

from __future__ import annotations

import numpy as np

from ._compat import njit


@njit(cache=True)
def run_build(
    nx: int,
    ny: int,
    mass: np.ndarray,
    is_fence: np.ndarray,
    l_star: float,
    l_top: float,
    frame_cells: int,
    off_di: np.ndarray,
    off_dj: np.ndarray,
    seed_x: np.ndarray,
    seed_y: np.ndarray,
    seed_w: np.ndarray,
):
    """Grow the elastic graph until every vertex certifies the level cap.

    Args:
        nx, ny: Grid extent; vertices are row-major cell indices.
        mass: Per-cell privacy mass, strictly positive.
        is_fence: Per-cell fence membership; fence cells start at the cap
            and are never candidates.
        l_star: Level at which one unit of mass is required.
        l_top: Level cap; a vertex is complete once it certifies l_top.
        frame_cells: Width of the border band, in cells.  The build stops
            when only band vertices remain incomplete.
        off_di, off_dj: Lattice offsets sorted by (distance, angle from
            east counterclockwise); the shared candidate order.
        seed_x, seed_y, seed_w: Pre-existing edges (fence stars), added to
            the graph and the edge log before the first sweep.

    Returns:
        Tuple of (edge_x, edge_y, edge_w, levels, complete, stuck,
        n_iterations).  The edge arrays list the full undirected edge
        multiset in insertion order, seeds first.
    """
    n = nx * ny
    n_off = off_di.shape[0]
    n_seed = seed_x.shape[0]

    # Adjacency: linked lists over directed half-edges.
    ecap = 4 * n + 2 * n_seed + 16
    eto = np.empty(ecap, np.int32)
    ewt = np.empty(ecap, np.float64)
    enx = np.empty(ecap, np.int64)
    head = np.full(n, -1, np.int64)
    n_half = 0

    # Undirected edge log in insertion order.
    rcap = 2 * n + n_seed + 16
    rx = np.empty(rcap, np.int32)
    ry = np.empty(rcap, np.int32)
    rw = np.empty(rcap, np.float64)
    n_rec = 0

    # Dijkstra scratch.  Stamps avoid clearing per-call arrays.
    dist = np.empty(n, np.float64)
    dstamp = np.zeros(n, np.int64)
    sstamp = np.zeros(n, np.int64)
    stamp = 0
    hd = np.empty(1024, np.float64)
    hn = np.empty(1024, np.int32)
    ball = np.empty(n, np.int32)

    levels = np.zeros(n, np.float64)
    complete = np.zeros(n, np.bool_)
    stuck = np.zeros(n, np.bool_)
    cursor = np.zeros(n, np.int64)

    for k in range(n_seed):
        a = seed_x[k]
        b = seed_y[k]
        w = seed_w[k]
        if n_half + 2 > eto.shape[0]:
            ncap = eto.shape[0] * 2
            t1 = np.empty(ncap, np.int32)
            t1[:n_half] = eto[:n_half]
            eto = t1
            t2 = np.empty(ncap, np.float64)
            t2[:n_half] = ewt[:n_half]
            ewt = t2
            t3 = np.empty(ncap, np.int64)
            t3[:n_half] = enx[:n_half]
            enx = t3
        eto[n_half] = b
        ewt[n_half] = w
        enx[n_half] = head[a]
        head[a] = n_half
        n_half += 1
        eto[n_half] = a
        ewt[n_half] = w
        enx[n_half] = head[b]
        head[b] = n_half
        n_half += 1
        rx[n_rec] = a
        ry[n_rec] = b
        rw[n_rec] = w
        n_rec += 1

    # Initial levels: what each cell certifies on its own.
    for v in range(n):
        if is_fence[v]:
            levels[v] = l_top
            complete[v] = True
        else:
            lv = l_star * np.sqrt(mass[v])
            if lv >= l_top:
                levels[v] = l_top
                complete[v] = True
            else:
                levels[v] = lv

    n_iter = 0
    while True:
        pending = 0
        pending_interior = 0
        for v in range(n):
            if complete[v] or stuck[v]:
                continue
            pending += 1
            col = v % nx
            row = v // nx
            border = min(min(col, row), min(nx - 1 - col, ny - 1 - row))
            if border >= frame_cells:
                pending_interior += 1
        if pending == 0 or pending_interior == 0:
            break
        n_iter += 1

        for v in range(n):
            if complete[v] or stuck[v]:
                continue

            # Bounded Dijkstra from v.  Phase one collects the closed ball
            # at the current level; its mass fixes the raised level, and the
            # same search then continues out to the raised cap so the
            # candidate test below can consult exact ball membership.
            stamp += 1
            cap = levels[v]
            raised = False
            done = False
            nball = 0
            nheap = 1
            hd[0] = 0.0
            hn[0] = v
            dist[v] = 0.0
            dstamp[v] = stamp
            while nheap > 0:
                d = hd[0]
                u = hn[0]
                nheap -= 1
                hd[0] = hd[nheap]
                hn[0] = hn[nheap]
                i = 0
                while True:
                    c1 = 2 * i + 1
                    if c1 >= nheap:
                        break
                    c2 = c1 + 1
                    c = c1
                    if c2 < nheap and hd[c2] < hd[c1]:
                        c = c2
                    if hd[c] < hd[i]:
                        td = hd[i]
                        hd[i] = hd[c]
                        hd[c] = td
                        tn = hn[i]
                        hn[i] = hn[c]
                        hn[c] = tn
                        i = c
                    else:
                        break

                if d > cap:
                    if raised:
                        break
                    # Everything within the original level is settled; its
                    # mass determines how far the level rises.
                    raised = True
                    srt = np.sort(ball[:nball])
                    msum = 0.0
                    for t in range(srt.shape[0]):
                        msum += mass[srt[t]]
                    lv = l_star * np.sqrt(msum)
                    if lv >= l_top:
                        done = True
                        break
                    if lv > cap:
                        cap = lv
                    if d > cap:
                        break
                if sstamp[u] == stamp:
                    continue
                if d > dist[u]:
                    continue
                sstamp[u] = stamp
                ball[nball] = u
                nball += 1
                e = head[u]
                while e != -1:
                    t = eto[e]
                    ndist = d + ewt[e]
                    if ndist <= l_top and (dstamp[t] != stamp or ndist < dist[t]):
                        dist[t] = ndist
                        dstamp[t] = stamp
                        if nheap >= hd.shape[0]:
                            ncap = hd.shape[0] * 2
                            t1 = np.empty(ncap, np.float64)
                            t1[:nheap] = hd[:nheap]
                            hd = t1
                            t2 = np.empty(ncap, np.int32)
                            t2[:nheap] = hn[:nheap]
                            hn = t2
                        j = nheap
                        hd[j] = ndist
                        hn[j] = t
                        nheap += 1
                        while j > 0:
                            p = (j - 1) >> 1
                            if hd[p] <= hd[j]:
                                break
                            td = hd[p]
                            hd[p] = hd[j]
                            hd[j] = td
                            tn = hn[p]
                            hn[p] = hn[j]
                            hn[j] = tn
                            j = p
                    e = enx[e]

            if not raised and not done:
                # Heap drained inside the original level: the settled set is
                # everything reachable at all, so it is also the raised ball.
                raised = True
                srt = np.sort(ball[:nball])
                msum = 0.0
                for t in range(srt.shape[0]):
                    msum += mass[srt[t]]
                lv = l_star * np.sqrt(msum)
                if lv >= l_top:
                    done = True
                elif lv > cap:
                    cap = lv

            if done:
                levels[v] = l_top
                complete[v] = True
                continue
            levels[v] = cap

            # Nearest-by-geodistance candidate: advance this vertex's cursor
            # past fence cells and cells already inside the raised ball; the
            # cursor never backs up, so consumed cells stay consumed.
            col = v % nx
            row = v // nx
            cand = -1
            cur = cursor[v]
            while cur < n_off:
                c = col + off_di[cur]
                r = row + off_dj[cur]
                cur += 1
                if c < 0 or c >= nx or r < 0 or r >= ny:
                    continue
                u = r * nx + c
                if is_fence[u]:
                    continue
                if sstamp[u] == stamp:
                    continue
                cand = u
                break
            cursor[v] = cur
            if cand < 0:
                # Consumed the whole grid without reaching the cap: the
                # component simply lacks the mass.  Permanently incomplete.
                stuck[v] = True
                continue

            if n_half + 2 > eto.shape[0]:
                ncap = eto.shape[0] * 2
                t1 = np.empty(ncap, np.int32)
                t1[:n_half] = eto[:n_half]
                eto = t1
                t2 = np.empty(ncap, np.float64)
                t2[:n_half] = ewt[:n_half]
                ewt = t2
                t3 = np.empty(ncap, np.int64)
                t3[:n_half] = enx[:n_half]
                enx = t3
            w = levels[v]
            eto[n_half] = cand
            ewt[n_half] = w
            enx[n_half] = head[v]
            head[v] = n_half
            n_half += 1
            eto[n_half] = v
            ewt[n_half] = w
            enx[n_half] = head[cand]
            head[cand] = n_half
            n_half += 1
            if n_rec + 1 > rx.shape[0]:
                ncap = rx.shape[0] * 2
                t1 = np.empty(ncap, np.int32)
                t1[:n_rec] = rx[:n_rec]
                rx = t1
                t4 = np.empty(ncap, np.int32)
                t4[:n_rec] = ry[:n_rec]
                ry = t4
                t2 = np.empty(ncap, np.float64)
                t2[:n_rec] = rw[:n_rec]
                rw = t2
            rx[n_rec] = v
            ry[n_rec] = cand
            rw[n_rec] = w
            n_rec += 1

    return (
        rx[:n_rec].copy(),
        ry[:n_rec].copy(),
        rw[:n_rec].copy(),
        levels,
        complete,
        stuck,
        n_iter,
    )
