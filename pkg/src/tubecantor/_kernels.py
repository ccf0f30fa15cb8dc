"""Planar strip-occupancy kernels.

A closed strip of width ``w`` holding a point set can always be slid sideways
until one of its points sits on a boundary line, so it suffices to look at
strips anchored at each point and rotate them.  For an anchor ``p`` and another
point at distance ``D`` and angle ``phi``, the angles ``theta`` of anchored strips
containing it form two arcs of half-width ``asin(w / D)``; the best strip is a
maximum-depth point of those arcs.

``enforce_strip_levels`` first bounds each anchor with bucketed arc counts and
only runs the exact sorted sweep over the few points that land in hot buckets.
``enforce_strips`` is the plain per-anchor loop, fine for small clouds.
"""
import math

import numba as nb
import numpy as np

TWO_PI = 2.0 * math.pi
EDGE_TOL = 1e-12


@nb.njit(cache=True)
def _add_arc(lo0, length, starts, ends, ns):
    lo = lo0 % TWO_PI
    hi = lo + length
    if hi > TWO_PI:
        starts[ns] = lo
        ends[ns] = TWO_PI
        starts[ns + 1] = 0.0
        ends[ns + 1] = hi - TWO_PI
        return ns + 2
    starts[ns] = lo
    ends[ns] = hi
    return ns + 1


@nb.njit(cache=True)
def _push_arcs(phi, c, starts, ends, ns):
    """Angles of anchored strips holding a point at angle ``phi``; ``c`` is width over distance."""
    if c >= 1.0:
        # the two arcs meet: one closed half-turn, counted once
        return _add_arc(phi - math.pi, math.pi, starts, ends, ns)
    a = math.asin(c)
    ns = _add_arc(phi - a, a, starts, ends, ns)
    return _add_arc(phi - math.pi, a, starts, ends, ns)


@nb.njit(cache=True)
def anchor_sweep(pts, alive, i, width):
    """Max number of live points in a width-``width`` strip with ``pts[i]`` on its edge.

    Returns (count, theta); the strip is ``0 <= nu . (x - pts[i]) <= width`` with
    ``nu = (-sin theta, cos theta)``.
    """
    n = pts.shape[0]
    starts = np.empty(4 * n)
    ends = np.empty(4 * n)
    ns = 0
    base = 1
    for k in range(n):
        if k == i or not alive[k]:
            continue
        dx = pts[k, 0] - pts[i, 0]
        dy = pts[k, 1] - pts[i, 1]
        D = math.hypot(dx, dy)
        if D == 0.0:
            base += 1
            continue
        ns = _push_arcs(math.atan2(dy, dx), (width + EDGE_TOL) / D, starts, ends, ns)
    if ns == 0:
        return base, 0.0
    s = np.sort(starts[:ns])
    e = np.sort(ends[:ns])
    depth = 0
    best = 0
    best_t = s[0]
    ia = 0
    ib = 0
    while ia < ns:
        if s[ia] <= e[ib]:
            depth += 1
            if depth > best:
                best = depth
                best_t = s[ia]
            ia += 1
        else:
            depth -= 1
            ib += 1
    return base + best, best_t


@nb.njit(cache=True)
def _arcs_sweep(pts, i, cand, nc, width):
    """Deepest point of the anchored arcs of ``cand[:nc]``; returns (depth, theta)."""
    starts = np.empty(4 * nc + 1)
    ends = np.empty(4 * nc + 1)
    ns = 0
    dup = 0
    for u in range(nc):
        k = cand[u]
        dx = pts[k, 0] - pts[i, 0]
        dy = pts[k, 1] - pts[i, 1]
        D = math.hypot(dx, dy)
        if D == 0.0:
            dup += 1
            continue
        ns = _push_arcs(math.atan2(dy, dx), (width + EDGE_TOL) / D, starts, ends, ns)
    if ns == 0:
        return dup, 0.0
    s = np.sort(starts[:ns])
    e = np.sort(ends[:ns])
    depth = 0
    best = 0
    best_t = s[0]
    ia = 0
    ib = 0
    while ia < ns:
        if s[ia] <= e[ib]:
            depth += 1
            if depth > best:
                best = depth
                best_t = s[ia]
            ia += 1
        else:
            depth -= 1
            ib += 1
    return dup + best, best_t


@nb.njit(cache=True, fastmath=True)
def _prepare_anchor(pts, alive, i, others, d2, pang):
    """Squared distances and diamond pseudo-angles (period 4) from anchor ``i``."""
    n = pts.shape[0]
    m = 0
    for k in range(n):
        if k == i or not alive[k]:
            continue
        dx = pts[k, 0] - pts[i, 0]
        dy = pts[k, 1] - pts[i, 1]
        others[m] = k
        d2[m] = dx * dx + dy * dy
        # diamond angle: monotone in the true angle with slope at most 1
        if dy >= 0.0:
            if dx >= 0.0:
                p = dy / (dx + dy) if dx + dy > 0.0 else 0.0
            else:
                p = 1.0 - dx / (dy - dx)
        else:
            if dx < 0.0:
                p = 2.0 - dy / (-dx - dy)
            else:
                p = 3.0 + dx / (dx - dy)
        pang[m] = p
        m += 1
    return m


@nb.njit(cache=True, fastmath=True)
def _level_candidates(m, others, d2, pang, width, q, nbuckets, counts, touched, lo_b, sp_b, cand):
    """Bucketed upper bound on anchored strips of one width; fills ``cand``.

    A point at distance ``D`` and angle ``phi`` lies in the anchored strip at
    angle ``theta`` iff ``theta`` is in ``[phi - a, phi]`` or ``[phi + pi, phi + pi + a]``
    with ``a = asin(w / D)``.  Both arcs are mapped through the pseudo-angle and
    widened to whole buckets, so a strip holds only points whose bucketed arcs
    contain its bucket.  Returns -1 if no bucket can reach ``q``; otherwise the
    number of candidates (points touching a hot bucket, plus close points).
    """
    b = 4.0 / nbuckets
    wl = width + EDGE_TOL
    dense = nbuckets <= 8 * m + 64
    if dense:
        for t in range(nbuckets + 1):
            counts[t] = 0
    near = 1
    nt = 0
    top = 0
    for u in range(m):
        if d2[u] <= 4.0 * wl * wl:
            near += 1
            lo_b[u] = -1
            continue
        # asin(w/D) <= w / sqrt(D^2 - w^2)
        a = wl / math.sqrt(d2[u] - wl * wl)
        lo = int(math.floor((pang[u] - a) / b))
        mid = int(math.floor(pang[u] / b))
        hi = int(math.floor((pang[u] + a) / b))
        if 2 * (hi - lo + 1) >= nbuckets:
            near += 1
            lo_b[u] = -1
            continue
        # first arc [phi - a, phi], second arc [phi + pi, phi + pi + a]
        lo_b[u] = lo % nbuckets
        sp_b[u, 0] = mid - lo
        sp_b[u, 1] = hi - mid
        for half in range(2):
            lo2 = lo if half == 0 else mid + nbuckets // 2
            hi2 = mid if half == 0 else hi + nbuckets // 2
            if dense:
                lm = lo2 % nbuckets
                hm = hi2 % nbuckets
                counts[lm] += 1
                counts[hm + 1] -= 1
                if lm > hm:
                    counts[0] += 1
                    counts[nbuckets] -= 1
            else:
                for bb in range(lo2, hi2 + 1):
                    j = bb % nbuckets
                    if counts[j] == 0:
                        touched[nt] = j
                        nt += 1
                    counts[j] += 1
                    if counts[j] > top:
                        top = counts[j]
    if dense:
        run = 0
        for t in range(nbuckets):
            run += counts[t]
            counts[t] = run
            if run > top:
                top = run
    nc = -1
    if near + top >= q:
        need = q - near
        if dense:
            acc = 0
            for t in range(nbuckets):
                touched[t] = acc
                if counts[t] >= need:
                    acc += 1
            touched[nbuckets] = acc
        nc = 0
        for u in range(m):
            hit = lo_b[u] < 0
            if not hit:
                lo = lo_b[u]
                for half in range(2):
                    if half == 0:
                        lo2 = lo
                        span = sp_b[u, 0]
                    else:
                        lo2 = lo + sp_b[u, 0] + nbuckets // 2
                        span = sp_b[u, 1]
                    if dense:
                        lm = lo2 % nbuckets
                        hm = (lo2 + span) % nbuckets
                        if lm <= hm:
                            hit = hit or touched[hm + 1] > touched[lm]
                        else:
                            hit = hit or touched[nbuckets] > touched[lm] or touched[hm + 1] > 0
                    else:
                        for bb in range(lo2, lo2 + span + 1):
                            if counts[bb % nbuckets] >= need:
                                hit = True
                                break
            if hit:
                cand[nc] = others[u]
                nc += 1
    if not dense:
        for t in range(nt):
            counts[touched[t]] = 0
    return nc


def bucket_counts(widths, scale: float = 1.0, cap: int = 1 << 23) -> np.ndarray:
    """Buckets per level so that one bucket spans about ``4 width / scale`` of pseudo-angle."""
    w = np.asarray(widths, dtype=float)
    out = np.minimum(np.maximum(64, np.ceil(scale / w)), cap).astype(np.int64)
    return out + (out % 2)


@nb.njit(cache=True)
def enforce_strip_levels(pts, alive, widths, qs, nbuckets, limit=-1):
    """Thin the live points so every closed strip of ``widths[l]`` holds fewer than ``qs[l]``.

    Anchors are visited in index order, and at each anchor the levels in the
    given order.  Inside an overfull strip the members farthest from its
    central line go first, ties to the later-sampled point.  Removing points
    never creates an overfull strip, so a single pass is complete.  Returns
    (removed index, level) pairs in removal order; with ``limit >= 0`` it stops
    early once more than ``limit`` points are gone.
    """
    n = pts.shape[0]
    L = widths.shape[0]
    bmax = 0
    for lv in range(L):
        bmax = max(bmax, nbuckets[lv])
    counts = np.zeros(bmax + 1, dtype=np.int64)
    touched = np.empty(bmax + 1, dtype=np.int64)
    others = np.empty(n, dtype=np.int64)
    d2 = np.empty(n)
    pang = np.empty(n)
    lo_b = np.empty(n, dtype=np.int64)
    sp_b = np.empty((n, 2), dtype=np.int64)
    cand = np.empty(n, dtype=np.int64)
    removed = []
    for i in range(n):
        if not alive[i]:
            continue
        m = _prepare_anchor(pts, alive, i, others, d2, pang)
        lv = 0
        while lv < L and alive[i]:
            nc = _level_candidates(m, others, d2, pang, widths[lv], qs[lv], nbuckets[lv],
                                   counts, touched, lo_b, sp_b, cand)
            if nc >= 0:
                depth, theta = _arcs_sweep(pts, i, cand, nc, widths[lv])
                if depth + 1 >= qs[lv]:
                    for k in _drop_from_strip(pts, alive, i, theta, widths[lv], qs[lv]):
                        removed.append((k, lv))
                    if limit >= 0 and len(removed) > limit:
                        return removed
                    m = _prepare_anchor(pts, alive, i, others, d2, pang)
                    continue
            lv += 1
    return removed


@nb.njit(cache=True)
def enforce_strips(pts, alive, width, q):
    """Single-width convenience wrapper around the anchor loop (exact sweeps only)."""
    removed = []
    for i in range(pts.shape[0]):
        for k in enforce_anchor(pts, alive, i, width, q):
            removed.append(k)
    return removed


@nb.njit(cache=True)
def _strip_members(pts, alive, i, theta, width):
    n = pts.shape[0]
    nx = -math.sin(theta)
    ny = math.cos(theta)
    idx = np.empty(n, dtype=np.int64)
    off = np.empty(n)
    m = 0
    for k in range(n):
        if not alive[k]:
            continue
        o = (pts[k, 0] - pts[i, 0]) * nx + (pts[k, 1] - pts[i, 1]) * ny
        if o >= -EDGE_TOL and o <= width + EDGE_TOL:
            idx[m] = k
            off[m] = abs(o - width / 2)
            m += 1
    return idx[:m], off[:m]


@nb.njit(cache=True)
def _drop_from_strip(pts, alive, i, theta, width, q):
    idx, off = _strip_members(pts, alive, i, theta, width)
    m = idx.shape[0]
    nrem = min(m, max(1, m - q + 1))
    # larger offset first, then larger index
    order = np.argsort(-off, kind="mergesort")
    j = 0
    while j < m:
        t = j
        while t + 1 < m and off[order[t + 1]] == off[order[j]]:
            t += 1
        if t > j:
            seg = order[j:t + 1].copy()
            o2 = np.argsort(-idx[seg])
            for u in range(seg.shape[0]):
                order[j + u] = seg[o2[u]]
        j = t + 1
    out = np.empty(nrem, dtype=np.int64)
    for u in range(nrem):
        out[u] = idx[order[u]]
        alive[out[u]] = False
    return out


@nb.njit(cache=True)
def enforce_anchor(pts, alive, i, width, q):
    """Thin every strip anchored at ``pts[i]`` below ``q`` points; returns removed indices."""
    removed = []
    while alive[i]:
        c, theta = anchor_sweep(pts, alive, i, width)
        if c < q:
            break
        for k in _drop_from_strip(pts, alive, i, theta, width, q):
            removed.append(k)
    return removed


@nb.njit(cache=True)
def max_strip(pts, alive, width):
    """(count, anchor, theta) of the fullest width-``width`` strip."""
    best = 0
    bi = -1
    bt = 0.0
    for i in range(pts.shape[0]):
        if not alive[i]:
            continue
        c, t = anchor_sweep(pts, alive, i, width)
        if c > best:
            best = c
            bi = i
            bt = t
    return best, bi, bt
