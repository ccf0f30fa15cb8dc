"""Slow, obviously-correct reference computations used only by the tests."""
import itertools
import math

import numpy as np
from scipy.optimize import minimize_scalar


def line_box_distance(anchor, direction, center, side):
    """Distance from a line to a closed box by 1-d convex minimisation along the line."""
    a, u, c = (np.asarray(x, dtype=float) for x in (anchor, direction, center))
    h = side / 2

    def f(t):
        p = a + t * u
        return np.linalg.norm(np.maximum(np.abs(p - c) - h, 0.0))

    t0 = float(u @ (c - a))
    span = 4 * (np.linalg.norm(c - a) + side + 1)
    res = minimize_scalar(f, bounds=(t0 - span, t0 + span), method="bounded",
                          options={"xatol": 1e-13, "maxiter": 2000})
    return float(min(res.fun, f(t0)))


def sampled_line_distance(p, anchor, direction, n=100_000, span=10.0):
    ts = np.linspace(-span, span, n)
    pts = np.asarray(anchor)[None] + ts[:, None] * np.asarray(direction)[None]
    return float(np.min(np.linalg.norm(pts - np.asarray(p)[None], axis=1)))


def max_strip_bruteforce(pts, width, tol=1e-9):
    """Max number of planar points in a closed strip of the given width.

    An optimal strip can be moved until it has a point on one edge and either
    a second point on an edge or an arbitrary direction; critical normals come
    from pairs, so trying every pair (plus axis normals) is exhaustive.
    """
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    if n == 0:
        return 0
    normals = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    for i, j in itertools.combinations(range(n), 2):
        v = pts[j] - pts[i]
        D = np.linalg.norm(v)
        if D == 0:
            continue
        phi = math.atan2(v[1], v[0])
        # normals with n.v in {0, +w, -w}
        for target in (0.0, width, -width):
            if abs(target) > D:
                continue
            base = math.acos(target / D)
            for ang in (phi + base, phi - base):
                normals.append(np.array([math.cos(ang), math.sin(ang)]))
    best = 1
    for nrm in normals:
        proj = pts @ nrm
        for lo in proj:
            cnt = int(np.sum((proj >= lo - tol) & (proj <= lo + width + tol)))
            best = max(best, cnt)
    return best


def min_strip_width(pts):
    """Width of the thinnest strip containing all the planar points."""
    pts = np.asarray(pts, dtype=float)
    best = math.inf
    for i, j in itertools.combinations(range(len(pts)), 2):
        v = pts[j] - pts[i]
        D = np.linalg.norm(v)
        if D == 0:
            continue
        nrm = np.array([-v[1], v[0]]) / D
        proj = pts @ nrm
        best = min(best, float(proj.max() - proj.min()))
    return best


def cube_points_in_tube(anchor, direction, width, center, side, rng, n=100_000):
    """Rejection-sampling membership: does any sampled cube point (or corner) lie in the tube?"""
    d = len(center)
    c = np.asarray(center, dtype=float)
    pts = c + (rng.random((n, d)) - 0.5) * side
    corners = c + (np.array(list(itertools.product((-0.5, 0.5), repeat=d))) * side)
    pts = np.concatenate([pts, corners])
    v = pts - np.asarray(anchor)
    u = np.asarray(direction)
    dist = np.linalg.norm(v - np.outer(v @ u, u), axis=1)
    return bool(np.any(dist <= width / 2))
