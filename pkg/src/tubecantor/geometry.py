"""Cubes, tubes and the finite tube families used to make "every tube" claims checkable.

A tube of width ``w`` is the closed ``w/2``-neighbourhood of a line.  Cubes are
closed and axis-aligned.  Every predicate here resolves ties at ``ATOL`` towards
"intersecting", which is the conservative side for the occupancy audits.

Scalar helpers (``distance_point_to_line`` ...) take the small value types; the
bulk helpers (``line_box_distances`` ...) take plain numpy arrays and are what
the construction and the verifier actually run on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ATOL = 1e-12
UNIT_TOL = 1e-12

Point = tuple[float, ...]


class ContractError(ValueError):
    """An argument violates the documented precondition of a geometric primitive."""


def _as_point(p: Sequence[float]) -> Point:
    return tuple(float(x) for x in p)


@dataclass(frozen=True)
class Cube:
    center: Point
    side: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        if not self.side > 0:
            raise ContractError(f"cube side must be positive, got {self.side}")
        if len(self.center) < 1:
            raise ContractError("cube needs at least one coordinate")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - self.side / 2

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + self.side / 2

    @property
    def diameter(self) -> float:
        return self.side * math.sqrt(self.d)

    def contains_point(self, p: Sequence[float], tol: float = ATOL) -> bool:
        off = np.abs(np.asarray(p, dtype=float) - np.asarray(self.center))
        return bool(np.all(off <= self.side / 2 + tol))

    def contains_cube(self, other: "Cube", tol: float = ATOL) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    @classmethod
    def unit(cls, d: int) -> "Cube":
        return cls((0.5,) * d, 1.0)


@dataclass(frozen=True)
class Tube:
    anchor: Point
    direction: Point
    width: float

    def __post_init__(self):
        object.__setattr__(self, "anchor", _as_point(self.anchor))
        object.__setattr__(self, "direction", _as_point(self.direction))
        if len(self.anchor) != len(self.direction):
            raise ContractError("anchor and direction dimensions differ")
        if not self.width > 0:
            raise ContractError(f"tube width must be positive, got {self.width}")
        norm = math.sqrt(sum(x * x for x in self.direction))
        if abs(norm - 1.0) > UNIT_TOL:
            raise ContractError(f"tube direction must be a unit vector (norm {norm!r})")

    @property
    def d(self) -> int:
        return len(self.anchor)

    @classmethod
    def through(cls, p: Sequence[float], q: Sequence[float], width: float) -> "Tube":
        """Tube of the given width whose central line passes through ``p`` and ``q``."""
        p = np.asarray(p, dtype=float)
        v = np.asarray(q, dtype=float) - p
        n = np.linalg.norm(v)
        if n == 0:
            raise ContractError("p and q coincide; the line is undefined")
        return cls(tuple(p), tuple(v / n), width)


@dataclass
class RepresentativeFamily:
    """Width-``2 tau`` tubes covering the clip of every width-``tau`` tube to the unit cube.

    Stored as arrays; ``tubes`` materialises ``Tube`` objects on demand.
    """

    width_parameter: float
    anchors: np.ndarray
    directions: np.ndarray
    direction_step: float
    offset_step: float
    c_rep: float = field(init=False)

    def __post_init__(self):
        d = self.anchors.shape[1]
        self.c_rep = len(self) * self.width_parameter ** (2 * (d - 1))

    @property
    def width(self) -> float:
        return 2.0 * self.width_parameter

    def __len__(self) -> int:
        return self.anchors.shape[0]

    @property
    def tubes(self) -> list[Tube]:
        w = self.width
        return [Tube(tuple(a), tuple(u), w) for a, u in zip(self.anchors, self.directions)]


# --------------------------------------------------------------------------- scalar primitives


def distance_point_to_line(p: Sequence[float], t: Tube) -> float:
    u = np.asarray(t.direction, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
        raise ContractError("direction is not a unit vector")
    v = np.asarray(p, dtype=float) - np.asarray(t.anchor, dtype=float)
    perp = v - np.dot(v, u) * u
    return float(np.linalg.norm(perp))


def point_in_tube(p: Sequence[float], t: Tube) -> bool:
    return distance_point_to_line(p, t) <= t.width / 2 + ATOL


def scale_tube(t: Tube, h: float) -> Tube:
    """Same central line, width multiplied by ``h``."""
    if not h > 0:
        raise ContractError(f"scale factor must be positive, got {h}")
    return Tube(t.anchor, t.direction, h * t.width)


def line_cube_distance(t: Tube, c: Cube) -> float:
    d = line_box_distances(
        np.asarray([t.anchor]), np.asarray([t.direction]), np.asarray([c.center]), c.side
    )
    return float(d[0, 0])


def tube_cube_intersects(t: Tube, c: Cube) -> bool:
    if t.d != c.d:
        raise ContractError("tube and cube dimensions differ")
    return line_cube_distance(t, c) <= t.width / 2 + ATOL


def subdivide_cube(R: Cube, g: int) -> list[Cube]:
    """The ``g**d`` closed grid cells of ``R``, row-major with the last axis fastest."""
    if int(g) != g or g < 1:
        raise ContractError(f"grid count must be a positive integer, got {g}")
    g = int(g)
    side = R.side / g
    lo = R.lo
    cells = []
    for idx in np.ndindex(*([g] * R.d)):
        center = lo + (np.asarray(idx) + 0.5) * side
        cells.append(Cube(tuple(center), side))
    return cells


# --------------------------------------------------------------------------- bulk primitives


def normals_2d(directions: np.ndarray) -> np.ndarray:
    return np.stack([-directions[:, 1], directions[:, 0]], axis=1)


def point_line_distances(points: np.ndarray, anchors: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Distances, shape (lines, points)."""
    v = points[None, :, :] - anchors[:, None, :]
    along = np.einsum("lpd,ld->lp", v, directions)
    sq = np.einsum("lpd,lpd->lp", v, v) - along**2
    return np.sqrt(np.maximum(sq, 0.0))


def line_box_distances(
    anchors: np.ndarray, directions: np.ndarray, centers: np.ndarray, side
) -> np.ndarray:
    """Exact Euclidean distance from each line to each closed axis-aligned box.

    Returns shape (lines, boxes).  ``side`` is a scalar or one side per box.
    In the plane the distance to a line is an affine function of the point, so it
    is minimised at the box support value.  In higher dimension the squared
    distance along the line is a convex piecewise quadratic in the line parameter
    whose pieces are cut where a coordinate crosses a face; every piece is solved
    in closed form.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    half = np.broadcast_to(np.asarray(side, dtype=float) / 2, (centers.shape[0],))
    d = anchors.shape[1]
    if d == 2:
        nrm = normals_2d(directions)
        off = np.einsum("ld,ld->l", nrm, anchors)
        proj = nrm @ centers.T
        support = np.abs(nrm).sum(axis=1)[:, None] * half[None, :]
        return np.maximum(np.abs(proj - off[:, None]) - support, 0.0)
    return _line_box_distances_nd(anchors, directions, centers, half)


def _line_box_distances_nd(anchors, directions, centers, half):
    L, d = anchors.shape
    C = centers.shape[0]
    p = anchors[:, None, :] - centers[None, :, :]  # (L, C, d)
    u = np.broadcast_to(directions[:, None, :], p.shape)
    h = half[None, :, None]

    def f(t):
        x = np.abs(p + t[..., None] * u) - h
        return np.sum(np.maximum(x, 0.0) ** 2, axis=-1)

    with np.errstate(divide="ignore", invalid="ignore"):
        bp = np.concatenate([(h - p) / u, (-h - p) / u], axis=-1)
    # axes the line never crosses contribute a constant; park their cuts at +inf
    bp = np.sort(np.where(np.isfinite(bp), bp, np.inf), axis=-1)
    pad_lo = np.full((L, C, 1), -np.inf)
    pad_hi = np.full((L, C, 1), np.inf)
    edges = np.concatenate([pad_lo, bp, pad_hi], axis=-1)

    best = np.full((L, C), np.inf)
    for k in range(2 * d + 1):
        lo, hi = edges[..., k], edges[..., k + 1]
        valid = ~(np.isinf(lo) & (lo > 0))
        both = np.isinf(lo) & np.isinf(hi)
        mid = np.where(
            both, 0.0,
            np.where(np.isinf(lo), hi - 1.0, np.where(np.isinf(hi), lo + 1.0, 0.5 * (lo + hi))),
        )
        mid = np.where(valid, mid, 0.0)
        # on a piece the set of violated faces is fixed, so the minimiser is explicit
        x = p + mid[..., None] * u
        sigma = np.where(x > h, 1.0, np.where(x < -h, -1.0, 0.0))
        den = np.sum(np.where(sigma != 0, u * u, 0.0), axis=-1)
        num = np.sum(np.where(sigma != 0, sigma * u * h - u * p, 0.0), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ts = np.where(den > 0, num / np.where(den > 0, den, 1.0), mid)
        ts = np.where(valid, np.clip(ts, lo, hi), 0.0)
        best = np.where(valid, np.minimum(best, f(ts)), best)
    return np.sqrt(best)


def count_boxes_met(
    anchors: np.ndarray, directions: np.ndarray, widths, centers: np.ndarray, side
) -> np.ndarray:
    """Number of closed boxes met by each tube (one width per tube or a scalar)."""
    if len(centers) == 0:
        return np.zeros(len(anchors), dtype=int)
    out = np.empty(len(anchors), dtype=int)
    widths = np.broadcast_to(np.asarray(widths, dtype=float), (len(anchors),))
    chunk = max(1, 2_000_000 // max(1, len(centers) * (4 if anchors.shape[1] > 2 else 1)))
    for s in range(0, len(anchors), chunk):
        sl = slice(s, s + chunk)
        dist = line_box_distances(anchors[sl], directions[sl], centers, side)
        out[sl] = np.sum(dist <= widths[sl, None] / 2 + ATOL, axis=1)
    return out


def random_lines(rng: np.random.Generator, n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Lines through a uniform point of the unit cube with a uniform direction."""
    anchors = rng.random((n, d))
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return anchors, dirs


def pair_lines(centers: np.ndarray, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Distinct lines through pairs of distinct points, deduplicated up to ``tol``."""
    centers = np.asarray(centers, dtype=float)
    n = len(centers)
    if n < 2:
        d = centers.shape[1] if centers.ndim == 2 else 0
        return np.zeros((0, d)), np.zeros((0, d))
    i, j = np.triu_indices(n, k=1)
    v = centers[j] - centers[i]
    norm = np.linalg.norm(v, axis=1)
    keep = norm > 0
    i, v, norm = i[keep], v[keep], norm[keep]
    u = v / norm[:, None]
    # direction up to sign: first component that is clearly nonzero is made positive
    lead = np.argmax(np.abs(u) > tol, axis=1)
    sign = np.sign(u[np.arange(len(u)), lead])
    u = u * sign[:, None]
    a = centers[i]
    foot = a - np.einsum("nd,nd->n", a, u)[:, None] * u
    key = np.round(np.concatenate([u, foot], axis=1) / tol).astype(np.int64)
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    return foot[first], u[first]


def candidate_worst_tubes(centers: Sequence[Sequence[float]], w: float) -> list[Tube]:
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 2 or len(centers) < 2:
        return []
    anchors, dirs = pair_lines(centers)
    return [Tube(tuple(a), tuple(u), w) for a, u in zip(anchors, dirs)]


# --------------------------------------------------------------------------- representative tubes


def _orthonormal_complement(u: np.ndarray) -> np.ndarray:
    """Rows spanning the orthogonal complement of the unit vector ``u``."""
    d = len(u)
    q, _ = np.linalg.qr(np.column_stack([u, np.eye(d)[:, : d - 1] + 0.0]), mode="complete")
    basis = q[:, 1:].T
    # QR may return a rank-deficient start when u is aligned with e_1; fall back on SVD.
    if not np.allclose(basis @ u, 0.0, atol=1e-10):
        _, _, vt = np.linalg.svd(u[None, :])
        basis = vt[1:]
    return basis


def _family_directions(tau: float, d: int) -> tuple[np.ndarray, float]:
    if d == 2:
        step = tau / 2
        n = math.ceil(math.pi / step)
        ang = np.arange(n) * (math.pi / n)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), math.pi / n
    # cube-sphere grid on the faces x_i = +1; spacing bounds sin(angle) by step*sqrt(d-1)/2
    step = tau / math.sqrt(d * (d - 1))
    ticks = np.linspace(-1.0, 1.0, math.ceil(2.0 / step) + 1)
    out = []
    for axis in range(d):
        for rest in np.ndindex(*([len(ticks)] * (d - 1))):
            v = np.empty(d)
            v[axis] = 1.0
            v[[a for a in range(d) if a != axis]] = ticks[list(rest)]
            out.append(v / np.linalg.norm(v))
    return np.asarray(out), float(ticks[1] - ticks[0])


def _family_offsets(tau: float, d: int) -> tuple[np.ndarray, float]:
    ostep = tau / (2 * math.sqrt(d - 1))
    bound = math.sqrt(d) / 2 + tau
    nt = math.ceil(bound / ostep)
    ticks = np.arange(-nt, nt + 1) * ostep
    grid = np.asarray(list(np.ndindex(*([len(ticks)] * (d - 1)))))
    offs = ticks[grid]  # (G, d-1)
    if d > 2:
        # keep only offsets inside the covering ball (plus slack for rounding)
        offs = offs[np.linalg.norm(offs, axis=1) <= bound + ostep * math.sqrt(d - 1)]
    return offs, ostep


def representative_constant(tau: float, d: int) -> float:
    """``len(family) * tau^(2(d-1))`` without materialising the family's anchors."""
    if d == 2:
        n_dirs = math.ceil(math.pi / (tau / 2))
    else:
        n_dirs = d * (math.ceil(2.0 / (tau / math.sqrt(d * (d - 1)))) + 1) ** (d - 1)
    return n_dirs * len(_family_offsets(tau, d)[0]) * tau ** (2 * (d - 1))


def representative_tubes(tau: float, d: int) -> RepresentativeFamily:
    """Finite family of width-``2 tau`` tubes covering every width-``tau`` tube in the unit cube.

    Directions come from a grid fine enough that any line direction is within a
    small angle of a grid direction; offsets from a grid on each direction's
    orthogonal complement, centred on the cube centre.  Offset step and angular
    step are chosen so that the drift over the cube's half-diagonal plus the
    offset rounding plus ``tau/2`` stays below ``tau``.
    """
    if not (0 < tau <= 1):
        raise ContractError(f"tau must lie in (0, 1], got {tau}")
    if d < 2:
        raise ContractError("dimension must be at least 2")
    dirs, dstep = _family_directions(tau, d)
    offs, ostep = _family_offsets(tau, d)
    center = np.full(d, 0.5)
    anchors = []
    directions = []
    for u in dirs:
        basis = _orthonormal_complement(u) if d > 2 else np.array([[-u[1], u[0]]])
        anchors.append(center + offs @ basis)
        directions.append(np.broadcast_to(u, (len(offs), d)))
    return RepresentativeFamily(
        width_parameter=float(tau),
        anchors=np.concatenate(anchors),
        directions=np.ascontiguousarray(np.concatenate(directions)),
        direction_step=dstep,
        offset_step=ostep,
    )


def max_family_occupancy_2d(
    directions: np.ndarray, offset_step: float, width: float, centers: np.ndarray, side: float
) -> tuple[int, tuple[np.ndarray, np.ndarray] | None]:
    """Max number of boxes met by a width-``width`` tube whose axis lies on a family grid.

    The grid is every direction in ``directions`` and every offset ``l * offset_step``
    measured from the unit-cube centre.  Counting is done per direction on the offset
    axis, so huge families never get materialised.
    """
    if len(centers) == 0:
        return 0, None
    nrm = normals_2d(directions)
    rel = centers - 0.5
    proj = nrm @ rel.T  # (D, C)
    reach = width / 2 + (side / 2) * np.abs(nrm).sum(axis=1)[:, None] + ATOL
    lo = np.ceil((proj - reach) / offset_step).astype(np.int64)
    hi = np.floor((proj + reach) / offset_step).astype(np.int64)
    best, witness = 0, None
    base = lo.min()
    span = int(hi.max() - base + 2)
    for k in range(len(directions)):
        diff = np.zeros(span + 1, dtype=np.int64)
        ok = hi[k] >= lo[k]
        np.add.at(diff, lo[k][ok] - base, 1)
        np.add.at(diff, hi[k][ok] - base + 1, -1)
        cnt = np.cumsum(diff)
        j = int(np.argmax(cnt))
        if cnt[j] > best:
            best = int(cnt[j])
            off = (j + base) * offset_step
            witness = (np.array([0.5, 0.5]) + off * nrm[k], directions[k].copy())
    return best, witness


def _clip_halfplane(poly: list[np.ndarray], normal: np.ndarray, bound: float) -> list[np.ndarray]:
    """Keep the part of a convex polygon with ``normal . x <= bound``."""
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp, fq = normal @ p - bound, normal @ q - bound
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            out.append(p + (fp / (fp - fq)) * (q - p))
    return out


def strip_square_clip(t: Tube) -> np.ndarray:
    """Vertices of the closed planar tube ``t`` intersected with ``[0,1]^2`` (possibly empty)."""
    if t.d != 2:
        raise ContractError("strip clipping is planar only")
    nrm = np.array([-t.direction[1], t.direction[0]])
    off = float(nrm @ np.asarray(t.anchor))
    poly = [np.array(v, dtype=float) for v in ((0, 0), (1, 0), (1, 1), (0, 1))]
    poly = _clip_halfplane(poly, nrm, off + t.width / 2)
    if poly:
        poly = _clip_halfplane(poly, -nrm, -(off - t.width / 2))
    return np.asarray(poly).reshape(-1, 2)


def covering_representative(fam: RepresentativeFamily, vertices: np.ndarray) -> int:
    """Index of a family member containing every vertex, or -1."""
    if len(vertices) == 0:
        return 0
    dist = point_line_distances(vertices, fam.anchors, fam.directions)
    ok = np.all(dist <= fam.width / 2 + ATOL, axis=1)
    hit = np.flatnonzero(ok)
    return int(hit[0]) if len(hit) else -1
