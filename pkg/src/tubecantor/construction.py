"""One randomized build-and-prune step: parents of side ``delta`` in, children of side ``epsilon`` out.

Pipeline: sample -> event checks -> grid pruning -> tube pruning -> spacing ->
thin-tube closure -> equalize -> epsilon.  Any failed event or blown budget
resamples with seed ``seed + retry``.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Cube, ContractError, subdivide_cube

CEIL_TOL = 1e-9
STAGES = ("P0", "P_tilde", "P")


def ceil_int(x: float) -> int:
    """Ceiling that treats values within ``CEIL_TOL`` of an integer as that integer."""
    r = round(x)
    if abs(x - r) <= CEIL_TOL * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


class ParameterError(ValueError):
    pass


class Resample(Exception):
    """A draw was rejected; the caller resamples with a fresh seed."""

    reason = "resample"

    def __init__(self, msg: str = ""):
        super().__init__(msg or self.reason)


class EventFailed(Resample):
    def __init__(self, event: str, msg: str = ""):
        self.reason = event
        super().__init__(msg or event)


class BudgetExceeded(Resample):
    reason = "tube_budget"


class DegenerateThinning(Resample):
    reason = "degenerate_thinning"


class InsufficientDensity(Resample):
    reason = "insufficient_density"


class ConstructionFailed(RuntimeError):
    def __init__(self, msg: str, diagnostics: dict):
        super().__init__(msg)
        self.diagnostics = diagnostics


# --------------------------------------------------------------------------- parameters


@dataclass(frozen=True)
class ConstructionParams:
    d: int
    s: float
    delta: float
    k: int
    A: int
    r: float
    m: int
    seed: int
    max_retries: int = 50
    margin: float = 0.0  # fraction of the parent side kept free of samples

    def __post_init__(self):
        if self.d < 2:
            raise ParameterError("dimension must be at least 2")
        if not (0 < self.s < self.d - 1):
            raise ParameterError(f"need 0 < s < d-1, got s={self.s}, d={self.d}")
        if not (0 < self.delta <= 1):
            raise ParameterError("delta must lie in (0, 1]")
        inv = self.delta ** (-self.s)
        if abs(inv - round(inv)) > CEIL_TOL * max(1.0, inv):
            raise ParameterError(f"delta^-s = {inv!r} is not an integer")
        if self.k * (self.d - 1 - self.s) - 2 * (self.d - 1) <= 0:
            raise ParameterError(f"k={self.k} too small: need k(d-1-s) > 2(d-1)")
        if int(self.A) != self.A or self.A < 2:
            raise ParameterError("A must be an integer >= 2")
        if self.r < 1:
            raise ParameterError("r must be >= 1")
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError("m must be a positive integer")
        if self.max_retries < 0:
            raise ParameterError("max_retries must be non-negative")
        if not (0 <= self.margin < 0.5):
            raise ParameterError("margin must lie in [0, 1/2)")

    @staticmethod
    def nominal_r(d: int, s: float, A: int) -> float:
        """Dilation from the a-priori side cap ``A**(1/s) / m`` (so ``cap * m = A**(1/s)``)."""
        cap_m = A ** (1.0 / s)
        return float(max(2 * cap_m, 1 + math.ceil(math.sqrt(d) * cap_m)))

    @property
    def parent_count(self) -> int:
        return int(round(self.delta ** (-self.s)))

    @property
    def n_points(self) -> int:
        return ceil_int(self.m**self.s)

    @property
    def cells_target(self) -> int:
        """``ceil((delta m)^s)``, the nominal number of grid cells and points per parent."""
        return ceil_int((self.delta * self.m) ** self.s)

    @property
    def grid_count(self) -> int:
        return ceil_int((self.delta * self.m) ** (self.s / self.d))

    @property
    def eta(self) -> float:
        return self.delta ** ((self.d - self.s) / self.d) * self.m ** (-self.s / self.d)

    @property
    def eta_grid(self) -> float:
        return self.delta / self.grid_count

    @property
    def spacing(self) -> float:
        return 5 * self.d * self.eta

    @property
    def budget(self) -> float:
        return self.cells_target / 8

    def with_seed(self, seed: int) -> "ConstructionParams":
        return ConstructionParams(**{**self.__dict__, "seed": int(seed)})


def tube_levels(params: ConstructionParams) -> list[tuple[float, float, int]]:
    """(beta, strip width, threshold) for each dyadic beta enforced by the tube pruning."""
    top = min(params.eta_grid, params.delta / params.r**2) * params.m
    out = []
    beta = 1.0
    while beta <= top * (1 + 1e-12):
        out.append((beta, 2 * params.r * beta / params.m, ceil_int(params.k * beta**params.s)))
        beta *= 2
    return out


def neighbour_cells(params: ConstructionParams) -> int:
    """Number of grid cells (the cell itself included) closer than the spacing to a given cell."""
    h = params.eta_grid
    reach = math.ceil(params.spacing / h) + 1
    rng = np.arange(-reach, reach + 1)
    grids = np.meshgrid(*([rng] * params.d), indexing="ij")
    gap = np.sqrt(sum(np.maximum(np.abs(g) - 1, 0) ** 2 for g in grids)) * h
    return int(np.sum(gap < params.spacing))


def equalize_floor(params: ConstructionParams) -> float:
    """Lower bound on surviving points per parent that greedy thinning can always keep."""
    return params.cells_target / (4 * params.A * neighbour_cells(params))


# --------------------------------------------------------------------------- families


@dataclass
class ParentFamily:
    centers: np.ndarray
    delta: float

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))

    @classmethod
    def from_cubes(cls, cubes: list[Cube]) -> "ParentFamily":
        if not cubes:
            raise ContractError("empty parent family")
        sides = {c.side for c in cubes}
        if len(sides) != 1:
            raise ContractError("parent cubes must share one side")
        return cls(np.array([c.center for c in cubes]), sides.pop())

    @classmethod
    def unit(cls, d: int) -> "ParentFamily":
        return cls(np.full((1, d), 0.5), 1.0)

    @property
    def cubes(self) -> list[Cube]:
        return [Cube(tuple(c), self.delta) for c in self.centers]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    def __len__(self) -> int:
        return self.centers.shape[0]

    @property
    def lo(self) -> np.ndarray:
        return self.centers - self.delta / 2

    def problems(self, s: float) -> list[str]:
        """Structural defects (count, containment, disjointness); empty when sound."""
        out = []
        target = self.delta ** (-s)
        if abs(len(self) - target) > CEIL_TOL * max(1.0, target):
            out.append(f"{len(self)} cubes but delta^-s = {target:.12g}")
        if np.any(self.centers - self.delta / 2 < -1e-12) or np.any(self.centers + self.delta / 2 > 1 + 1e-12):
            out.append("a cube leaves the unit cube")
        if len(self) > 1:
            i, j = np.triu_indices(len(self), 1)
            gap = np.max(np.abs(self.centers[i] - self.centers[j]), axis=1)
            if np.any(gap <= self.delta):
                out.append("two cubes intersect")
        return out


@dataclass
class PointCloud:
    points: np.ndarray
    parent: np.ndarray
    order: np.ndarray  # sampling index, used for every "first sampled wins" rule
    stage: str = "P0"

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, keep: np.ndarray, stage: str | None = None) -> "PointCloud":
        stage = stage or self.stage
        if STAGES.index(stage) < STAGES.index(self.stage):
            raise ContractError(f"stage cannot move back from {self.stage} to {stage}")
        return PointCloud(self.points[keep], self.parent[keep], self.order[keep], stage)

    def counts(self, n_parents: int) -> np.ndarray:
        return np.bincount(self.parent, minlength=n_parents)


@dataclass
class PrpLog:
    grid_removed: np.ndarray
    tube_removed_total: int = 0
    tube_removed_by_level: list = field(default_factory=list)
    spacing_removed: np.ndarray | None = None
    thin_removed: np.ndarray | None = None
    equalize_removed: np.ndarray | None = None
    budget: float = 0.0

    def as_dict(self) -> dict:
        def lst(a):
            return None if a is None else [int(x) for x in a]

        return {
            "grid_removed": lst(self.grid_removed),
            "tube_removed_total": int(self.tube_removed_total),
            "tube_removed_by_level": [[float(b), int(c)] for b, c in self.tube_removed_by_level],
            "spacing_removed": lst(self.spacing_removed),
            "thin_removed": lst(self.thin_removed),
            "equalize_removed": lst(self.equalize_removed),
            "budget": float(self.budget),
        }


@dataclass
class GenerationOutput:
    params: ConstructionParams  # seed is the one that was accepted
    centers: np.ndarray
    parent_ids: np.ndarray
    epsilon: float
    N: int
    eta: float
    eta_grid: float
    prp_log: PrpLog
    retries: int
    sample_order: np.ndarray
    failures: dict = field(default_factory=dict)

    @property
    def children(self) -> list[Cube]:
        return [Cube(tuple(c), self.epsilon) for c in self.centers]

    @property
    def family(self) -> ParentFamily:
        return ParentFamily(self.centers, self.epsilon)

    @property
    def points(self) -> PointCloud:
        return PointCloud(self.centers, self.parent_ids, self.sample_order, "P")


# --------------------------------------------------------------------------- pipeline steps


def draw_points(params: ConstructionParams, parents: ParentFamily, rng: np.random.Generator) -> PointCloud:
    if len(parents) == 0:
        raise ContractError("empty parent family")
    n = params.n_points
    which = rng.integers(len(parents), size=n)
    u = rng.random((n, parents.d))
    pad = params.margin * parents.delta
    pts = parents.lo[which] + pad + u * (parents.delta - 2 * pad)
    return PointCloud(pts, which.astype(np.int64), np.arange(n, dtype=np.int64), "P0")


def sample_points(params: ConstructionParams, parents: ParentFamily) -> PointCloud:
    """``ceil(m^s)`` i.i.d. points, uniform over the parents shrunk by the margin."""
    return draw_points(params, parents, np.random.default_rng(params.seed))


def grid_of_parent(R: Cube, params: ConstructionParams) -> list[Cube]:
    if abs(R.side - params.delta) > 1e-12 * params.delta:
        raise ContractError("grid parent must have side delta")
    return subdivide_cube(R, params.grid_count)


def cell_keys(cloud: PointCloud, parents: ParentFamily, params: ConstructionParams) -> np.ndarray:
    """Flat (parent, grid cell) key of each point; cells are half-open except at the far face."""
    g = params.grid_count
    rel = (cloud.points - parents.lo[cloud.parent]) / params.eta_grid
    idx = np.clip(np.floor(rel).astype(np.int64), 0, g - 1)
    flat = np.ravel_multi_index(tuple(idx.T), (g,) * params.d)
    return cloud.parent * g**params.d + flat


def _binom_sums(cloud, parents, params) -> np.ndarray:
    keys, counts = np.unique(cell_keys(cloud, parents, params), return_counts=True)
    per = np.zeros(len(parents))
    owner = keys // params.grid_count**params.d
    for o, c in zip(owner, counts):
        if c >= params.A:
            per[o] += math.comb(int(c), params.A)
    return per


def check_event_min_count(cloud: PointCloud, parents: ParentFamily, params: ConstructionParams) -> bool:
    return bool(cloud.counts(len(parents)).min() >= params.cells_target / 2)


def compute_XR(cloud: PointCloud, R: Cube, params: ConstructionParams) -> float:
    """Cluster statistic of one parent: ``(delta m)^-s`` times the A-subsets inside grid cells."""
    inside = np.all(np.abs(cloud.points - np.asarray(R.center)) <= R.side / 2, axis=1)
    one = ParentFamily(np.asarray([R.center]), R.side)
    sub = PointCloud(cloud.points[inside], np.zeros(int(inside.sum()), dtype=np.int64), cloud.order[inside])
    total = _binom_sums(sub, one, params)[0] if len(sub) else 0.0
    return float(total / (params.delta * params.m) ** params.s)


def xr_values(cloud: PointCloud, parents: ParentFamily, params: ConstructionParams) -> np.ndarray:
    return _binom_sums(cloud, parents, params) / (params.delta * params.m) ** params.s


def check_event_grid(cloud: PointCloud, parents: ParentFamily, params: ConstructionParams) -> bool:
    return bool(np.all(_binom_sums(cloud, parents, params) <= params.cells_target / 8))


def prp_grid(cloud: PointCloud, parents: ParentFamily, params: ConstructionParams):
    """Keep the first ``A - 1`` sampled points of every grid cell; returns (cloud, removed per parent)."""
    keys = cell_keys(cloud, parents, params)
    order = np.lexsort((cloud.order, keys))
    sk = keys[order]
    start = np.r_[0, np.flatnonzero(np.diff(sk)) + 1]
    rank = np.arange(len(sk)) - np.repeat(start, np.diff(np.r_[start, len(sk)]))
    keep = np.zeros(len(cloud), dtype=bool)
    keep[order[rank < params.A - 1]] = True
    removed = np.bincount(cloud.parent[~keep], minlength=len(parents))
    return cloud.subset(keep), removed


def _pair_line_thinning(pts: np.ndarray, alive: np.ndarray, radius: float, q: int) -> list[int]:
    """Higher-dimensional fallback: every line through two live points keeps < q live points within ``radius``.

    Any set inside some cylinder of radius ``radius / 2`` lies within ``radius``
    of the line through its two extreme points, so this also caps every
    cylinder of half that radius.
    """
    removed = []
    changed = True
    while changed:
        changed = False
        live = np.flatnonzero(alive)
        for a, b in itertools.combinations(live, 2):
            if not (alive[a] and alive[b]):
                continue
            u = pts[b] - pts[a]
            nrm = np.linalg.norm(u)
            if nrm == 0:
                continue
            u = u / nrm
            idx = np.flatnonzero(alive)
            v = pts[idx] - pts[a]
            dist = np.linalg.norm(v - np.outer(v @ u, u), axis=1)
            inside = dist <= radius + 1e-12
            if inside.sum() >= q:
                mem = idx[inside]
                dm = dist[inside]
                drop = np.lexsort((-mem, -dm))[: inside.sum() - q + 1]
                for t in mem[drop]:
                    alive[t] = False
                    removed.append(int(t))
                changed = True
    return removed


def prp_tubes(cloud: PointCloud, params: ConstructionParams, parents: ParentFamily | None = None,
              enforce_budget: bool = True):
    """Cap the points of every dilated thin tube, over all dyadic scales.

    For each level, every closed tube of width ``2 r beta / m`` ends with at most
    ``ceil(k beta^s) - 1`` points; this covers every representative tube of that
    width.  Returns (cloud, total removed, [(beta, removed)]).
    """
    levels = tube_levels(params)
    pts = np.ascontiguousarray(cloud.points)
    alive = np.ones(len(cloud), dtype=bool)
    per_level = np.zeros(len(levels), dtype=np.int64)
    if levels and len(cloud):
        widths = np.array([w for _, w, _ in levels])
        qs = np.array([q for _, _, q in levels], dtype=np.int64)
        if params.d == 2:
            limit = int(math.floor(params.budget)) if enforce_budget else -1
            hits = _kernels.enforce_strip_levels(pts, alive, widths, qs, _kernels.bucket_counts(widths), limit)
            for _, lv in hits:
                per_level[lv] += 1
        else:
            for lv, (_, w, q) in enumerate(levels):
                per_level[lv] = len(_pair_line_thinning(pts, alive, w, q))
    total = int(per_level.sum())
    log = [(b, int(c)) for (b, _, _), c in zip(levels, per_level)]
    if enforce_budget and total > params.budget:
        raise BudgetExceeded(f"tube pruning removed {total} > {params.budget:g}")
    return cloud.subset(alive, "P_tilde"), total, log


def enforce_spacing(cloud: PointCloud, params: ConstructionParams, n_parents: int | None = None):
    """Greedy thinning in sampling order to pairwise distance ``5 d eta``."""
    sp = params.spacing
    thr = sp - 1e-12
    order = np.argsort(cloud.order, kind="stable")
    buckets: dict = {}
    keep = np.zeros(len(cloud), dtype=bool)
    offs = list(itertools.product((-1, 0, 1), repeat=params.d))
    for i in order:
        p = cloud.points[i]
        cell = tuple(np.floor(p / sp).astype(np.int64))
        ok = True
        for o in offs:
            for j in buckets.get(tuple(c + e for c, e in zip(cell, o)), ()):
                if np.linalg.norm(cloud.points[j] - p) < thr:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            keep[i] = True
            buckets.setdefault(cell, []).append(i)
    P = n_parents if n_parents is not None else int(cloud.parent.max()) + 1
    removed = np.bincount(cloud.parent[~keep], minlength=P)
    out = cloud.subset(keep, "P")
    if np.any(out.counts(P) == 0):
        raise DegenerateThinning("a parent lost every point to spacing")
    return out, removed


def derive_epsilon(N: int, delta: float, s: float) -> float:
    if N < 1:
        raise ContractError("N must be positive")
    return delta * N ** (-1.0 / s)


def _rescue_last(pts, alive, stick_out, cloud, lo, eps, params) -> None:
    """Pull a parent's earliest point inward when every live point of that parent sticks out.

    Only done when the moved point keeps the spacing to all other live points;
    the point is then cleared from ``stick_out``.
    """
    doomed = np.flatnonzero(stick_out)
    safe = alive & ~stick_out
    for p in np.unique(cloud.parent[doomed]):
        if np.any(safe & (cloud.parent == p)):
            continue
        mine = doomed[cloud.parent[doomed] == p]
        i = mine[np.argmin(cloud.order[mine])]
        target = np.clip(pts[i], lo[i] + eps / 2, lo[i] + params.delta - eps / 2)
        others = np.flatnonzero(alive)
        others = others[others != i]
        if len(others) and np.linalg.norm(pts[others] - target, axis=1).min() < params.spacing - 1e-12:
            continue
        pts[i] = target
        stick_out[i] = False


def thin_closure(cloud: PointCloud, parents: ParentFamily, params: ConstructionParams):
    """Thin until every child cube fits in its parent and no width-``2 eps`` tube meets more than ``k`` of them.

    ``eps`` depends on the final per-parent count, so this iterates: with the
    current minimum count it fixes ``eps``, drops points closer than ``eps / 2``
    to their parent's boundary (a parent about to lose its last point has that
    point pulled inward instead), caps every band of width
    ``(2 + 2 sqrt d) eps`` (the centres of cubes met by a width-``2 eps`` tube,
    with room for the audit's inflated pair tubes) at ``k`` centres, and
    repeats until nothing moves.  Returns (cloud, removed per parent, eps).
    """
    P = len(parents)
    pts = np.array(cloud.points, dtype=float, order="C")
    alive = np.ones(len(cloud), dtype=bool)
    lo = parents.lo[cloud.parent]
    while True:
        counts = np.bincount(cloud.parent[alive], minlength=P)
        if counts.min() == 0:
            raise DegenerateThinning("a parent lost every point to the thin-tube closure")
        eps = derive_epsilon(int(counts.min()), params.delta, params.s)
        # distance from each point to the boundary of its own parent
        room = np.minimum(pts - lo, lo + params.delta - pts).min(axis=1)
        stick_out = alive & (room < eps / 2 - 1e-12)
        if stick_out.any():
            _rescue_last(pts, alive, stick_out, cloud, lo, eps, params)
            alive[stick_out] = False
            continue
        band = (2 + 2 * math.sqrt(params.d)) * eps
        if params.d == 2:
            gone = _kernels.enforce_strips(pts, alive, band, params.k + 1)
        else:
            gone = _pair_line_thinning(pts, alive, band, params.k + 1)
        if len(gone) == 0:
            break
    removed = np.bincount(cloud.parent[~alive], minlength=P)
    moved = PointCloud(pts, cloud.parent, cloud.order, cloud.stage)
    return moved.subset(alive), removed, eps


def equalize_counts(cloud: PointCloud, parents: ParentFamily, params: ConstructionParams):
    """Trim every parent to the smallest count, dropping the last-sampled points."""
    P = len(parents)
    counts = cloud.counts(P)
    N = int(counts.min())
    if N < max(1.0, equalize_floor(params)):
        raise InsufficientDensity(f"N={N} below the floor {equalize_floor(params):.3g}")
    assert N <= params.cells_target
    o = np.lexsort((cloud.order, cloud.parent))
    sp = cloud.parent[o]
    start = np.searchsorted(sp, np.arange(P))
    rank = np.arange(len(o)) - start[sp]
    keep = np.zeros(len(cloud), dtype=bool)
    keep[o[rank < N]] = True
    removed = counts - N
    return cloud.subset(keep, "P"), N, removed


def _attempt(params: ConstructionParams, parents: ParentFamily):
    cloud = sample_points(params, parents)
    if not check_event_min_count(cloud, parents, params):
        raise EventFailed("min_count")
    if not check_event_grid(cloud, parents, params):
        raise EventFailed("grid")
    cloud, grid_removed = prp_grid(cloud, parents, params)
    if np.any(grid_removed > params.budget):
        raise EventFailed("grid", "grid pruning over budget")
    cloud, tube_total, tube_log = prp_tubes(cloud, params, parents)
    cloud, spacing_removed = enforce_spacing(cloud, params, len(parents))
    cloud, thin_removed, _ = thin_closure(cloud, parents, params)
    cloud, N, eq_removed = equalize_counts(cloud, parents, params)
    eps = derive_epsilon(N, params.delta, params.s)
    o = np.lexsort((cloud.order, cloud.parent))
    log = PrpLog(grid_removed, tube_total, tube_log, spacing_removed, thin_removed, eq_removed, params.budget)
    return cloud.points[o], cloud.parent[o], cloud.order[o], N, eps, log


def build_generation(params: ConstructionParams, parents: ParentFamily) -> GenerationOutput:
    bad = parents.problems(params.s)
    if bad:
        raise ContractError("; ".join(bad))
    if abs(parents.delta - params.delta) > 1e-12 * params.delta:
        raise ContractError("parent side differs from delta")
    failures: Counter = Counter()
    for retry in range(params.max_retries + 1):
        trial = params.with_seed((params.seed + retry) % 2**64)
        try:
            centers, pid, order, N, eps, log = _attempt(trial, parents)
        except Resample as exc:
            failures[exc.reason] += 1
            continue
        return GenerationOutput(trial, centers, pid, eps, N, params.eta, params.eta_grid, log,
                                retry, order, dict(failures))
    worst = failures.most_common(1)[0][0] if failures else "none"
    raise ConstructionFailed(
        f"no acceptable sample in {params.max_retries + 1} draws (most frequent failure: {worst})",
        {"failures": dict(failures), "most_common": worst},
    )
