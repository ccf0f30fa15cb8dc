"""Probability bookkeeping for the construction, plus Monte Carlo checks of its events."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .construction import (
    ConstructionParams,
    ParentFamily,
    check_event_grid,
    draw_points,
    prp_grid,
    prp_tubes,
    xr_values,
)

M_CAP = 2**40
MAIN_THRESHOLD = 0.1


class BoundError(ValueError):
    """The bound is unusable for these inputs (k too small or m too small)."""


@dataclass(frozen=True)
class BoundInputs:
    d: int
    s: float
    k: int
    delta: float
    m: float
    C_abs: float = 1.0

    def __post_init__(self):
        if not self.d - 1 - self.s > 0:
            raise ValueError("need s < d - 1")
        if self.C_abs <= 0 or self.delta <= 0 or self.m <= 0:
            raise ValueError("C_abs, delta and m must be positive")

    @property
    def D(self) -> float:
        return math.e * self.C_abs * self.delta ** (self.s - self.d + 1)

    @property
    def decay(self) -> float:
        """Exponent of ``1/m`` in the leading term: ``s k (d - 1 - s) / d``."""
        return self.s * self.k * (self.d - 1 - self.s) / self.d

    def at(self, m: float) -> "BoundInputs":
        return replace(self, m=m)


def _k_ok(k: int, d: int, s: float) -> bool:
    return k * (d - 1 - s) - 2 * (d - 1) > 0 and s * (1 - 2 / d) - s * k * (d - 1 - s) / d < 0


def select_k(d: int, s: float) -> int:
    """Smallest k making both the subset exponent and the geometric decay positive."""
    if not (0 < s < d - 1):
        raise ValueError(f"need 0 < s < d - 1, got s={s}, d={d}")
    k = 1
    while not _k_ok(k, d, s):
        k += 1
    return k


def tube_point_probability(inputs: BoundInputs, beta: float) -> float:
    if not (1 <= beta <= inputs.m):
        raise ValueError("need 1 <= beta <= m")
    d, s = inputs.d, inputs.s
    raw = inputs.C_abs * inputs.k * inputs.delta ** (s - d + 1) * (beta / inputs.m) ** (d - 1)
    return min(1.0, raw)


def expected_cluster_bound(inputs: BoundInputs, beta: float) -> float:
    """Bound on the expected number of ``k beta^s``-subsets caught by dilated thin tubes."""
    q = inputs.k * beta**inputs.s
    if q < 1:
        raise ValueError("k beta^s must be at least 1")
    expo = q * (inputs.d - 1 - inputs.s) - 2 * (inputs.d - 1)
    if expo <= 0 and beta < inputs.m:
        raise BoundError(f"exponent {expo:.4g} <= 0: k is too small")
    return float(math.exp(q * math.log(inputs.D) + expo * math.log(beta / inputs.m)))


def dyadic_range(inputs: BoundInputs) -> np.ndarray:
    """Dyadic ``beta`` with ``beta / m`` at most ``delta^((d-s)/d) m^(-s/d)``."""
    d, s = inputs.d, inputs.s
    top = inputs.delta ** ((d - s) / d) * inputs.m ** (1 - s / d)
    if top < 1:
        return np.zeros(0)
    return 2.0 ** np.arange(int(math.floor(math.log2(top) + 1e-12)) + 1)


def closed_form_cluster_bound(inputs: BoundInputs) -> float:
    """Geometric-series overestimate of the dyadic sum (needs ratio < 1)."""
    d, s = inputs.d, inputs.s
    x = inputs.D**inputs.k * inputs.m ** (-inputs.decay)
    if x >= 1:
        raise BoundError(f"geometric ratio {x:.4g} >= 1: m is too small")
    mult = math.ceil(1 / s)  # dyadic beta sharing one value of floor(beta^s)
    lead = mult * inputs.D**inputs.k * inputs.m ** (-inputs.decay + s * (1 - 2 / d))
    return float(lead / (1 - x) * inputs.m**s)


@dataclass(frozen=True)
class ClusterTotal:
    direct: float
    closed_form: float
    terms: np.ndarray


def total_cluster_bound(inputs: BoundInputs) -> ClusterTotal:
    closed = closed_form_cluster_bound(inputs)
    betas = dyadic_range(inputs)
    terms = np.array([expected_cluster_bound(inputs, b) for b in betas])
    return ClusterTotal(float(terms.sum()), closed, terms)


def _m_ok(inputs: BoundInputs, m: int) -> bool:
    at = inputs.at(m)
    try:
        tot = total_cluster_bound(at).direct
    except BoundError:
        return False
    return tot < (at.delta * m) ** at.s / 100


def choose_m(inputs: BoundInputs, floor_m: int = 1) -> int:
    """Smallest ``m >= floor_m`` whose direct dyadic sum is below ``(delta m)^s / 100``."""
    lo, hi = None, max(1, int(floor_m))
    while not _m_ok(inputs, hi):
        lo = hi
        hi *= 2
        if hi > M_CAP:
            raise BoundError("no m below 2^40 satisfies the cluster bound")
    if lo is None:
        return hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _m_ok(inputs, mid):
            hi = mid
        else:
            lo = mid
    return hi


# --------------------------------------------------------------------------- Monte Carlo


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("TUBECANTOR_THREADS", "1")))
    except ValueError:
        return 1


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def _run_trials(fn, trials: int):
    n = worker_count()
    if n == 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(n) as ex:
        return list(ex.map(fn, range(trials)))


@dataclass
class MainClaimReport:
    trials: int
    frequency: float
    values: np.ndarray
    histogram: tuple = field(default_factory=tuple)
    threshold: float = MAIN_THRESHOLD


def montecarlo_mainclaim(params: ConstructionParams, trials: int,
                         parents: ParentFamily | None = None) -> MainClaimReport:
    """Frequency of ``max_R X_R >= 1/10`` over independent fresh samples."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    parents = parents if parents is not None else ParentFamily.unit(params.d)

    def one(t):
        cloud = draw_points(params, parents, trial_rng(params.seed, t))
        return float(xr_values(cloud, parents, params).max())

    vals = np.array(_run_trials(one, trials))
    edges = np.linspace(0, max(0.5, float(vals.max()) * 1.0001), 21)
    counts, _ = np.histogram(vals, edges)
    return MainClaimReport(trials, float(np.mean(vals >= MAIN_THRESHOLD)), vals, (counts, edges))


@dataclass
class EventReport:
    trials: int
    passes: dict
    with_tubes: bool

    @property
    def frequencies(self) -> dict:
        return {k: v / self.trials for k, v in self.passes.items()}


def montecarlo_events(params: ConstructionParams, trials: int, parents: ParentFamily | None = None,
                      with_tubes: bool = True) -> EventReport:
    """Pass counts of the min-count event, the grid-cluster event and (optionally) the tube budget."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    parents = parents if parents is not None else ParentFamily.unit(params.d)

    def one(t):
        cloud = draw_points(params, parents, trial_rng(params.seed, t))
        counts = cloud.counts(len(parents))
        ok5 = bool(counts.min() >= params.cells_target / 2)
        ok4a = check_event_grid(cloud, parents, params)
        okt = None
        if with_tubes:
            thinned, _ = prp_grid(cloud, parents, params)
            _, total, _ = prp_tubes(thinned, params, parents, enforce_budget=False)
            okt = total <= params.budget
        return ok5, ok4a, okt

    res = _run_trials(one, trials)
    passes = {"min_count": sum(r[0] for r in res), "grid": sum(r[1] for r in res)}
    if with_tubes:
        passes["tube_budget"] = sum(r[2] for r in res)
    return EventReport(trials, passes, with_tubes)
