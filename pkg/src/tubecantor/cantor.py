"""Nested generations of cubes and the measure-style diagnostics computed on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import BoundInputs, choose_m, select_k
from .construction import (
    ConstructionFailed,
    ConstructionParams,
    ParentFamily,
    build_generation,
)
from .geometry import ATOL, Tube, line_box_distances


@dataclass(frozen=True)
class CantorSchedule:
    d: int
    s: float
    seed: int
    n_generations: int
    m_schedule: tuple | str  # explicit per-generation m, or "auto"
    A: int = 4
    C_abs: float = 1.0
    max_retries: int = 50
    margin: float = 0.0
    k: int | None = None
    r: float | None = None

    def __post_init__(self):
        if self.n_generations < 1:
            raise ValueError("n_generations must be at least 1")
        if isinstance(self.m_schedule, str):
            if self.m_schedule != "auto":
                raise ValueError("m_schedule must be a list of integers or 'auto'")
        else:
            object.__setattr__(self, "m_schedule", tuple(int(m) for m in self.m_schedule))
            if len(self.m_schedule) != self.n_generations:
                raise ValueError("m_schedule length differs from n_generations")

    @property
    def k_value(self) -> int:
        return self.k if self.k is not None else select_k(self.d, self.s)

    @property
    def r_value(self) -> float:
        return self.r if self.r is not None else ConstructionParams.nominal_r(self.d, self.s, self.A)

    def m_for(self, n: int, delta: float) -> int:
        if self.m_schedule == "auto":
            return choose_m(BoundInputs(self.d, self.s, self.k_value, delta, 1, self.C_abs))
        return self.m_schedule[n]


def generation_seed(seed: int, n: int) -> int:
    """Independent base seed for generation ``n`` (retries then add the retry index)."""
    return int(np.random.SeedSequence([int(seed), int(n)]).generate_state(1, np.uint32)[0])


class GenerationFailed(ConstructionFailed):
    def __init__(self, generation: int, cause: ConstructionFailed):
        super().__init__(f"generation {generation}: {cause}", {**cause.diagnostics, "generation": generation})
        self.generation = generation


@dataclass
class CantorSet:
    d: int
    s: float
    generations: list = field(default_factory=list)  # GenerationOutput, generation 1 first

    @property
    def side_lengths(self) -> list[float]:
        return [1.0] + [g.epsilon for g in self.generations]

    def family(self, n: int) -> ParentFamily:
        return ParentFamily.unit(self.d) if n == 0 else self.generations[n - 1].family

    def __len__(self) -> int:
        return len(self.generations)


def build_cantor(schedule: CantorSchedule, hypothesis_samples: int = 200) -> CantorSet:
    from .verify import verify_hypothesis

    cs = CantorSet(schedule.d, schedule.s)
    for n in range(schedule.n_generations):
        parents = cs.family(n)
        delta = parents.delta
        params = ConstructionParams(
            d=schedule.d, s=schedule.s, delta=delta, k=schedule.k_value, A=schedule.A,
            r=schedule.r_value, m=schedule.m_for(n, delta), seed=generation_seed(schedule.seed, n + 1),
            max_retries=schedule.max_retries, margin=schedule.margin,
        )
        hyp = verify_hypothesis(parents, params, hypothesis_samples)
        if not hyp["pass"]:
            raise ValueError(f"generation {n} fails the tube hypothesis: {hyp}")
        try:
            cs.generations.append(build_generation(params, parents))
        except ConstructionFailed as exc:
            raise GenerationFailed(n + 1, exc) from exc
    return cs


def nesting_problems(cs: CantorSet) -> list[str]:
    """Children that are not contained in exactly one cube of the previous generation."""
    out = []
    for n, gen in enumerate(cs.generations, start=1):
        par = cs.family(n - 1)
        lo_c = gen.centers - gen.epsilon / 2
        hi_c = gen.centers + gen.epsilon / 2
        inside = np.all(
            (lo_c[:, None, :] >= par.lo[None, :, :] - ATOL)
            & (hi_c[:, None, :] <= par.lo[None, :, :] + par.delta + ATOL),
            axis=2,
        )
        hits = inside.sum(axis=1)
        for i in np.flatnonzero(hits != 1):
            out.append(f"generation {n} cube {i} lies in {hits[i]} parents")
        ok = hits == 1
        if np.any(np.argmax(inside, axis=1)[ok] != gen.parent_ids[ok]):
            out.append(f"generation {n} parent links disagree with geometry")
    return out


def mass_check(cs: CantorSet, n: int) -> float:
    """Largest ``|sum of children diam^s / parent diam^s - 1|`` over the cubes of generation ``n``."""
    if not (0 <= n < len(cs)):
        raise ValueError("need a generation with children")
    child = cs.generations[n]
    parent_side = cs.side_lengths[n]
    rd = math.sqrt(cs.d)
    per = np.bincount(child.parent_ids, minlength=len(cs.family(n))) * (rd * child.epsilon) ** cs.s
    return float(np.max(np.abs(per / (rd * parent_side) ** cs.s - 1)))


def _counts(cs: CantorSet, n: int, anchors, dirs, widths) -> np.ndarray:
    fam = cs.family(n)
    dist = line_box_distances(anchors, dirs, fam.centers, fam.delta)
    return np.sum(dist <= np.asarray(widths)[:, None] / 2 + ATOL, axis=1)


def count_cubes_meeting_tube(cs: CantorSet, n: int, t: Tube) -> int:
    if not (0 <= n <= len(cs)):
        raise ValueError("generation out of range")
    a = np.asarray(t.anchor, dtype=float)[None]
    u = np.asarray(t.direction, dtype=float)[None]
    return int(_counts(cs, n, a, u, [t.width])[0])


def bracket_generation(cs: CantorSet, w: float) -> tuple[int, str]:
    """Generation ``n`` with ``side_n < w <= side_{n-1}``; the deepest one (flagged) below that."""
    sides = cs.side_lengths
    for n in range(1, len(sides)):
        if sides[n] < w <= sides[n - 1]:
            return n, "ok"
    return len(sides) - 1, "extrapolated"


def tube_content_estimate(cs: CantorSet, t: Tube) -> tuple[float, str]:
    """Natural-cover upper estimate of the set's content inside ``t``, with a flag."""
    if t.width >= 1:
        return 1.0, "trivial"
    n, flag = bracket_generation(cs, t.width)
    side = cs.side_lengths[n]
    return count_cubes_meeting_tube(cs, n, t) * (math.sqrt(cs.d) * side) ** cs.s, flag


def content_ratios(cs: CantorSet, anchors, dirs, widths) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``estimate / w^s`` for many tubes; also returns the generation used for each."""
    widths = np.asarray(widths, dtype=float)
    gens = np.array([bracket_generation(cs, w)[0] if w < 1 else 0 for w in widths])
    est = np.ones(len(widths))
    for n in np.unique(gens):
        if n == 0:
            continue
        sel = gens == n
        c = _counts(cs, n, anchors[sel], dirs[sel], widths[sel])
        est[sel] = c * (math.sqrt(cs.d) * cs.side_lengths[n]) ** cs.s
    return est / widths**cs.s, gens


def ball_property_check(cs: CantorSet, n: int, trials: int, seed: int = 0) -> float:
    """Max of ``sum diam(Q)^s / diam(B)^s`` over random balls of diameter in ``[side_n, sqrt d]``."""
    if not (0 <= n <= len(cs)):
        raise ValueError("generation out of range")
    rng = np.random.default_rng(seed)
    fam = cs.family(n)
    lo, hi = math.log(cs.side_lengths[n]), math.log(math.sqrt(cs.d))
    diam = np.exp(rng.uniform(lo, hi, trials))
    ctr = rng.random((trials, cs.d))
    gap = np.maximum(np.abs(ctr[:, None, :] - fam.centers[None]) - fam.delta / 2, 0)
    met = np.linalg.norm(gap, axis=2) <= diam[:, None] / 2 + ATOL
    mass = met.sum(axis=1) * (math.sqrt(cs.d) * fam.delta) ** cs.s
    return float(np.max(mass / diam**cs.s))


def box_dimension_estimate(cs: CantorSet) -> float:
    if len(cs) < 2:
        raise ValueError("need at least two generations")
    x = np.log([1 / g.epsilon for g in cs.generations])
    y = np.log([len(g.centers) for g in cs.generations])
    return float(np.polyfit(x, y, 1)[0])
