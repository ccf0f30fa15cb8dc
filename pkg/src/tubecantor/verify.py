"""Post-hoc oracles for a finished generation.

Only the cube family (centres, side, parent links) and the parameters are
read; none of the construction's pruning machinery is reused.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .construction import ConstructionParams, GenerationOutput, ParentFamily
from .geometry import (
    ATOL,
    _family_directions,
    count_boxes_met,
    max_family_occupancy_2d,
    pair_lines,
    random_lines,
)

C_LAW = 8.0
REP_FAMILY_CAP = 2_000_000
PAIR_CAVEAT = "pair tubes with inflation are an audited witness set, not a proof of the maximum"


def _result(ok: bool, **kw) -> dict:
    return {"pass": bool(ok), **kw}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def family_of(gen: GenerationOutput) -> tuple[np.ndarray, float, np.ndarray]:
    return np.asarray(gen.centers, dtype=float), float(gen.epsilon), np.asarray(gen.parent_ids)


# --------------------------------------------------------------------------- (b)


def verify_counts(gen: GenerationOutput, parents: ParentFamily) -> dict:
    centers, eps, _ = family_of(gen)
    P = len(parents)
    delta = parents.delta
    s = gen.params.s
    N = int(round((delta / eps) ** s))
    lo = centers - eps / 2
    hi = centers + eps / 2
    inside = np.all(
        (lo[:, None, :] >= parents.lo[None] - ATOL) & (hi[:, None, :] <= parents.lo[None] + delta + ATOL), axis=2
    )
    owner = np.where(inside.sum(axis=1) == 1, np.argmax(inside, axis=1), -1)
    per = np.bincount(owner[owner >= 0], minlength=P)
    problems = []
    if abs((delta / eps) ** s - N) > 1e-9 * max(1, N):
        problems.append(f"(delta/eps)^s = {(delta / eps) ** s!r} is not an integer")
    for j in np.flatnonzero(per != N):
        problems.append(f"parent {j} holds {per[j]} children, expected {N}")
    if np.any(owner < 0):
        problems.append(f"{int(np.sum(owner < 0))} children are not inside exactly one parent")
    total = len(centers)
    expected_total = eps ** (-s)
    if abs(total - expected_total) > 1e-9 * expected_total:
        problems.append(f"total {total} differs from eps^-s = {expected_total:.12g}")
    return _result(not problems, N=N, total=total, per_parent=per, problems=problems)


# --------------------------------------------------------------------------- (c)


def _grid_audit(centers: np.ndarray, side: float, eta: float) -> tuple[bool, list]:
    """Slide closed ``eta`` cells at every 0 / half phase; report a cell meeting two cubes."""
    d = centers.shape[1]
    for phase in itertools.product((0.0, 0.5), repeat=d):
        ph = np.asarray(phase) * eta
        lo = np.ceil((centers - side / 2 - ph) / eta - 1 - 1e-9).astype(np.int64)
        hi = np.floor((centers + side / 2 - ph) / eta + 1e-9).astype(np.int64)
        owner: dict = {}
        for c in range(len(centers)):
            for cell in itertools.product(*[range(a, b + 1) for a, b in zip(lo[c], hi[c])]):
                o = owner.setdefault(cell, c)
                if o != c:
                    return False, [list(phase), list(cell), int(o), int(c)]
    return True, []


def verify_eta_cell(gen: GenerationOutput) -> dict:
    centers, eps, _ = family_of(gen)
    d = centers.shape[1]
    eta = float(gen.eta)
    need = 5 * d * eta
    if len(centers) < 2:
        return _result(True, min_distance=math.inf, required=need, grid_ok=True, witness=[])
    diff = centers[:, None, :] - centers[None]
    dist = np.linalg.norm(diff, axis=2)
    dist[np.diag_indices(len(centers))] = np.inf
    mind = float(dist.min())
    grid_ok, witness = _grid_audit(centers, eps, eta)
    return _result(mind >= need - 1e-12 and grid_ok, min_distance=mind, required=need,
                   grid_ok=grid_ok, witness=witness)


# --------------------------------------------------------------------------- (d)


def _max_over_witnesses(centers, side, width, sample_size, rng, with_family=True):
    """Largest number of cubes met by a width-``width`` tube over the audited witness set."""
    d = centers.shape[1]
    best, witness, source = 0, None, "none"
    if len(centers) == 0:
        return 0, None, source
    # pair tubes, inflated so that they dominate every tube of this width
    wide = width + math.sqrt(d) * side
    a, u = pair_lines(centers)
    if len(a):
        c = count_boxes_met(a, u, wide, centers, side)
        j = int(np.argmax(c))
        if c[j] > best:
            best, witness, source = int(c[j]), [a[j].tolist(), u[j].tolist(), wide], "pair"
    else:
        best, witness, source = 1, [centers[0].tolist(), None, wide], "single"
    if with_family and width <= 2:
        if d == 2:
            dirs, _ = _family_directions(width, 2)
            c, w = max_family_occupancy_2d(dirs, width / 2, width, centers, side)
            if c > best:
                best, witness, source = int(c), [w[0].tolist(), w[1].tolist(), width], "representative"
    if sample_size:
        a, u = random_lines(rng, sample_size, d)
        c = count_boxes_met(a, u, width, centers, side)
        j = int(np.argmax(c))
        if c[j] > best:
            best, witness, source = int(c[j]), [a[j].tolist(), u[j].tolist(), width], "random"
    return best, witness, source


def verify_thin_tubes(gen: GenerationOutput, sample_size: int = 10_000, seed: int = 0) -> dict:
    if sample_size < 0:
        raise ValueError("sample_size must be non-negative")
    centers, eps, _ = family_of(gen)
    rng = np.random.default_rng(seed)
    k = gen.params.k
    best, witness, source = _max_over_witnesses(centers, eps, 2 * eps, sample_size, rng)
    return _result(best <= k, max_count=best, k=k, width=2 * eps, witness=witness, source=source,
                   caveat=PAIR_CAVEAT)


def default_widths(eps: float, delta: float) -> list[float]:
    out = []
    w = eps
    while w <= delta * (1 + 1e-12):
        out.append(w)
        w *= 2
    if out[-1] < delta * (1 - 1e-12):
        out.append(delta)
    return out


def verify_intermediate_tubes(gen: GenerationOutput, widths=None, sample_size: int = 1000,
                              seed: int = 0, c_law: float = C_LAW) -> dict:
    centers, eps, _ = family_of(gen)
    delta = gen.params.delta
    widths = default_widths(eps, delta) if widths is None else list(widths)
    if any(w < eps * (1 - 1e-12) or w > delta * (1 + 1e-12) for w in widths):
        raise ValueError("widths must lie in [eps, delta]")
    rng = np.random.default_rng(seed)
    k, s = gen.params.k, gen.params.s
    rows = []
    for w in widths:
        best, witness, source = _max_over_witnesses(centers, eps, w, sample_size, rng, with_family=False)
        rows.append({"width": w, "max_count": best, "constant": best / (k * (w / eps) ** s), "source": source})
    const = max(r["constant"] for r in rows)
    return _result(const <= c_law, constant=const, c_law=c_law, rows=rows)


def verify_hypothesis(parents: ParentFamily, params: ConstructionParams, sample_size: int = 1000,
                      seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    best, witness, source = _max_over_witnesses(parents.centers, parents.delta, 2 * parents.delta,
                                                sample_size, rng, with_family=False)
    return _result(best <= params.k, max_count=best, k=params.k, width=2 * parents.delta, source=source)


# --------------------------------------------------------------------------- report


@dataclass
class VerificationReport:
    children_per_parent: dict
    eta_separation: dict
    thin_tube_max: dict
    intermediate_law: dict
    hypothesis_max: dict
    tube_budget: dict
    params: dict
    seed: int

    @property
    def passed(self) -> bool:
        return all(
            getattr(self, f)["pass"]
            for f in ("children_per_parent", "eta_separation", "thin_tube_max", "intermediate_law",
                      "hypothesis_max", "tube_budget")
        )

    def to_dict(self) -> dict:
        return _jsonable({**asdict(self), "passed": self.passed})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        data = json.loads(text)
        data.pop("passed", None)
        return cls(**data)


def full_report(gen: GenerationOutput, parents: ParentFamily, params: ConstructionParams,
                sample_size: int = 10_000, seed: int = 0) -> VerificationReport:
    log = gen.prp_log
    budget = {
        "tube_removed_total": int(log.tube_removed_total),
        "budget": float(log.budget),
        "grid_removed_max": int(np.max(log.grid_removed)) if log.grid_removed is not None else 0,
    }
    budget["pass"] = bool(budget["tube_removed_total"] <= budget["budget"]
                          and budget["grid_removed_max"] <= budget["budget"])
    return VerificationReport(
        children_per_parent=_jsonable(verify_counts(gen, parents)),
        eta_separation=_jsonable(verify_eta_cell(gen)),
        thin_tube_max=_jsonable(verify_thin_tubes(gen, sample_size, seed)),
        intermediate_law=_jsonable(verify_intermediate_tubes(gen, None, max(1000, sample_size // 10), seed)),
        hypothesis_max=_jsonable(verify_hypothesis(parents, params, 1000, seed)),
        tube_budget=budget,
        params=_jsonable(dict(gen.params.__dict__)),
        seed=int(gen.params.seed),
    )
