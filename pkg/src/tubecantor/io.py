"""Run-directory persistence: config parsing, cube/point tables and the manifest."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .cantor import CantorSchedule, CantorSet
from .construction import ConstructionParams, GenerationOutput, PrpLog

CONFIG_KEYS = ("d", "s", "generations", "m", "A", "C_abs", "seed", "max_retries", "margin")
REQUIRED_KEYS = ("d", "s", "generations", "m", "seed")


class ConfigError(ValueError):
    pass


class CorruptRun(ValueError):
    pass


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# --------------------------------------------------------------------------- config


def parse_config(text: str) -> CantorSchedule:
    raw = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value")
        key, val = (x.strip() for x in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        raw[key] = val
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing keys: {', '.join(missing)}")
    try:
        gens = int(raw["generations"])
        if raw["m"].lower() == "auto":
            m = "auto"
        else:
            m = tuple(int(float(x)) for x in raw["m"].split(","))
        return CantorSchedule(
            d=int(raw["d"]),
            s=float(raw["s"]),
            seed=int(raw["seed"]),
            n_generations=gens,
            m_schedule=m,
            A=int(raw.get("A", 4)),
            C_abs=float(raw.get("C_abs", 1.0)),
            max_retries=int(raw.get("max_retries", 50)),
            margin=float(raw.get("margin", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def read_config(path) -> CantorSchedule:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)


# --------------------------------------------------------------------------- tables


def cubes_table(n: int, gen: GenerationOutput) -> str:
    d = gen.centers.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["generation", "cube_id", "parent_id"] + [f"c{i}" for i in range(d)] + ["side"])
    for i, (c, p) in enumerate(zip(gen.centers, gen.parent_ids)):
        w.writerow([n, i, int(p)] + [fmt(x) for x in c] + [fmt(gen.epsilon)])
    return buf.getvalue()


def points_table(n: int, gen: GenerationOutput) -> str:
    d = gen.centers.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["generation", "point_id", "parent_id", "sample_index"] + [f"x{i}" for i in range(d)])
    for i, (c, p, o) in enumerate(zip(gen.centers, gen.parent_ids, gen.sample_order)):
        w.writerow([n, i, int(p), int(o)] + [fmt(x) for x in c])
    return buf.getvalue()


def read_cubes(path) -> tuple[np.ndarray, np.ndarray, float]:
    """(centres, parent ids, side) from a cube table."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        if head[:3] != ["generation", "cube_id", "parent_id"] or head[-1] != "side":
            raise CorruptRun(f"{path}: unexpected header")
        d = len(head) - 4
        centers = np.array([[float(x) for x in r[3 : 3 + d]] for r in body]).reshape(-1, d)
        pid = np.array([int(r[2]) for r in body], dtype=np.int64)
        sides = {float(r[-1]) for r in body}
    except (OSError, ValueError, IndexError) as exc:
        raise CorruptRun(f"{path}: {exc}") from exc
    if len(sides) != 1:
        raise CorruptRun(f"{path}: cubes of differing sides")
    return centers, pid, sides.pop()


# --------------------------------------------------------------------------- manifest


def schedule_dict(sc: CantorSchedule) -> dict:
    return {
        "d": sc.d, "s": sc.s, "seed": sc.seed, "generations": sc.n_generations,
        "m": sc.m_schedule if isinstance(sc.m_schedule, str) else list(sc.m_schedule),
        "A": sc.A, "C_abs": sc.C_abs, "max_retries": sc.max_retries, "margin": sc.margin,
        "k": sc.k_value, "r": sc.r_value,
    }


def generation_summary(n: int, gen: GenerationOutput) -> dict:
    from .geometry import representative_constant

    d = gen.params.d
    tau = 2 * gen.epsilon
    c_rep = representative_constant(tau, d) if (d == 2 or tau >= 0.05) and tau <= 1 else None
    return {
        "generation": n,
        "side": gen.epsilon,
        "N": gen.N,
        "cubes": int(len(gen.centers)),
        "m": gen.params.m,
        "delta": gen.params.delta,
        "seed_used": gen.params.seed,
        "retries": gen.retries,
        "failures": gen.failures,
        "eta": gen.eta,
        "eta_grid": gen.eta_grid,
        "params": {k: v for k, v in gen.params.__dict__.items()},
        "prp": gen.prp_log.as_dict(),
        "c_rep": c_rep,
    }


def write_run(run_dir, schedule: CantorSchedule, cs: CantorSet) -> dict:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    for n, gen in enumerate(cs.generations, start=1):
        atomic_write(run_dir / f"cubes_gen_{n}.csv", cubes_table(n, gen))
        atomic_write(run_dir / f"points_gen_{n}.csv", points_table(n, gen))
    manifest = {
        "tool": "tubecantor",
        "version": __version__,
        "schedule": schedule_dict(schedule),
        "generations": [generation_summary(n, g) for n, g in enumerate(cs.generations, start=1)],
        "measured": {},
    }
    write_manifest(run_dir, manifest)
    return manifest


def write_manifest(run_dir, manifest: dict) -> None:
    atomic_write(Path(run_dir) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(run_dir) -> dict:
    try:
        return json.loads((Path(run_dir) / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise CorruptRun(f"manifest: {exc}") from exc


def load_run(run_dir) -> tuple[dict, CantorSet]:
    """Rebuild the cube families of a run directory from its tables and manifest."""
    run_dir = Path(run_dir)
    man = read_manifest(run_dir)
    try:
        sc = man["schedule"]
        cs = CantorSet(int(sc["d"]), float(sc["s"]))
        for summ in man["generations"]:
            n = summ["generation"]
            centers, pid, side = read_cubes(run_dir / f"cubes_gen_{n}.csv")
            params = ConstructionParams(**summ["params"])
            prp = summ["prp"]
            log = PrpLog(
                grid_removed=np.asarray(prp["grid_removed"]),
                tube_removed_total=prp["tube_removed_total"],
                tube_removed_by_level=[tuple(x) for x in prp["tube_removed_by_level"]],
                spacing_removed=prp["spacing_removed"],
                thin_removed=prp["thin_removed"],
                equalize_removed=prp["equalize_removed"],
                budget=prp["budget"],
            )
            cs.generations.append(GenerationOutput(
                params=params, centers=centers, parent_ids=pid, epsilon=side, N=int(summ["N"]),
                eta=float(summ["eta"]), eta_grid=float(summ["eta_grid"]), prp_log=log,
                retries=int(summ["retries"]), sample_order=np.arange(len(centers)),
                failures=summ.get("failures", {}),
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptRun(f"run directory: {exc}") from exc
    return man, cs
