"""Command-line entry point.

Exit codes: 0 success, 2 usage or config error, 3 construction failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import svg
from .analysis import BoundError, BoundInputs, choose_m, montecarlo_events, montecarlo_mainclaim, select_k
from .cantor import build_cantor, content_ratios, generation_seed, nesting_problems
from .construction import ConstructionFailed, ConstructionParams, ParentFamily
from .geometry import random_lines
from .io import (
    ConfigError,
    CorruptRun,
    atomic_write,
    fmt,
    load_run,
    read_config,
    write_manifest,
    write_run,
)
from .verify import full_report

EXIT_OK, EXIT_USAGE, EXIT_FAILED, EXIT_VERIFY = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"tubecantor: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------- verbs


def cmd_params(d: int, s: float, C_abs: float = 1.0, out=None) -> int:
    out = out or sys.stdout
    if d < 2 or not (0 < s < d - 1):
        raise UsageError(f"need d >= 2 and 0 < s < d - 1 (got d={d}, s={s}); the bounds require s < d-1")
    k = select_k(d, s)
    m = choose_m(BoundInputs(d, s, k, 1.0, 1, C_abs))
    eta = m ** (-s / d)
    r = ConstructionParams.nominal_r(d, s, 4)
    print(f"d = {d}", file=out)
    print(f"s = {s}", file=out)
    print(f"C_abs = {C_abs}", file=out)
    print(f"k = {k}    (smallest k with k(d-1-s) > 2(d-1) and s(1-2/d) < sk(d-1-s)/d)", file=out)
    print(f"m = {m}    (smallest m with cluster sum < (delta m)^s / 100 at delta = 1)", file=out)
    print(f"eta = delta^((d-s)/d) m^(-s/d) = {eta:.6g}", file=out)
    print(f"spacing = 5 d eta = {5 * d * eta:.6g}", file=out)
    print(f"r = max(2 A^(1/s), 1 + ceil(sqrt(d) A^(1/s))) = {r:g}    (A = 4)", file=out)
    return EXIT_OK


def cmd_construct(config, out_dir) -> int:
    sched = read_config(config)
    try:
        cs = build_cantor(sched)
    except ConstructionFailed as exc:
        _err(f"construction failed: {exc}")
        print(json.dumps(exc.diagnostics, sort_keys=True), file=sys.stderr)
        return EXIT_FAILED
    man = write_run(out_dir, sched, cs)
    for g in man["generations"]:
        print(f"generation {g['generation']}: {g['cubes']} cubes of side {g['side']:.6g} "
              f"(N={g['N']}, m={g['m']}, retries={g['retries']})")
    return EXIT_OK


def cmd_verify(run_dir, samples: int = 10_000) -> int:
    man, cs = load_run(run_dir)
    reports = []
    ok = True
    for n, gen in enumerate(cs.generations, start=1):
        rep = full_report(gen, cs.family(n - 1), gen.params, samples)
        ok &= rep.passed
        reports.append({"generation": n, **rep.to_dict()})
    nest = nesting_problems(cs)
    ok &= not nest
    doc = {"seed": man["schedule"]["seed"], "passed": bool(ok), "nesting": nest, "generations": reports}
    atomic_write(Path(run_dir) / "verification.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    man.setdefault("measured", {})["law_constant"] = [r["intermediate_law"]["constant"] for r in reports]
    write_manifest(run_dir, man)
    for r in reports:
        print(f"generation {r['generation']}: {'pass' if r['passed'] else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


SWEEP_BLOCK = 1024


def sweep_tubes(seed: int, n: int, lo: float, hi: float, d: int):
    """Log-uniform widths and random lines, drawn in seeded blocks so a longer sweep extends a shorter one."""
    parts = []
    for b in range(-(-n // SWEEP_BLOCK)):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        w = np.exp(rng.uniform(math.log(lo), math.log(hi), SWEEP_BLOCK))
        a, u = random_lines(rng, SWEEP_BLOCK, d)
        parts.append((w, a, u))
    if not parts:
        return np.zeros(0), np.zeros((0, d)), np.zeros((0, d))
    w, a, u = (np.concatenate(x)[:n] for x in zip(*parts))
    return w, a, u


def cmd_sweep(run_dir, tubes: int = 1000, wmin: float | None = None, wmax: float = 1.0, seed: int = 0) -> int:
    man, cs = load_run(run_dir)
    lo = wmin if wmin is not None else cs.side_lengths[-1]
    if not (0 < lo <= wmax):
        raise UsageError("need 0 < wmin <= wmax")
    widths, anchors, dirs = sweep_tubes(seed, tubes, lo, wmax, cs.d)
    ratio, gens = content_ratios(cs, anchors, dirs, widths)
    est = ratio * widths**cs.s
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = cs.d
    w.writerow(["width"] + [f"a{i}" for i in range(d)] + [f"u{i}" for i in range(d)]
               + ["generation", "estimate", "ratio"])
    for i in range(tubes):
        w.writerow([fmt(widths[i])] + [fmt(x) for x in anchors[i]] + [fmt(x) for x in dirs[i]]
                   + [int(gens[i]), fmt(est[i]), fmt(ratio[i])])
    c_run = float(ratio.max()) if tubes else 0.0
    buf.write(f"# C_run={fmt(c_run)}\n")
    atomic_write(Path(run_dir) / "sweep.csv", buf.getvalue())
    man.setdefault("measured", {})["C_run"] = c_run
    write_manifest(run_dir, man)
    print(f"C_run = {c_run:.6g} over {tubes} tubes with widths in [{lo:.4g}, {wmax:.4g}]")
    return EXIT_OK


def cmd_montecarlo(config, trials: int = 200, out=None, run_dir=None, generation: int = 1,
                   tubes: bool = True) -> int:
    sched = read_config(config)
    if trials < 100:
        raise UsageError("need at least 100 trials")
    if generation < 1 or generation > sched.n_generations:
        raise UsageError("generation out of range")
    if generation == 1:
        parents = ParentFamily.unit(sched.d)
    else:
        if run_dir is None:
            raise UsageError("generations beyond the first need --run for their parents")
        _, cs = load_run(run_dir)
        parents = cs.family(generation - 1)
    params = ConstructionParams(
        d=sched.d, s=sched.s, delta=parents.delta, k=sched.k_value, A=sched.A, r=sched.r_value,
        m=sched.m_for(generation - 1, parents.delta), seed=generation_seed(sched.seed, generation),
        max_retries=sched.max_retries, margin=sched.margin,
    )
    main = montecarlo_mainclaim(params, trials, parents)
    ev = montecarlo_events(params, trials, parents, with_tubes=tubes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["event", "trials", "passes", "frequency"])
    for name, passes in ev.passes.items():
        w.writerow([name, trials, passes, fmt(passes / trials)])
    hits = int(np.sum(main.values >= main.threshold))
    w.writerow(["xr_max_at_least_0.1", trials, hits, fmt(main.frequency)])
    out = Path(out) if out else Path(f"montecarlo_gen_{generation}.csv")
    atomic_write(out, buf.getvalue())
    counts, edges = main.histogram
    hb = io.StringIO()
    hw = csv.writer(hb, lineterminator="\n")
    hw.writerow(["bin_lo", "bin_hi", "count"])
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        hw.writerow([fmt(a), fmt(b), int(c)])
    atomic_write(out.with_name(out.stem + "_xr_histogram.csv"), hb.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_export_svg(run_dir, generation: int = 1, out=None, overlay: bool = True) -> int:
    man, cs = load_run(run_dir)
    if cs.d != 2:
        raise UsageError("SVG export needs d = 2")
    if not (1 <= generation <= len(cs)):
        raise UsageError("generation out of range")
    gen = cs.generations[generation - 1]
    par = cs.family(generation - 1)
    tube = None
    vpath = Path(run_dir) / "verification.json"
    if overlay and vpath.exists():
        try:
            doc = json.loads(vpath.read_text())
            wit = doc["generations"][generation - 1]["thin_tube_max"]["witness"]
            if wit and wit[1] is not None:
                tube = wit
        except (ValueError, KeyError, IndexError):
            tube = None
    text = svg.render(gen.centers, gen.epsilon, (par.centers, par.delta), tube)
    out = Path(out) if out else Path(run_dir) / f"gen_{generation}.svg"
    atomic_write(out, text)
    print(out)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tubecantor", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    a = sub.add_parser("params", help="print k, m, eta and r for (d, s)")
    a.add_argument("--d", type=int, required=True)
    a.add_argument("--s", type=float, required=True)
    a.add_argument("--C_abs", "--c-abs", dest="C_abs", type=float, default=1.0)
    a = sub.add_parser("construct", help="build generations from a config file")
    a.add_argument("config")
    a.add_argument("--out", default=None, help="run directory (default: runs/<config name>)")
    a = sub.add_parser("verify", help="audit a run directory")
    a.add_argument("run_dir")
    a.add_argument("--samples", type=int, default=10_000)
    a = sub.add_parser("sweep", help="tube-content profile over random tubes")
    a.add_argument("run_dir")
    a.add_argument("--tubes", type=int, default=1000)
    a.add_argument("--wmin", type=float, default=None)
    a.add_argument("--wmax", type=float, default=1.0)
    a.add_argument("--seed", type=int, default=0)
    a = sub.add_parser("montecarlo", help="event frequencies over fresh samples")
    a.add_argument("config")
    a.add_argument("--trials", type=int, default=200)
    a.add_argument("--out", default=None)
    a.add_argument("--run", default=None, help="run directory providing the parents of later generations")
    a.add_argument("--generation", type=int, default=1)
    a.add_argument("--no-tubes", action="store_true", help="skip the tube-budget proxy (slow at large m)")
    a = sub.add_parser("export-svg", help="draw one planar generation")
    a.add_argument("run_dir")
    a.add_argument("--generation", type=int, default=1)
    a.add_argument("--out", default=None)
    a.add_argument("--no-overlay", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.verb == "params":
            return cmd_params(args.d, args.s, args.C_abs)
        if args.verb == "construct":
            out = args.out or str(Path("runs") / Path(args.config).stem)
            return cmd_construct(args.config, out)
        if args.verb == "verify":
            return cmd_verify(args.run_dir, args.samples)
        if args.verb == "sweep":
            return cmd_sweep(args.run_dir, args.tubes, args.wmin, args.wmax, args.seed)
        if args.verb == "montecarlo":
            return cmd_montecarlo(args.config, args.trials, args.out, args.run, args.generation,
                                  not args.no_tubes)
        if args.verb == "export-svg":
            return cmd_export_svg(args.run_dir, args.generation, args.out, not args.no_overlay)
    except (UsageError, ConfigError, CorruptRun, BoundError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
