import csv
import hashlib
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from tubecantor.cantor import CantorSchedule, CantorSet
from tubecantor.cli import main, sweep_tubes
from tubecantor.construction import ConstructionParams, GenerationOutput, PrpLog
from tubecantor.io import ConfigError, load_run, parse_config, write_run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small") / "run"
    assert main(["construct", str(CONFIGS / "small.conf"), "--out", str(out)]) == 0
    return out


@pytest.fixture
def run_copy(small_run, tmp_path):
    dst = tmp_path / "copy"
    shutil.copytree(small_run, dst)
    return dst


def write_conf(tmp_path, text, name="c.conf"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --------------------------------------------------------------------------- params


def test_params_output(capsys):
    assert main(["params", "--d", "2", "--s", "0.5"]) == 0
    first = capsys.readouterr().out
    assert "k = 5" in first and "m = 14858" in first and "eta" in first and "r = " in first
    assert main(["params", "--d", "2", "--s", "0.5"]) == 0
    assert capsys.readouterr().out == first


def test_params_rejects_large_s(capsys):
    assert main(["params", "--d", "2", "--s", "1.0"]) == 2
    assert "s < d - 1" in capsys.readouterr().err


def test_unknown_verb():
    assert main(["frobnicate"]) == 2


# --------------------------------------------------------------------------- config


def test_config_keys():
    sc = parse_config("d=2\ns=0.5\ngenerations=2\nm=100, 2000\nseed=3\nmargin=0\n# note\n")
    assert sc.m_schedule == (100, 2000) and sc.seed == 3 and sc.A == 4
    assert parse_config("d=2\ns=0.5\ngenerations=1\nm=auto\nseed=1").m_schedule == "auto"
    for bad in ("d=2\ns=0.5\ngenerations=1\nm=10\nseed=1\ncolour=red",
                "d=2\nd=2\ns=0.5\ngenerations=1\nm=10\nseed=1",
                "d=2\ns=0.5\ngenerations=1\nseed=1",
                "d=2\ns=0.5\ngenerations=2\nm=10\nseed=1",
                "d=two\ns=0.5\ngenerations=1\nm=10\nseed=1",
                "just words"):
        with pytest.raises(ConfigError):
            parse_config(bad)


def test_construct_bad_or_missing_config(tmp_path):
    assert main(["construct", str(tmp_path / "nope.conf"), "--out", str(tmp_path / "r")]) == 2
    bad = write_conf(tmp_path, "d=2\ns=0.5\n")
    assert main(["construct", str(bad), "--out", str(tmp_path / "r")]) == 2
    invalid = write_conf(tmp_path, "d=2\ns=1.5\ngenerations=1\nm=100\nseed=1\n", "s.conf")
    assert main(["construct", str(invalid), "--out", str(tmp_path / "r")]) == 2


def test_construct_failure_exit_3(tmp_path, capsys):
    conf = write_conf(tmp_path, "d=2\ns=0.5\ngenerations=1\nm=16\nA=2\nseed=0\nmax_retries=0\n")
    assert main(["construct", str(conf), "--out", str(tmp_path / "r")]) == 3
    err = capsys.readouterr().err
    assert "construction failed" in err and '"most_common": "grid"' in err


# --------------------------------------------------------------------------- construct and round trip


def test_construct_outputs(small_run):
    man = json.loads((small_run / "manifest.json").read_text())
    side = man["generations"][0]["side"]
    cubes = rows(small_run / "cubes_gen_1.csv")
    assert cubes[0] == ["generation", "cube_id", "parent_id", "c0", "c1", "side"]
    assert len(cubes) - 1 == round(side ** -0.5)
    pts = rows(small_run / "points_gen_1.csv")
    assert pts[0][:4] == ["generation", "point_id", "parent_id", "sample_index"]
    assert len(pts) == len(cubes)
    assert man["schedule"]["seed"] == 17 and man["version"]
    assert {"side", "N", "m", "retries", "prp", "eta"} <= man["generations"][0].keys()
    # 17 significant digits round-trip exactly
    _, cs = load_run(small_run)
    from tubecantor.cantor import build_cantor
    again = build_cantor(parse_config((CONFIGS / "small.conf").read_text()))
    assert np.array_equal(cs.generations[0].centers, again.generations[0].centers)
    assert cs.generations[0].epsilon == again.generations[0].epsilon


def test_construct_byte_identical(small_run, tmp_path):
    other = tmp_path / "again"
    assert main(["construct", str(CONFIGS / "small.conf"), "--out", str(other)]) == 0
    for name in ("cubes_gen_1.csv", "points_gen_1.csv", "manifest.json"):
        assert sha(other / name) == sha(small_run / name)


# --------------------------------------------------------------------------- verify


def test_verify_fresh_run(run_copy):
    assert main(["verify", str(run_copy), "--samples", "2000"]) == 0
    doc = json.loads((run_copy / "verification.json").read_text())
    man = json.loads((run_copy / "manifest.json").read_text())
    assert doc["passed"] and doc["seed"] == man["schedule"]["seed"] == 17
    assert man["measured"]["law_constant"]


def test_verify_duplicate_row_exit_4(run_copy):
    path = run_copy / "cubes_gen_1.csv"
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines + [lines[1]]))
    assert main(["verify", str(run_copy), "--samples", "500"]) == 4
    doc = json.loads((run_copy / "verification.json").read_text())
    assert not doc["generations"][0]["children_per_parent"]["pass"]


def test_verify_corrupt_inputs_exit_2(run_copy, tmp_path):
    (run_copy / "cubes_gen_1.csv").write_text("not,a,table\n1,2\n")
    assert main(["verify", str(run_copy)]) == 2
    assert main(["verify", str(tmp_path / "missing")]) == 2


# --------------------------------------------------------------------------- sweep


def test_sweep(run_copy):
    assert main(["sweep", str(run_copy), "--tubes", "300", "--wmax", "2.0"]) == 0
    table = rows(run_copy / "sweep.csv")
    head, body = table[0], table[1:]
    assert head[0] == "width" and head[-2:] == ["estimate", "ratio"] and len(body) == 300
    for r in body:
        if float(r[0]) >= 1:
            assert float(r[-1]) <= 1
    c_run = json.loads((run_copy / "manifest.json").read_text())["measured"]["C_run"]
    assert c_run == max(float(r[-1]) for r in body) < float("inf")
    assert (run_copy / "sweep.csv").read_text().rstrip().endswith(f"# C_run={c_run!r}")


def test_sweep_more_tubes_never_lowers_max(run_copy):
    results = []
    for n in (200, 400, 1500):
        assert main(["sweep", str(run_copy), "--tubes", str(n)]) == 0
        results.append(json.loads((run_copy / "manifest.json").read_text())["measured"]["C_run"])
    assert results == sorted(results)


def test_sweep_tubes_extend():
    a = sweep_tubes(4, 10, 0.01, 1.0, 2)
    b = sweep_tubes(4, 2000, 0.01, 1.0, 2)
    for x, y in zip(a, b):
        assert np.array_equal(x, y[:10])


def test_sweep_rejects_bad_range(run_copy):
    assert main(["sweep", str(run_copy), "--wmin", "2", "--wmax", "1"]) == 2


# --------------------------------------------------------------------------- montecarlo


def test_montecarlo_csv(tmp_path, monkeypatch):
    out = tmp_path / "mc.csv"
    args = ["montecarlo", str(CONFIGS / "small.conf"), "--trials", "100", "--out", str(out)]
    monkeypatch.setenv("TUBECANTOR_THREADS", "1")
    assert main(args) == 0
    table = rows(out)
    assert table[0] == ["event", "trials", "passes", "frequency"]
    assert [r[0] for r in table[1:]] == ["min_count", "grid", "tube_budget", "xr_max_at_least_0.1"]
    assert all(0 <= float(r[3]) <= 1 and r[1] == "100" for r in table[1:])
    hist = rows(tmp_path / "mc_xr_histogram.csv")
    assert hist[0] == ["bin_lo", "bin_hi", "count"] and sum(int(r[2]) for r in hist[1:]) == 100
    first = sha(out)
    monkeypatch.setenv("TUBECANTOR_THREADS", "3")
    assert main(args) == 0
    assert sha(out) == first


def test_montecarlo_preconditions(tmp_path):
    conf = str(CONFIGS / "reference.conf")
    assert main(["montecarlo", conf, "--trials", "50", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["montecarlo", conf, "--generation", "2", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["montecarlo", conf, "--generation", "3", "--out", str(tmp_path / "x.csv")]) == 2


# --------------------------------------------------------------------------- svg


def test_export_svg(run_copy, tmp_path):
    assert main(["verify", str(run_copy), "--samples", "500"]) == 0
    out = tmp_path / "g1.svg"
    assert main(["export-svg", str(run_copy), "--out", str(out)]) == 0
    text = out.read_text()
    n = len(rows(run_copy / "cubes_gen_1.csv")) - 1
    assert text.count("<rect") == n and text.count("<line") == 1
    again = tmp_path / "g1b.svg"
    assert main(["export-svg", str(run_copy), "--out", str(again)]) == 0
    assert sha(out) == sha(again)
    assert main(["export-svg", str(run_copy), "--generation", "2", "--out", str(again)]) == 2


def test_export_svg_needs_plane(tmp_path):
    params = ConstructionParams(d=3, s=1.0, delta=1.0, k=5, A=4, r=16.0, m=10, seed=0)
    gen = GenerationOutput(params=params, centers=np.full((1, 3), 0.5), parent_ids=np.zeros(1, dtype=np.int64),
                           epsilon=1.0, N=1, eta=params.eta, eta_grid=params.eta_grid,
                           prp_log=PrpLog(np.zeros(1, dtype=np.int64)), retries=0, sample_order=np.arange(1))
    sched = CantorSchedule(d=3, s=1.0, seed=0, n_generations=1, m_schedule=(10,))
    write_run(tmp_path / "cube", sched, CantorSet(3, 1.0, [gen]))
    assert main(["export-svg", str(tmp_path / "cube")]) == 2
