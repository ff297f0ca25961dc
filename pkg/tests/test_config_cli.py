import csv
import json
import re
from pathlib import Path

import numpy as np
import pytest

from dchain import config as cfgmod
from dchain.cli import RunManifest, main, replay, run
from dchain.inference import synthetic_observation
from dchain.svg import line_plot, read_series

DATA = Path(__file__).resolve().parents[1] / "src" / "dchain" / "data"

SMALL = {
    "simulate-chain": "[chain]\nn = 50\nu = 0.5\nhorizon = 0.2\ndt = 0.01\nrecord_stride = 5\nwrite_paths = true\n",
    "solve-limit": "[limit]\nmethod = nested\nu = 0.5\nhorizon = 0.2\ndt = 0.01\ndepth = 4\nreplicas = 200\n",
    "variance-table": "[oracle]\nu_list = 0, 0.5, 1\nt_max = 1\nt_points = 5\nmc_replicas = 100\ndepth = 5\n",
    "convergence-study": "[study]\nn_list = 10, 20\nu = 0.5\nhorizon = 0.2\n",
    "estimate-u": "[inference]\ninput = {obs}\nparticles = 40\ncandidates = 0, 0.5, 1\n",
    "filter-study": "[inference]\nu = 0.8\nhorizon = 0.3\nparticles = 100\n",
    "discrete-time": "[discrete]\na = 0.5\nu = 0.7\nn_max = 4\nsamples = 500\n",
}


@pytest.fixture(scope="module")
def obs_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("obs") / "obs.csv"
    synthetic_observation(0.6, 3.0, 0.01, seed=4).to_csv(p)
    return p


def _write(tmp_path: Path, kind: str, body: str, seed: int = 11, extra: str = "") -> Path:
    p = tmp_path / f"{kind}.ini"
    p.write_text(f"[run]\nkind = {kind}\nseed = {seed}\nout = {tmp_path / ('out-' + kind)}\n{extra}\n{body}")
    return p


# -- validation ----------------------------------------------------------------
def test_validate_empty_config(tmp_path):
    p = tmp_path / "empty.ini"
    p.write_text("")
    assert cfgmod.validate(p) == ["missing required key run.kind", "missing required key run.seed",
                                  "missing required key run.out"]
    assert main(["validate", "--config", str(p)]) == 2


def test_validate_lists_all_missing_block_keys(tmp_path):
    p = _write(tmp_path, "simulate-chain", "")
    assert cfgmod.validate(p) == ["missing required key chain.n", "missing required key chain.u",
                                  "missing required key chain.horizon"]


def test_validate_dt_exceeds_horizon(tmp_path):
    p = _write(tmp_path, "solve-limit", "[limit]\nu = 0.5\nhorizon = 0.1\ndt = 0.5\n")
    assert cfgmod.validate(p) == ["limit.dt (0.5) exceeds limit.horizon (0.1)"]


def test_validate_collects_every_problem(tmp_path):
    p = _write(tmp_path, "simulate-chain", "[chain]\nn = 0\nu = 1.5\nhorizon = 1\nkernel = nope\n"
               "[extra]\nx = 1\n", extra="bogus = 1")
    d = cfgmod.validate(p)
    assert "unknown key run.bogus" in d
    assert "unknown section [extra] for kind simulate-chain" in d
    assert "chain.u must lie in [0, 1], got 1.5" in d
    assert any(s.startswith("chain.kernel") for s in d)
    assert any(s.startswith("chain.n") for s in d)


def test_validate_unknown_kind_and_bad_input(tmp_path):
    p = tmp_path / "k.ini"
    p.write_text("[run]\nkind = teleport\nseed = 1\nout = o\n")
    assert any("teleport" in s for s in cfgmod.validate(p))
    p = _write(tmp_path, "estimate-u", "[inference]\ninput = nowhere.csv\nmethods = mm, foo\n")
    d = cfgmod.validate(p)
    assert any("unknown method 'foo'" in s for s in d)
    assert any("file not found" in s for s in d)


def test_validate_resource_check(tmp_path):
    p = _write(tmp_path, "simulate-chain", "[chain]\nn = 10000000\nu = 0.5\nhorizon = 100\ndt = 0.001\n")
    assert any("memory" in s or "bytes" in s for s in cfgmod.validate(p))


@pytest.mark.parametrize("name", sorted(p.name for p in DATA.glob("*.ini")))
def test_bundled_configs_are_valid(name):
    assert cfgmod.validate(DATA / name) == []


def test_validate_has_no_side_effects(tmp_path):
    p = _write(tmp_path, "discrete-time", SMALL["discrete-time"])
    assert cfgmod.validate(p) == []
    assert not (tmp_path / "out-discrete-time").exists()


def test_parse_initial():
    assert cfgmod.parse_initial("point:1.5").value == 1.5
    law = cfgmod.parse_initial("gaussian:0.5,2")
    assert (law.mean, law.var) == (0.5, 2.0)
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse_initial("gaussian:0,-1")


def test_snapshot_roundtrip(tmp_path):
    raw, base = cfgmod.load(_write(tmp_path, "discrete-time", SMALL["discrete-time"]))
    cfg = cfgmod.resolve(raw, base)
    back = cfgmod.ExperimentConfig.from_snapshot(cfg.snapshot(), cfg.out)
    assert back.snapshot() == cfg.snapshot()


# -- runs ----------------------------------------------------------------------
def _svg_points(svg: Path) -> list[list[tuple[float, float]]]:
    return [[tuple(map(float, p.split(","))) for p in m.split()]
            for m in re.findall(r'<polyline [^>]*points="([^"]*)"', svg.read_text())]


def _check_svgs(out: Path) -> None:
    svgs = list(out.rglob("*.svg"))
    assert svgs
    for s in svgs:
        sib = s.with_suffix(".csv")
        assert sib.exists(), f"{s.name} has no sibling CSV"
        with open(sib) as fh:
            rows = sum(1 for _ in csv.reader(fh)) - 1
        pts = sum(len(p) for p in _svg_points(s))
        assert 0 < pts <= rows


@pytest.fixture(scope="module")
def runs(tmp_path_factory, obs_csv):
    base = tmp_path_factory.mktemp("runs")
    out = {}
    for kind, body in SMALL.items():
        p = _write(base, kind, body.format(obs=obs_csv))
        assert main([kind, "--config", str(p)]) == 0
        out[kind] = base / f"out-{kind}"
    return out


@pytest.mark.parametrize("kind", list(SMALL))
def test_run_outputs(runs, kind):
    out = runs[kind]
    man = RunManifest.load(out / "manifest.json")
    assert man.status == "ok" and man.config["kind"] == kind and man.config["seed"] == 11
    for name in man.checksums:
        assert (out / name).exists()
    _check_svgs(out)


def test_variance_table_contents(runs):
    with open(runs["variance-table"] / "variance_table.csv") as fh:
        rows = list(csv.DictReader(fh))
    sources = {(r["u"], r["source"]) for r in rows}
    assert ("0.0", "closed_form") in sources and ("1.0", "closed_form") in sources
    assert ("0.5", "monte_carlo") in sources and ("0.5", "quadrature") in sources


def test_estimate_u_json(runs):
    js = json.loads((runs["estimate-u"] / "estimate.json").read_text())
    assert {r["method"] for r in js["results"]} == {"mm", "modified", "cmle"}
    for r in js["results"]:
        assert 0.0 <= r["estimate"] <= 1.0
    assert js["seed"] == 11
    assert (runs["estimate-u"] / "ess.csv").exists()


@pytest.mark.parametrize("kind", list(SMALL))
def test_replay_is_byte_identical(runs, kind):
    same, report = replay(runs[kind] / "manifest.json")
    assert same and report
    for name in report:
        assert (runs[kind] / name).read_bytes() == (runs[kind] / "replay" / name).read_bytes()


def test_threads_do_not_change_outputs(tmp_path):
    p = _write(tmp_path, "simulate-chain", SMALL["simulate-chain"], extra="replications = 3")
    raw, base = cfgmod.load(p)
    c1, m1 = run(cfgmod.resolve(raw, base), threads=1)
    raw["run"]["out"] = str(tmp_path / "t3")
    c3, m3 = run(cfgmod.resolve(raw, base), threads=3)
    num = {k: v for k, v in m1.checksums.items() if k.endswith((".csv", ".json")) and k != "manifest.json"}
    assert c1 == c3 == 0 and num and all(m3.checksums[k] == v for k, v in num.items())


# -- exit codes and flags ------------------------------------------------------
def test_exit_code_config_error(tmp_path, capsys):
    p = _write(tmp_path, "solve-limit", "[limit]\nu = 2\nhorizon = 1\n")
    assert main(["solve-limit", "--config", str(p)]) == 2
    assert "limit.u" in capsys.readouterr().err
    assert main(["discrete-time", "--config", str(_write(tmp_path, "solve-limit", "[limit]\nu=.5\nhorizon=1\n"))]) == 2


def test_exit_code_numeric_failure(tmp_path):
    p = _write(tmp_path, "solve-limit", "[limit]\nmethod = picard\nu = 0.5\nhorizon = 0.5\n"
               "replicas = 50\nmax_iter = 2\ntolerance = 1e-12\n")
    assert main(["solve-limit", "--config", str(p)]) == 3
    man = RunManifest.load(tmp_path / "out-solve-limit" / "manifest.json")
    assert man.status != "ok"
    assert (tmp_path / "out-solve-limit" / "trace.csv").exists()


def test_flags_override_config(tmp_path, obs_csv):
    out = tmp_path / "flagged"
    code = main(["estimate-u", "--input", str(obs_csv), "--method", "mm", "--method", "modified",
                 "--seed", "5", "--out", str(out)])
    assert code == 0
    js = json.loads((out / "estimate.json").read_text())
    assert [r["method"] for r in js["results"]] == ["mm", "modified"] and js["seed"] == 5


def test_trace_flag_switches_to_picard(tmp_path):
    p = _write(tmp_path, "solve-limit", SMALL["solve-limit"])
    assert main(["solve-limit", "--config", str(p), "--trace", "--out", str(tmp_path / "tr")]) == 0
    assert (tmp_path / "tr" / "trace.csv").exists() and (tmp_path / "tr" / "trace.svg").exists()


# -- svg -----------------------------------------------------------------------
def test_svg_plots_exactly_the_csv_numbers(tmp_path):
    p = tmp_path / "d.csv"
    xs = np.linspace(0, 3, 7)
    with open(p, "w") as fh:
        fh.write("x,y,g\n")
        for x in map(float, xs):
            fh.write(f"{x!r},{x * x!r},a\n{x!r},{-x!r},b\n")
    series = read_series(p, "x", "y", "g")
    assert set(series) == {"g=a", "g=b"}
    line_plot(tmp_path / "d.svg", series, "x", "y")
    polys = _svg_points(tmp_path / "d.svg")
    ys = np.concatenate([xs * xs, -xs])
    px = np.array([q[0] for poly in polys for q in poly])
    py = np.array([q[1] for poly in polys for q in poly])
    # pixel coordinates are affine images of the CSV values
    ax = np.polyfit(np.tile(xs, 2), px, 1)
    ay = np.polyfit(ys, py, 1)
    assert np.max(np.abs(np.polyval(ax, np.tile(xs, 2)) - px)) < 0.01
    assert np.max(np.abs(np.polyval(ay, ys) - py)) < 0.01
