"""Command line runner: config-driven studies with CSV/JSON outputs and SVG plots.

Every run writes ``manifest.json`` (config snapshot, package version,
wall-clock, SHA-256 of every output) into its output directory.
``dchain replay <manifest>`` re-executes the snapshot and compares the
numeric outputs byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numeric or convergence failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import svg
from .config import ExperimentConfig
from .errors import ConfigError, DChainError, DomainError, GridError, InvalidLawError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERIC_SUFFIXES = (".csv", ".json")
BUNDLED_OBSERVATION = "u06_observation.csv"


def _version() -> str:
    from . import __version__
    return __version__


# ---------------------------------------------------------------------------
# output collection
# ---------------------------------------------------------------------------
def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class Collector:
    """Single writer for all artifacts of a run; records what was written."""

    out: Path
    written: list = field(default_factory=list)

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_num(v) for v in r])
        self.written.append(name)
        return p

    def json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.written.append(name)
        return p

    def plot(self, csv_name: str, x: str, y: str, group=None, title: str = "", **kw) -> Path:
        p = svg.plot_csv(self.out / csv_name, x, y, group, title, **kw)
        self.written.append(str(p.relative_to(self.out)))
        return p

    def binary(self, name: str, writer) -> Path:
        p = self.path(name)
        writer(p)
        self.written.append(name)
        return p


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_clock: float
    started: str
    checksums: dict
    threads: int = 1
    status: str = "ok"

    def to_json(self) -> dict:
        return {"config": self.config, "version": self.version, "wall_clock_seconds": self.wall_clock,
                "started_utc": self.started, "checksums": self.checksums, "threads": self.threads,
                "status": self.status}

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        return cls(d["config"], d["version"], d["wall_clock_seconds"], d["started_utc"],
                   d["checksums"], d.get("threads", 1), d.get("status", "ok"))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------
def _rep_seed(seed: int, r: int, reps: int) -> int:
    from .rng import derive_seed
    return seed if reps == 1 else derive_seed(seed, 1, r)  # label 1: replication


def _pool_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _oracle_applies(kernel_spec: str, initial: str) -> bool:
    return kernel_spec == "linear_mean_revert" and initial.replace(" ", "") in ("point:0", "point:0.0")


def run_simulate_chain(cfg: ExperimentConfig, col: Collector, threads: int) -> int:
    from .chain import ChainConfig, simulate_chain
    from .drift import kernel_from_spec
    from .oracle import variance_curve

    p = cfg.params["chain"]
    kernel = kernel_from_spec(p["kernel"])
    init = cfgmod.parse_initial(p["initial"])

    def one(r):
        cc = ChainConfig(n=p["n"], u=p["u"], dt=p["dt"], horizon=p["horizon"],
                         seed=_rep_seed(cfg.seed, r, cfg.replications), initial_law=init,
                         record_stride=p["record_stride"], exclude_self=p["exclude_self"])
        return simulate_chain(cc, kernel)

    ensembles = _pool_map(one, range(cfg.replications), threads)
    rows = []
    for r, ens in enumerate(ensembles):
        col.binary(f"ensemble_{r}.dchn", ens.save)
        if p["write_paths"]:
            col.binary(f"paths_{r}.csv", ens.to_csv)
        for t, v in zip(ens.times, ens.values.var(axis=0)):
            rows.append((float(t), f"chain_rep{r}", float(v)))
    if _oracle_applies(p["kernel"], p["initial"]):
        curve = variance_curve(ensembles[0].times, p["u"])
        rows += [(t, "oracle", v) for t, v in curve.rows()]
    col.csv("variance.csv", ["t", "series", "value"], rows)
    col.plot("variance.csv", "t", "value", "series", "empirical variance across the ring")
    return EXIT_OK


def run_solve_limit(cfg: ExperimentConfig, col: Collector, threads: int) -> int:
    from .drift import kernel_from_spec
    from .ensemble import LawEnsemble
    from .limit import NestedConfig, PicardConfig, picard_solve, solve_nested_pair
    from .oracle import variance_curve

    p = cfg.params["limit"]
    kernel = kernel_from_spec(p["kernel"])
    init = cfgmod.parse_initial(p["initial"])
    status = EXIT_OK
    if p["method"] == "nested":
        nc = NestedConfig(depth=p["depth"], replicas=p["replicas"], closure=p["closure"], dt=p["dt"],
                          horizon=p["horizon"], seed=cfg.seed, initial_law=init,
                          record_stride=p["record_stride"])
        x, xt = solve_nested_pair(nc, kernel, p["u"]).pair()
        law = LawEnsemble.from_paths(x, closure=p["closure"])
        rows = []
        for k, t in enumerate(x.times):
            a, b = x.values[:, k], xt.values[:, k]
            rows += [(float(t), "var_x", float(a.var())), (float(t), "var_x_tilde", float(b.var())),
                     (float(t), "cov_x_x_tilde", float(np.mean((a - a.mean()) * (b - b.mean()))))]
    else:
        pc = PicardConfig(max_iter=p["max_iter"], tolerance=p["tolerance"], replicas=p["replicas"],
                          dt=p["dt"], horizon=p["horizon"], seed=cfg.seed, initial_law=init)
        res = picard_solve(pc, kernel, p["u"], raise_on_failure=False)
        col.csv("trace.csv", ["iter", "distance"], [(i + 1, d) for i, d in enumerate(res.trace)])
        col.plot("trace.csv", "iter", "distance", title="Picard distance", logy=True, markers=True)
        law = res.law
        stride = max(1, p["record_stride"])
        idx = np.arange(0, law.steps + 1, stride)
        rows = [(float(law.times[k]), "var_x", float(law.values[:, k].var())) for k in idx]
        if not res.converged:
            status = EXIT_NUMERIC
    col.binary("law.dchn", law.save)
    if _oracle_applies(p["kernel"], p["initial"]):
        ts = sorted({r[0] for r in rows})
        rows += [(t, "oracle", v) for t, v in variance_curve(ts, p["u"]).rows()]
    col.csv("moments.csv", ["t", "series", "value"], rows)
    col.plot("moments.csv", "t", "value", "series", f"limit law, u={p['u']}")
    return status


def run_variance_table(cfg: ExperimentConfig, col: Collector, threads: int) -> int:
    from .drift import DriftKernel
    from .limit import NestedConfig, solve_nested_pair
    from .oracle import variance_curve, variance_u0_closed, variance_u1_closed

    p = cfg.params["oracle"]
    ts = np.linspace(0.0, p["t_max"], p["t_points"])
    rows = []
    for u in p["u_list"]:
        rows += [(t, u, v, "quadrature") for t, v in variance_curve(ts, u).rows()]
        if u == 0.0:
            rows += [(float(t), u, variance_u0_closed(float(t)), "closed_form") for t in ts]
        if u == 1.0:
            rows += [(float(t), u, variance_u1_closed(float(t)), "closed_form") for t in ts]
    if p["mc_replicas"] > 0:
        gap = p["t_max"] / max(1, p["t_points"] - 1)
        stride = max(1, int(round(gap / p["dt"])))
        if abs(stride * p["dt"] - gap) > 1e-9 * max(1.0, gap):
            raise ConfigError("t grid spacing must be a multiple of oracle.dt for the Monte Carlo column")

        def mc(u):
            nc = NestedConfig(depth=p["depth"], replicas=p["mc_replicas"], closure="independent_bm",
                              dt=p["dt"], horizon=p["t_max"], seed=cfg.seed, record_stride=stride)
            x = solve_nested_pair(nc, DriftKernel.mean_revert(), u, keep_levels=1).x
            return [(float(t), u, float(v), "monte_carlo") for t, v in zip(x.times, x.values.var(axis=0))]

        for block in _pool_map(mc, p["u_list"], threads):
            rows += block
    col.csv("variance_table.csv", ["t", "u", "variance", "source"], rows)
    col.plot("variance_table.csv", "t", "variance", ("u", "source"), "Var X_t: oracle and Monte Carlo")
    return EXIT_OK


def run_convergence_study(cfg: ExperimentConfig, col: Collector, threads: int) -> int:
    from .drift import kernel_from_spec
    from .measures import fluctuation_study

    p = cfg.params["study"]
    res = fluctuation_study(kernel_from_spec(p["kernel"]), p["u"], p["n_list"], cfg.replications,
                            p["dt"], p["horizon"], cfg.seed)
    col.csv("fluctuation.csv", ["n", "statistic", "stderr"], list(res.rows()))
    col.plot("fluctuation.csv", "n", "statistic", title="coupled fluctuation statistic",
             logx=True, markers=True)
    col.json("fluctuation_summary.json", {"seed": cfg.seed, "slope": res.slope,
                                          "bounded": res.bounded, "replications": cfg.replications})
    return EXIT_OK


def bundled_observation_path() -> Path:
    return Path(str(resources.files("dchain") / "data" / BUNDLED_OBSERVATION))


def load_observation(spec: str):
    """``bundled``, a ``t,value`` CSV, or a binary ensemble (first particle)."""
    from .ensemble import load_ensemble
    from .inference import ObservationPath

    if spec == "bundled":
        return ObservationPath.from_csv(bundled_observation_path())
    p = Path(spec)
    if p.suffix.lower() == ".csv":
        return ObservationPath.from_csv(p)
    return ObservationPath.from_ensemble(load_ensemble(p))


def _ess_rows(times, ess, limit: int = 5000):
    stride = max(1, int(math.ceil(len(times) / limit)))
    idx = list(range(0, len(times), stride))
    if idx[-1] != len(times) - 1:
        idx.append(len(times) - 1)
    return [(float(times[k]), float(ess[k])) for k in idx]


def run_estimate_u(cfg: ExperimentConfig, col: Collector, threads: int) -> int:
    from .drift import DriftKernel
    from .inference import conditional_mle, modified_estimator, moments_estimator, particle_filter

    p = cfg.params["inference"]
    obs = load_observation(p["input"])
    results = []
    for m in p["methods"]:
        if m == "mm":
            results.append(moments_estimator(obs))
        elif m == "modified":
            results.append(modified_estimator(obs))
        else:
            cands = p["candidates"] or [round(0.1 * i, 10) for i in range(11)]
            results.append(conditional_mle(obs, None, cands, p["depth"], p["particles"], cfg.seed,
                                           p["closure"], p["resample"]))
    ref = next((r for r in results if r.method == "cmle"), results[0])
    if ref.method == "cmle":
        c = ref.diagnostics
        col.csv("cmle_scan.csv", ["candidate", "uhat"], list(zip(c["candidates"], c["uhat"])))
        col.plot("cmle_scan.csv", "candidate", "uhat", title="self-consistency scan", markers=True)
    fr = particle_filter(obs, DriftKernel.mean_revert(), ref.estimate, p["depth"], p["particles"],
                         cfg.seed, p["closure"], resample=p["resample"], warn=False)
    col.csv("ess.csv", ["t", "ess"], _ess_rows(fr.times, fr.ess))
    col.plot("ess.csv", "t", "ess", title=f"filter ESS at u={ref.estimate:.4g}")
    col.json("estimate.json", {
        "seed": cfg.seed, "input": p["input"], "T": obs.horizon, "dt": obs.dt,
        "estimate": ref.estimate, "flags": ref.flags, "diagnostics": ref.diagnostics,
        "results": [r.to_json() for r in results], "ess_filter_u": ref.estimate})
    return EXIT_OK


def run_filter_study(cfg: ExperimentConfig, col: Collector, threads: int) -> int:
    from .drift import DriftKernel
    from .inference import kalman_bucy_oracle, particle_filter, synthetic_observation

    p = cfg.params["inference"]
    if p["input"]:
        obs = load_observation(p["input"])
    else:
        obs = synthetic_observation(p["u"], p["horizon"], p["dt"], cfg.seed)
    fr = particle_filter(obs, DriftKernel.mean_revert(), p["u"], p["depth"], p["particles"],
                         cfg.seed, p["closure"], resample=p["resample"], warn=False)
    rows_kb = []
    kb = None
    if p["closure"] in ("mckean_vlasov", "independent_bm"):
        kb = kalman_bucy_oracle(obs, p["depth"], p["u"], p["closure"])
        km, kv = kb.xt_mean(), kb.xt_var()
    stride = max(1, int(math.ceil((obs.steps + 1) / 2000)))
    idx = list(range(0, obs.steps + 1, stride))
    rows = []
    for k in idx:
        t = float(fr.times[k])
        rows.append(("pf_xt_mean", t, float(fr.estimates["xt"][k]), float(fr.stderr["xt"][k])))
        rows.append(("pf_xt_second_moment", t, float(fr.estimates["xt2"][k]),
                     float(fr.stderr["xt2"][k])))
        if kb is not None:
            rows_kb.append(("kb_xt_mean", t, float(km[k]), 0.0))
            rows_kb.append(("kb_xt_second_moment", t, float(kv[k] + km[k] ** 2), 0.0))
    col.csv("filter.csv", ["quantity", "t", "value", "stderr"], rows + rows_kb)
    col.plot("filter.csv", "t", "value", "quantity", "filter vs Kalman-Bucy")
    col.csv("ess.csv", ["t", "ess"], _ess_rows(fr.times, fr.ess))
    col.plot("ess.csv", "t", "ess", title="effective sample size")
    col.json("filter_summary.json", {"seed": cfg.seed, "u": p["u"], "depth": p["depth"],
                                     "particles": p["particles"], "collapse_time": fr.collapse_time,
                                     "resampled_at": fr.resampled_at})
    return EXIT_OK


def run_discrete_time(cfg: ExperimentConfig, col: Collector, threads: int) -> int:
    from .oracle import discrete_second_moment, discrete_second_moment_hyp2f1, simulate_discrete
    from .rng import derive_seed

    p = cfg.params["discrete"]
    a, u = p["a"], p["u"]

    def one(n):
        m, se = simulate_discrete(n, a, u, p["samples"], derive_seed(cfg.seed, n), return_se=True)
        return [(n, "double_sum", discrete_second_moment(n, a, u), 0.0),
                (n, "hypergeometric", discrete_second_moment_hyp2f1(n, a, u), 0.0),
                (n, "monte_carlo", m, se)]

    rows = [r for block in _pool_map(one, range(1, p["n_max"] + 1), threads) for r in block]
    col.csv("discrete.csv", ["n", "series", "value", "stderr"], rows)
    col.plot("discrete.csv", "n", "value", "series", f"E X_n^2, a={a}, u={u}", markers=True)
    return EXIT_OK


RUNNERS = {"simulate-chain": run_simulate_chain, "solve-limit": run_solve_limit,
           "variance-table": run_variance_table, "convergence-study": run_convergence_study,
           "estimate-u": run_estimate_u, "filter-study": run_filter_study,
           "discrete-time": run_discrete_time}


def run(cfg: ExperimentConfig, threads: int = 1) -> tuple[int, RunManifest]:
    """Execute one study, write its artifacts and ``manifest.json``."""
    if cfg.kind not in RUNNERS:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}", [f"unknown kind {cfg.kind}"])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    col = Collector(out)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    code = RUNNERS[cfg.kind](cfg, col, max(1, int(threads)))
    wall = time.perf_counter() - t0
    sums = {name: sha256(out / name) for name in sorted(set(col.written))}
    man = RunManifest(cfg.snapshot(), _version(), wall, started, sums, int(threads),
                      "ok" if code == EXIT_OK else "numeric_failure")
    (out / "manifest.json").write_text(json.dumps(man.to_json(), indent=2, sort_keys=True) + "\n")
    return code, man


def replay(manifest_path, out=None, threads: int = 1) -> tuple[bool, dict]:
    """Re-run a manifest; ``{file: (old, new)}`` for numeric outputs and overall equality."""
    man = RunManifest.load(manifest_path)
    dest = out or str(Path(manifest_path).resolve().parent / "replay")
    cfg = ExperimentConfig.from_snapshot(man.config, dest)
    _, new = run(cfg, threads)
    report = {}
    for name, old in man.checksums.items():
        if name.endswith(NUMERIC_SUFFIXES):
            report[name] = (old, new.checksums.get(name))
    same = all(a == b for a, b in report.values())
    return same, report


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------
def _global(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", help="override run.out (output directory)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replications")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dchain", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in cfgmod.KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} study")
        _global(sp)
        if kind == "estimate-u":
            sp.add_argument("--method", action="append", choices=("mm", "modified", "cmle"),
                            help="estimator (repeatable); default all three")
            sp.add_argument("--input", help="observation CSV (t,value), binary ensemble or 'bundled'")
            sp.add_argument("--depth", type=int)
            sp.add_argument("--particles", type=int)
            sp.add_argument("--candidates", help="comma separated candidate grid for cmle")
        if kind == "solve-limit":
            sp.add_argument("--trace", action="store_true", help="use Picard iteration and emit trace.csv")
    sp = sub.add_parser("validate", help="check a config without running it")
    _global(sp)
    sp = sub.add_parser("replay", help="re-run a manifest and compare numeric outputs")
    sp.add_argument("manifest")
    sp.add_argument("--out")
    sp.add_argument("--threads", type=int, default=1)
    return ap


_FLAG_KEYS = {"depth": "depth", "particles": "particles", "input": "input", "candidates": "candidates"}


def _raw_from_args(args, kind: str | None) -> tuple[dict, Path]:
    raw, base = cfgmod.load(args.config, {"seed": args.seed, "out": args.out})
    if kind is not None:
        run_sec = raw.setdefault("run", {})
        if "kind" in run_sec and run_sec["kind"] != kind:
            raise ConfigError(f"config kind {run_sec['kind']!r} does not match subcommand {kind!r}",
                              [f"run.kind is {run_sec['kind']} but subcommand is {kind}"])
        run_sec["kind"] = kind
        run_sec.setdefault("seed", "0")
        run_sec.setdefault("out", str(Path("runs") / kind))
        if kind == "estimate-u":
            inf = raw.setdefault("inference", {})
            for attr, key in _FLAG_KEYS.items():
                v = getattr(args, attr, None)
                if v is not None:
                    inf[key] = str(v)
                    if key == "input" and v != "bundled":
                        inf[key] = str(Path(v).resolve())
            if args.method:
                inf["methods"] = ",".join(args.method)
            inf.setdefault("input", "bundled")
        if kind == "solve-limit" and getattr(args, "trace", False):
            raw.setdefault("limit", {})["method"] = "picard"
    return raw, base


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            diags = cfgmod.validate(args.config, {"seed": args.seed, "out": args.out})
            for d in diags:
                print(d)
            if not diags:
                print("config OK")
            return EXIT_OK if not diags else EXIT_CONFIG
        if args.command == "replay":
            same, report = replay(args.manifest, args.out, args.threads)
            for name, (a, b) in sorted(report.items()):
                print(f"{'same' if a == b else 'DIFFERS'}  {name}")
            return EXIT_OK if same else EXIT_NUMERIC
        raw, base = _raw_from_args(args, args.command)
        cfg = cfgmod.resolve(raw, base)
        code, man = run(cfg, args.threads)
        print(f"{cfg.kind}: wrote {len(man.checksums)} files to {cfg.out} "
              f"({man.wall_clock:.2f}s, status {man.status})")
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GridError, DomainError, InvalidLawError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DChainError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
