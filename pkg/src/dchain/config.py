"""Experiment configuration: INI sections with typed keys.

Grammar (one ``key = value`` per line, ``#`` or ``;`` comments)::

    [run]
    kind = variance-table        # experiment name
    seed = 12345
    out = results/vt
    replications = 1

    [oracle]                     # one section per parameter block
    u_list = 0, 0.5, 0.9, 1      # lists are comma separated

Every key has a type; ``validate`` reports unknown sections and keys,
missing required keys, type errors and simple consistency problems
(``dt > horizon``, probabilities outside [0, 1]).
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

KINDS = ("simulate-chain", "solve-limit", "variance-table", "convergence-study",
         "estimate-u", "filter-study", "discrete-time")

REQUIRED = object()


def _floats(s: str) -> list:
    return [float(p) for p in s.split(",") if p.strip()]


def _ints(s: str) -> list:
    return [int(p) for p in s.split(",") if p.strip()]


def _strs(s: str) -> list:
    return [p.strip() for p in s.split(",") if p.strip()]


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


TYPES = {"int": int, "float": float, "str": str, "bool": _bool,
         "floats": _floats, "ints": _ints, "strs": _strs}

# section -> key -> (type, default or REQUIRED)
RUN = {"kind": ("str", REQUIRED), "seed": ("int", REQUIRED), "out": ("str", REQUIRED),
       "replications": ("int", 1)}

BLOCKS = {
    "simulate-chain": {"chain": {
        "n": ("int", REQUIRED), "u": ("float", REQUIRED), "horizon": ("float", REQUIRED),
        "dt": ("float", 0.01), "kernel": ("str", "linear_mean_revert"),
        "initial": ("str", "point:0"), "exclude_self": ("bool", False),
        "record_stride": ("int", 1), "write_paths": ("bool", False)}},
    "solve-limit": {"limit": {
        "u": ("float", REQUIRED), "horizon": ("float", REQUIRED), "method": ("str", "nested"),
        "depth": ("int", 30), "replicas": ("int", 10000), "closure": ("str", "independent_bm"),
        "dt": ("float", 0.01), "kernel": ("str", "linear_mean_revert"),
        "initial": ("str", "point:0"), "max_iter": ("int", 30), "tolerance": ("float", 1e-3),
        "record_stride": ("int", 10)}},
    "variance-table": {"oracle": {
        "u_list": ("floats", REQUIRED), "t_max": ("float", REQUIRED), "t_points": ("int", 21),
        "mc_replicas": ("int", 0), "dt": ("float", 0.01), "depth": ("int", 30)}},
    "convergence-study": {"study": {
        "n_list": ("ints", REQUIRED), "u": ("float", REQUIRED), "horizon": ("float", 1.0),
        "dt": ("float", 0.01), "kernel": ("str", "linear_mean_revert")}},
    "estimate-u": {"inference": {
        "input": ("str", REQUIRED), "methods": ("strs", "mm, modified, cmle"),
        "depth": ("int", 3), "particles": ("int", 300), "candidates": ("floats", ""),
        "closure": ("str", "mckean_vlasov"), "resample": ("bool", True)}},
    "filter-study": {"inference": {
        "u": ("float", REQUIRED), "horizon": ("float", REQUIRED), "dt": ("float", 0.01),
        "depth": ("int", 3), "particles": ("int", 2000), "input": ("str", ""),
        "closure": ("str", "mckean_vlasov"), "resample": ("bool", False)}},
    "discrete-time": {"discrete": {
        "a": ("float", REQUIRED), "u": ("float", REQUIRED), "n_max": ("int", REQUIRED),
        "samples": ("int", 100000)}},
}

_UNIT = {"u", "a"}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    out: str
    replications: int = 1
    params: dict = field(default_factory=dict)
    source: str = ""

    def snapshot(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "out": self.out,
                "replications": self.replications, "params": dict(self.params)}

    @classmethod
    def from_snapshot(cls, snap: dict, out: str | None = None) -> "ExperimentConfig":
        return cls(snap["kind"], int(snap["seed"]), out or snap["out"], int(snap["replications"]),
                   dict(snap["params"]), "manifest")


def read_ini(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}", [f"missing file {p}"])
    cp.read(p)
    return cp


def _raw(cp: configparser.ConfigParser | None) -> dict:
    if cp is None:
        return {}
    return {s: dict(cp.items(s)) for s in cp.sections()}


def validate_raw(raw: dict, base: Path | None = None) -> list[str]:
    """Diagnostics for a raw ``{section: {key: text}}`` mapping; empty when valid."""
    diags: list[str] = []
    run = raw.get("run", {})
    for key, (_, default) in RUN.items():
        if default is REQUIRED and key not in run:
            diags.append(f"missing required key run.{key}")
    kind = run.get("kind")
    if kind is not None and kind not in KINDS:
        diags.append(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
        kind = None
    for key, text in run.items():
        if key not in RUN:
            diags.append(f"unknown key run.{key}")
            continue
        try:
            v = TYPES[RUN[key][0]](text)
            if key == "replications" and v < 1:
                diags.append("run.replications must be >= 1")
        except ValueError:
            diags.append(f"run.{key}: cannot parse {text!r} as {RUN[key][0]}")
    allowed = {"run"} | (set(BLOCKS[kind]) if kind else set().union(*[set(b) for b in BLOCKS.values()]))
    for section in raw:
        if section not in allowed:
            diags.append(f"unknown section [{section}]" + (f" for kind {kind}" if kind else ""))
    if kind is None:
        return diags
    for section, schema in BLOCKS[kind].items():
        given = raw.get(section, {})
        values = {}
        for key, (typ, default) in schema.items():
            if key not in given:
                if default is REQUIRED:
                    diags.append(f"missing required key {section}.{key}")
                continue
            try:
                values[key] = TYPES[typ](given[key])
            except ValueError:
                diags.append(f"{section}.{key}: cannot parse {given[key]!r} as {typ}")
        for key in given:
            if key not in schema:
                diags.append(f"unknown key {section}.{key}")
        for key in _UNIT & set(values):
            if not 0.0 <= values[key] <= 1.0:
                diags.append(f"{section}.{key} must lie in [0, 1], got {values[key]}")
        if "a" in values and not 0.0 < values["a"] < 1.0:
            diags.append(f"{section}.a must lie in (0, 1), got {values['a']}")
        for u in values.get("u_list", []):
            if not 0.0 <= u <= 1.0:
                diags.append(f"{section}.u_list entry {u} outside [0, 1]")
        if "dt" in values and values["dt"] <= 0:
            diags.append(f"{section}.dt must be positive")
        for hkey in ("horizon", "t_max"):
            if hkey in values:
                if values[hkey] <= 0:
                    diags.append(f"{section}.{hkey} must be positive")
                elif values.get("dt", 0.01) > values[hkey]:
                    diags.append(f"{section}.dt ({values.get('dt', 0.01)}) exceeds "
                                 f"{section}.{hkey} ({values[hkey]})")
        for ikey in ("n", "depth", "replicas", "particles", "n_max", "samples", "max_iter"):
            if ikey in values and values[ikey] < 1:
                diags.append(f"{section}.{ikey} must be >= 1")
        if "closure" in values and values["closure"] not in ("independent_bm", "mckean_vlasov",
                                                              "frozen_law"):
            diags.append(f"{section}.closure: unknown closure {values['closure']!r}")
        if values.get("method") not in (None, "nested", "picard"):
            diags.append(f"{section}.method must be nested or picard")
        for m in values.get("methods", []):
            if m not in ("mm", "modified", "cmle"):
                diags.append(f"{section}.methods: unknown method {m!r}")
        for fkey in ("input",):
            v = values.get(fkey)
            if v and v != "bundled":
                p = Path(v)
                if base is not None and not p.is_absolute():
                    p = base / p
                if not p.exists():
                    diags.append(f"{section}.{fkey}: file not found: {v}")
        if "kernel" in values:
            diags += _kernel_diag(section, values["kernel"], base)
        diags += _resource_diag(kind, section, values)
        init = values.get("initial")
        if init:
            try:
                parse_initial(init, base, check_only=True)
            except ConfigError as exc:
                diags.append(f"{section}.initial: {exc}")
    return diags


def _kernel_diag(section: str, spec: str, base: Path | None) -> list[str]:
    from .drift import kernel_from_spec

    if spec.startswith("tabulated:"):
        p = Path(spec[len("tabulated:"):])
        if base is not None and not p.is_absolute():
            p = base / p
        if not p.exists():
            return [f"{section}.kernel: file not found: {p}"]
        spec = "tabulated:" + str(p)
    try:
        kernel_from_spec(spec)
    except Exception as exc:  # any parse failure is a diagnostic
        return [f"{section}.kernel: {exc}"]
    return []


MEMORY_BUDGET = 2 * 1024**3


def _resource_diag(kind: str, section: str, v: dict) -> list[str]:
    dt = v.get("dt", 0.01)
    if not dt > 0:
        return []
    if kind == "simulate-chain" and {"n", "horizon"} <= set(v):
        points = int(round(v["horizon"] / dt)) // max(1, v.get("record_stride", 1)) + 1
        need = 8 * v["n"] * points
    elif kind == "solve-limit" and "horizon" in v:
        points = int(round(v["horizon"] / dt)) + 1
        need = 8 * v.get("replicas", 10000) * points * 3
    else:
        return []
    if need > MEMORY_BUDGET:
        return [f"{section}: estimated memory {need} bytes exceeds budget {MEMORY_BUDGET}"]
    return []


def parse_initial(text: str, base: Path | None = None, check_only: bool = False):
    """``point:c``, ``gaussian:mean,var`` or ``file:path``."""
    from .chain import InitialLaw

    kind, _, arg = text.partition(":")
    kind = kind.strip()
    try:
        if kind == "point":
            return InitialLaw.point(float(arg or 0.0))
        if kind == "gaussian":
            m, v = _floats(arg)
            return InitialLaw.gaussian(m, v)
    except ValueError as exc:
        raise ConfigError(f"bad initial law {text!r}: {exc}") from None
    if kind == "file":
        p = Path(arg.strip())
        if base is not None and not p.is_absolute():
            p = base / p
        if not p.exists():
            raise ConfigError(f"initial sample file not found: {arg}")
        return None if check_only else InitialLaw.from_file(p)
    raise ConfigError(f"bad initial law {text!r}")


def resolve(raw: dict, base: Path | None = None) -> ExperimentConfig:
    """Typed config with defaults filled in; raises ConfigError listing all problems."""
    diags = validate_raw(raw, base)
    if diags:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(diags), diags)
    run = raw["run"]
    kind = run["kind"]
    params: dict = {}
    for section, schema in BLOCKS[kind].items():
        given = raw.get(section, {})
        block = {}
        for key, (typ, default) in schema.items():
            text = given.get(key)
            if text is None:
                block[key] = TYPES[typ](default) if isinstance(default, str) and typ != "str" else default
            else:
                block[key] = TYPES[typ](text)
        for key in ("input",):
            if block.get(key) and block[key] != "bundled" and base is not None:
                p = Path(block[key])
                block[key] = str(p if p.is_absolute() else (base / p).resolve())
        if "initial" in block and block["initial"].startswith("file:") and base is not None:
            p = Path(block["initial"][5:].strip())
            block["initial"] = "file:" + str(p if p.is_absolute() else (base / p).resolve())
        params[section] = block
    return ExperimentConfig(kind, int(run["seed"]), run["out"], int(run.get("replications", 1)),
                            params)


def load(path=None, overrides: dict | None = None) -> tuple[dict, Path | None]:
    """Raw mapping from a file (or empty) with ``run`` overrides applied."""
    raw = _raw(read_ini(path)) if path else {}
    base = Path(path).resolve().parent if path else Path.cwd()
    for key, value in (overrides or {}).items():
        if value is not None:
            raw.setdefault("run", {})[key] = str(value)
    return raw, base


def validate(path=None, overrides: dict | None = None) -> list[str]:
    """Dry run: diagnostics only, never raises for content problems."""
    try:
        raw, base = load(path, overrides)
    except ConfigError as exc:
        return list(exc.diagnostics or [str(exc)])
    except configparser.Error as exc:
        return [f"config syntax error: {exc}"]
    return validate_raw(raw, base)
