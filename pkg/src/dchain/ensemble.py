"""Path ensembles and their on-disk container.

Container layout (all little endian)::

    magic      4s   b"DCHN"
    version    u2   1
    kind       u2   0 = path ensemble, 1 = law ensemble
    n          u8   number of paths
    steps      u8   number of stored time steps (points = steps + 1)
    dt         f8   spacing of the stored time grid
    seed       u8
    generation i8   Picard generation (-1 for plain path ensembles)
    wrap       u1   circular chain flag
    pad        7x
    closure    16s  ascii, NUL padded
    body       f8 * n * (steps + 1), particle major
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridError

MAGIC = b"DCHN"
VERSION = 1
_HEADER = struct.Struct("<4sHHQQdQqB7x16s")


@dataclass(eq=False)
class PathEnsemble:
    """Positions of ``n`` paths on a uniform grid ``times = k * dt``.

    ``values`` has shape ``(n, steps + 1)``; row ``i`` is path ``i``.
    """

    values: np.ndarray
    dt: float
    seed: int = 0
    wraparound: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("path values must be a 2-d array (paths x times)")
        self.dt = float(self.dt)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; no interpolation."""
        k = int(round(t / self.dt)) if self.dt > 0 else 0
        if k < 0 or k > self.steps or abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise GridError(f"t={t!r} is not on the grid (dt={self.dt}, steps={self.steps})")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.index_of(t)]

    def same_grid(self, other: "PathEnsemble") -> bool:
        return self.steps == other.steps and abs(self.dt - other.dt) <= 1e-12 * max(1.0, self.dt)

    # -- persistence --------------------------------------------------------
    _kind = 0

    def _generation(self) -> int:
        return -1

    def _closure(self) -> str:
        return ""

    def save(self, path) -> None:
        header = _HEADER.pack(MAGIC, VERSION, self._kind, self.n, self.steps, self.dt,
                              int(self.seed) & (2**64 - 1), self._generation(),
                              1 if self.wraparound else 0,
                              self._closure().encode("ascii")[:16])
        with open(Path(path), "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    def to_csv(self, path) -> None:
        """Long-format export: ``t,particle,value``."""
        times = self.times
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "particle", "value"])
            for k, t in enumerate(times):
                for i in range(self.n):
                    w.writerow([repr(float(t)), i, repr(float(self.values[i, k]))])


@dataclass(eq=False)
class LawEnsemble(PathEnsemble):
    """Equal-weight path sample representing a law on path space."""

    generation: int = 0
    closure: str = ""

    _kind = 1

    def __post_init__(self):
        super().__post_init__()
        self.wraparound = False

    def _generation(self) -> int:
        return int(self.generation)

    def _closure(self) -> str:
        return self.closure

    @classmethod
    def from_paths(cls, ens: PathEnsemble, generation: int = 0, closure: str = "") -> "LawEnsemble":
        return cls(ens.values, ens.dt, ens.seed, False, dict(ens.meta), generation, closure)


def load_ensemble(path) -> PathEnsemble:
    """Read a container written by :meth:`PathEnsemble.save`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for an ensemble header")
    magic, version, kind, n, steps, dt, seed, generation, wrap, closure = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != n * (steps + 1):
        raise ValueError(f"body holds {body.size} values, header promises {n * (steps + 1)}")
    values = body.reshape(n, steps + 1).astype(float)
    if kind == 1:
        return LawEnsemble(values, dt, seed, False, {}, generation, closure.rstrip(b"\0").decode("ascii"))
    return PathEnsemble(values, dt, seed, bool(wrap))
