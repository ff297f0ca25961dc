"""Interaction kernels and the mixed chain / mean-field drift.

A kernel is the two-point function ``btilde(t, x, y)``; the drift felt by a
particle at ``x`` is obtained by integrating it against the weighted measure
``u * delta(neighbor) + (1 - u) * law``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, InvalidLawError

KINDS = ("linear_mean_revert", "linear_repulsive", "affine", "tabulated_lipschitz")

# pairwise kernel evaluations per chunk when integrating a generic kernel
_CHUNK = 1 << 22


@dataclass(frozen=True)
class MixtureWeight:
    """Weight ``u`` of the directed-chain neighbour, in [0, 1]."""

    u: float

    def __post_init__(self):
        u = float(self.u)
        if not (0.0 <= u <= 1.0) or not np.isfinite(u):
            raise DomainError(f"mixture weight must lie in [0, 1], got {self.u!r}")
        object.__setattr__(self, "u", u)

    def __float__(self) -> float:
        return self.u


def as_weight(u) -> float:
    """Validate ``u`` (a float or :class:`MixtureWeight`) and return it as float."""
    if isinstance(u, MixtureWeight):
        return u.u
    return MixtureWeight(u).u


@dataclass(frozen=True, eq=False)
class MeanFieldHandle:
    """How the law term of the drift is represented.

    ``kind`` is ``"sample_cloud"`` (weighted atoms), ``"known_mean"`` (only the
    first moment is known; exact for affine kernels) or ``"zero"`` (the law is
    a point mass at the origin).
    """

    kind: str
    samples: np.ndarray | None = None
    weights: np.ndarray | None = None
    mean: float = 0.0
    note: str = ""

    @classmethod
    def cloud(cls, samples, weights=None, note: str = "") -> "MeanFieldHandle":
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            raise InvalidLawError("empty sample cloud")
        if weights is None:
            weights = np.full(samples.size, 1.0 / samples.size)
        else:
            weights = np.asarray(weights, dtype=float).ravel()
            if weights.shape != samples.shape:
                raise InvalidLawError("weights and samples differ in length")
            if np.any(weights < 0):
                raise InvalidLawError("negative weight in sample cloud")
            total = weights.sum()
            if abs(total - 1.0) > 1e-12:
                raise InvalidLawError(f"cloud weights sum to {total!r}, not 1")
        return cls("sample_cloud", samples, weights, note=note)

    @classmethod
    def known_mean(cls, mean: float, note: str = "") -> "MeanFieldHandle":
        return cls("known_mean", mean=float(mean), note=note)

    @classmethod
    def zero(cls, note: str = "") -> "MeanFieldHandle":
        return cls("zero", note=note)

    def first_moment(self) -> float:
        if self.kind == "sample_cloud":
            return float(np.sum(self.weights * self.samples))
        if self.kind == "known_mean":
            return self.mean
        if self.kind == "zero":
            return 0.0
        raise InvalidLawError(f"unknown law representation {self.kind!r}")


@dataclass(frozen=True)
class DriftKernel:
    """Interaction function ``btilde(t, x, y)`` with Lipschitz/growth metadata.

    Built-in kernels are time homogeneous.  Affine kernels evaluate
    ``a_x * x + a_y * y + c``; tabulated kernels interpolate bilinearly on a
    rectangular grid and refuse to extrapolate.
    """

    kind: str
    a_x: float = 0.0
    a_y: float = 0.0
    c: float = 0.0
    lipschitz_constant: float = 0.0
    growth_constant: float = 0.0
    grid_x: np.ndarray | None = field(default=None, repr=False, compare=False)
    grid_y: np.ndarray | None = field(default=None, repr=False, compare=False)
    table: np.ndarray | None = field(default=None, repr=False, compare=False)

    # -- constructors -------------------------------------------------------
    @classmethod
    def affine(cls, a_x: float, a_y: float, c: float = 0.0, kind: str = "affine") -> "DriftKernel":
        a_x, a_y, c = float(a_x), float(a_y), float(c)
        lip = max(abs(a_x), abs(a_y))
        growth = max(lip, abs(c))
        return cls(kind, a_x, a_y, c, lip, growth)

    @classmethod
    def mean_revert(cls) -> "DriftKernel":
        return cls.affine(-1.0, 1.0, 0.0, kind="linear_mean_revert")

    @classmethod
    def repulsive(cls) -> "DriftKernel":
        return cls.affine(1.0, -1.0, 0.0, kind="linear_repulsive")

    @classmethod
    def zero(cls) -> "DriftKernel":
        return cls.affine(0.0, 0.0, 0.0)

    @classmethod
    def tabulated(cls, xs, ys, values) -> "DriftKernel":
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        values = np.asarray(values, dtype=float)
        if xs.ndim != 1 or ys.ndim != 1 or xs.size < 2 or ys.size < 2:
            raise DomainError("tabulated kernel needs at least a 2x2 grid")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise DomainError("grid coordinates must be strictly increasing")
        if values.shape != (xs.size, ys.size):
            raise DomainError(f"table shape {values.shape} does not match grid {(xs.size, ys.size)}")
        if not np.all(np.isfinite(values)):
            raise DomainError("non-finite value in kernel table")
        # the bilinear interpolant is piecewise linear along each axis, so its
        # slopes are bounded by the cell-edge difference quotients
        dx = np.abs(np.diff(values, axis=0)) / np.diff(xs)[:, None]
        dy = np.abs(np.diff(values, axis=1)) / np.diff(ys)[None, :]
        lip = float(max(dx.max(), dy.max()))
        # |f| on a cell is at most the largest corner value; 1+|x|+|y| is at
        # least its smallest corner value
        absv = np.abs(values)
        cell_max = np.maximum.reduce([absv[:-1, :-1], absv[1:, :-1], absv[:-1, 1:], absv[1:, 1:]])
        ax = np.abs(xs)
        ay = np.abs(ys)
        cx = np.minimum(ax[:-1], ax[1:])
        cx[(xs[:-1] < 0) & (xs[1:] > 0)] = 0.0
        cy = np.minimum(ay[:-1], ay[1:])
        cy[(ys[:-1] < 0) & (ys[1:] > 0)] = 0.0
        denom = 1.0 + cx[:, None] + cy[None, :]
        growth = float(max((cell_max / denom).max(), lip))
        return cls("tabulated_lipschitz", lipschitz_constant=lip, growth_constant=growth,
                   grid_x=xs, grid_y=ys, table=values)

    @classmethod
    def from_csv(cls, path) -> "DriftKernel":
        """Load a tabulated kernel from a ``x,y,value`` grid file."""
        rows = []
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            if header != ["x", "y", "value"]:
                raise DomainError(f"expected header x,y,value, got {','.join(header)}")
            for rec in reader:
                if not rec or not "".join(rec).strip():
                    continue
                rows.append([float(v) for v in rec])
        data = np.asarray(rows, dtype=float)
        if data.ndim != 2 or data.shape[1] != 3:
            raise DomainError("malformed kernel grid file")
        xs = np.unique(data[:, 0])
        ys = np.unique(data[:, 1])
        if data.shape[0] != xs.size * ys.size:
            raise DomainError("kernel grid file is not a complete rectangular grid")
        expect_x = np.repeat(xs, ys.size)
        expect_y = np.tile(ys, xs.size)
        if not (np.array_equal(data[:, 0], expect_x) and np.array_equal(data[:, 1], expect_y)):
            raise DomainError("kernel grid rows must be row-major with increasing x then y")
        return cls.tabulated(xs, ys, data[:, 2].reshape(xs.size, ys.size))

    def to_csv(self, path) -> None:
        if self.kind != "tabulated_lipschitz":
            raise DomainError("only tabulated kernels are written as grid files")
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "value"])
            for i, x in enumerate(self.grid_x):
                for j, y in enumerate(self.grid_y):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(self.table[i, j]))])

    # -- evaluation ---------------------------------------------------------
    @property
    def is_affine(self) -> bool:
        return self.kind != "tabulated_lipschitz"

    @property
    def is_zero(self) -> bool:
        return self.is_affine and self.a_x == 0.0 and self.a_y == 0.0 and self.c == 0.0

    def __call__(self, t, x, y):
        if self.is_affine:
            return self.a_x * np.asarray(x, dtype=float) + self.a_y * np.asarray(y, dtype=float) + self.c
        return self._bilinear(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def _bilinear(self, x, y):
        xs, ys, v = self.grid_x, self.grid_y, self.table
        x, y = np.broadcast_arrays(x, y)
        if np.any(x < xs[0]) or np.any(x > xs[-1]) or np.any(y < ys[0]) or np.any(y > ys[-1]):
            raise DomainError(
                f"tabulated kernel queried outside [{xs[0]}, {xs[-1]}] x [{ys[0]}, {ys[-1]}]")
        i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        j = np.clip(np.searchsorted(ys, y, side="right") - 1, 0, ys.size - 2)
        fx = (x - xs[i]) / (xs[i + 1] - xs[i])
        fy = (y - ys[j]) / (ys[j + 1] - ys[j])
        out = (v[i, j] * (1 - fx) * (1 - fy) + v[i + 1, j] * fx * (1 - fy)
               + v[i, j + 1] * (1 - fx) * fy + v[i + 1, j + 1] * fx * fy)
        return out if out.ndim else float(out)

    def mean_field(self, t, x, law: MeanFieldHandle):
        """``∫ btilde(t, x, y) law(dy)`` for scalar or array ``x``."""
        if law is None:
            raise InvalidLawError("a law is required for the mean-field term")
        x = np.asarray(x, dtype=float)
        if self.is_affine:
            return self.a_x * x + self.a_y * law.first_moment() + self.c
        if law.kind != "sample_cloud":
            raise InvalidLawError("non-affine kernels need a sample-cloud law")
        return self._cloud_average(t, x, law.samples, law.weights)

    def _cloud_average(self, t, x, ys, ws):
        flat = x.ravel()
        out = np.empty(flat.size)
        step = max(1, _CHUNK // max(ys.size, 1))
        for lo in range(0, flat.size, step):
            block = self(t, flat[lo:lo + step, None], ys[None, :])
            out[lo:lo + step] = block @ ws
        return out.reshape(x.shape) if x.ndim else float(out[0])


def eval_kernel(kernel: DriftKernel, t: float, x, y):
    return kernel(t, x, y)


def eval_mixed_drift(kernel: DriftKernel, t: float, x, neighbor, law: MeanFieldHandle | None, u) -> float:
    """``u * btilde(t, x, neighbor) + (1 - u) * ∫ btilde(t, x, y) law(dy)``."""
    u = as_weight(u)
    chain = kernel(t, x, neighbor)
    if u == 1.0:
        return chain
    if law is None:
        raise InvalidLawError("law is required when u < 1")
    mf = kernel.mean_field(t, x, law)
    if u == 0.0:
        return mf
    return u * chain + (1.0 - u) * mf


def centered_kernel(kernel: DriftKernel, t: float, x, z, law: MeanFieldHandle):
    """``btilde(t, x, z) - ∫ btilde(t, x, y) law(dy)``."""
    return kernel(t, x, z) - kernel.mean_field(t, x, law)


def kernel_from_spec(spec: str) -> DriftKernel:
    """Build a kernel from a short text spec.

    ``linear_mean_revert``, ``linear_repulsive``, ``zero``,
    ``affine:a_x,a_y,c`` or ``tabulated:<path>``.
    """
    spec = spec.strip()
    if spec == "linear_mean_revert":
        return DriftKernel.mean_revert()
    if spec == "linear_repulsive":
        return DriftKernel.repulsive()
    if spec == "zero":
        return DriftKernel.zero()
    if spec.startswith("affine:"):
        parts = [float(p) for p in spec[len("affine:"):].split(",")]
        if len(parts) != 3:
            raise DomainError("affine kernel spec needs three numbers a_x,a_y,c")
        return DriftKernel.affine(*parts)
    if spec.startswith("tabulated:"):
        return DriftKernel.from_csv(spec[len("tabulated:"):])
    raise DomainError(f"unknown kernel spec {spec!r}")
