"""Torus geometry, drift fields and stream tensors.

A configuration lives on the periodic lattice ``(Z/LZ)^d``.  Only the
positive-direction drift components ``V_{e_i}`` and the ``i < j`` stream
tensor components ``H_{e_i,e_j}`` are stored; every other component is derived
from them, so edge antisymmetry and the tensor symmetries hold by
construction.

Arrays are indexed ``[component, x_1, ..., x_d]``.  Directions are indexed
``2*axis`` for ``+e_axis`` and ``2*axis + 1`` for ``-e_axis``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

from .exceptions import OutOfRange, ReducibilityWarning

FLOAT_TOL = 1e-12
MAX_SITES = 2**31 - 1


@dataclass(frozen=True)
class LatticeDims:
    d: int
    L: int

    def __post_init__(self):
        if int(self.d) != self.d or int(self.L) != self.L:
            raise ValueError("d and L must be integers")
        if self.d not in (2, 3, 4, 5):
            raise ValueError(f"dimension d={self.d} not supported (2..5)")
        if self.L < 4:
            raise ValueError(f"torus side L={self.L} must be >= 4")
        if self.L**self.d > MAX_SITES:
            raise ValueError("torus too large to index")

    @property
    def shape(self):
        return (self.L,) * self.d

    @property
    def n_sites(self):
        return self.L**self.d

    @property
    def pairs(self):
        """Stored axis pairs ``(i, j)``, ``i < j``, in lexicographic order."""
        return list(combinations(range(self.d), 2))

    def wrap(self, coords):
        """Canonical representative of ``coords`` modulo ``L``."""
        coords = tuple(int(c) % self.L for c in coords)
        if len(coords) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(coords)}")
        return coords

    def flat_index(self, coords):
        return int(np.ravel_multi_index(self.wrap(coords), self.shape))

    def coords_of(self, index):
        return tuple(int(c) for c in np.unravel_index(index, self.shape))


@dataclass(frozen=True)
class Direction:
    axis: int
    sign: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def reverse(self):
        return Direction(self.axis, -self.sign)

    @property
    def index(self):
        return 2 * self.axis + (self.sign < 0)

    @classmethod
    def from_index(cls, index):
        return cls(index // 2, 1 if index % 2 == 0 else -1)

    def vector(self, d):
        out = np.zeros(d, dtype=np.int64)
        out[self.axis] = self.sign
        return out

    def __str__(self):
        return f"{'+' if self.sign > 0 else '-'}e{self.axis + 1}"


def directions(d):
    """All ``2d`` unit steps, in direction-index order."""
    return [Direction.from_index(n) for n in range(2 * d)]


def step_vectors(d):
    """``(2d, d)`` integer array of unit steps in direction-index order."""
    return np.array([k.vector(d) for k in directions(d)])


def is_dyadic(values, bits=40):
    """True if all entries are exact multiples of ``2**-bits``."""
    scaled = np.asarray(values, dtype=np.float64) * 2.0**bits
    return bool(np.all(np.isfinite(scaled)) and np.all(scaled == np.round(scaled)))


def _readonly(arr):
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DriftField:
    """Divergence-free drift ``V`` on the torus, stored as ``V_{e_i}(x)``."""

    dims: LatticeDims
    v: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _readonly(self.v)
        if v.shape != (self.dims.d,) + self.dims.shape:
            raise ValueError(f"drift array has shape {v.shape}, expected "
                             f"{(self.dims.d,) + self.dims.shape}")
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, dims):
        return cls(dims, np.zeros((dims.d,) + dims.shape))

    @cached_property
    def expanded(self):
        """``(2d, *shape)`` array of ``V_k(x)`` for all ``k``."""
        d = self.dims.d
        out = np.empty((2 * d,) + self.dims.shape)
        for i in range(d):
            out[2 * i] = self.v[i]
            # V_{-e_i}(x) = -V_{e_i}(x - e_i)
            out[2 * i + 1] = -np.roll(self.v[i], 1, axis=i)
        out.setflags(write=False)
        return out

    @cached_property
    def phi(self):
        """Local drift ``phi_i(x) = V_{e_i}(x) - V_{-e_i}(x)``, shape ``(d, *shape)``."""
        e = self.expanded
        out = e[0::2] - e[1::2]
        out.setflags(write=False)
        return out

    @property
    def exact(self):
        return is_dyadic(self.v)

    def __eq__(self, other):
        return (isinstance(other, DriftField) and self.dims == other.dims
                and np.array_equal(self.v, other.v))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class StreamTensorField:
    """Antisymmetric stream tensor, stored as ``H_{e_i,e_j}(x)`` for ``i < j``."""

    dims: LatticeDims
    h: np.ndarray = field(repr=False)

    def __post_init__(self):
        h = _readonly(self.h)
        n_pairs = len(self.dims.pairs)
        if h.shape != (n_pairs,) + self.dims.shape:
            raise ValueError(f"tensor array has shape {h.shape}, expected "
                             f"{(n_pairs,) + self.dims.shape}")
        object.__setattr__(self, "h", h)

    @classmethod
    def zeros(cls, dims):
        return cls(dims, np.zeros((len(dims.pairs),) + dims.shape))

    def positive(self, i, j):
        """``H_{e_i,e_j}`` as a full array (antisymmetric in ``i, j``)."""
        if i == j:
            return np.zeros(self.dims.shape)
        if i < j:
            return self.h[self.dims.pairs.index((i, j))]
        return -self.h[self.dims.pairs.index((j, i))]

    def component(self, k, l):
        """``H_{k,l}(x)`` for arbitrary directions ``k, l``.

        ``H_{s e_i, t e_j}(x) = s t H_{e_i,e_j}(x - [s<0] e_i - [t<0] e_j)``.
        """
        k = k if isinstance(k, Direction) else Direction.from_index(k)
        l = l if isinstance(l, Direction) else Direction.from_index(l)
        if k.axis == l.axis:
            return np.zeros(self.dims.shape)
        base = self.positive(k.axis, l.axis)
        if k.sign < 0:
            base = np.roll(base, 1, axis=k.axis)
        if l.sign < 0:
            base = np.roll(base, 1, axis=l.axis)
        return k.sign * l.sign * base

    @cached_property
    def expanded(self):
        """``(2d, 2d, *shape)`` array of all tensor components."""
        n = 2 * self.dims.d
        out = np.empty((n, n) + self.dims.shape)
        for a in range(n):
            for b in range(n):
                out[a, b] = self.component(a, b)
        out.setflags(write=False)
        return out

    @property
    def exact(self):
        return is_dyadic(self.h)

    def __eq__(self, other):
        return (isinstance(other, StreamTensorField) and self.dims == other.dims
                and np.array_equal(self.h, other.h))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ScalarLatticeField:
    dims: LatticeDims
    values: np.ndarray = field(repr=False)
    mean_zero: bool = False

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != self.dims.shape:
            raise ValueError(f"scalar field has shape {values.shape}, expected {self.dims.shape}")
        object.__setattr__(self, "values", values)
        if self.mean_zero:
            scale = max(float(np.max(np.abs(values), initial=0.0)), 1.0)
            if abs(values.sum()) > 1e-10 * values.size * scale:
                raise ValueError("field flagged mean-zero has nonzero sum")


def expand_drift(v, x, k):
    """``V_k(x)``; negative directions are derived from the stored field."""
    k = k if isinstance(k, Direction) else Direction.from_index(k)
    x = v.dims.wrap(x)
    if k.sign > 0:
        return float(v.v[(k.axis,) + x])
    back = list(x)
    back[k.axis] = (back[k.axis] - 1) % v.dims.L
    return -float(v.v[(k.axis,) + tuple(back)])


def drift_vector(v, x):
    """``phi(x) = sum_k k V_k(x)``."""
    x = v.dims.wrap(x)
    return np.array(v.phi[(slice(None),) + x])


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float
    site: tuple | None = None

    def to_dict(self):
        return {"name": self.name, "passed": self.passed,
                "residual": self.residual,
                "site": list(self.site) if self.site is not None else None}


@dataclass
class ValidationReport:
    checks: list
    tolerance: float
    warnings: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {"passed": self.passed, "tolerance": self.tolerance,
                "checks": [c.to_dict() for c in self.checks],
                "warnings": list(self.warnings)}


def _worst(residual_field, dims, tol, name):
    residual_field = np.abs(residual_field)
    idx = int(np.argmax(residual_field))
    worst = float(residual_field.flat[idx])
    site = None
    if worst > 0:
        site = tuple(int(c) for c in np.unravel_index(idx, residual_field.shape))
        if residual_field.ndim > dims.d:
            site = site[-dims.d:]
    return CheckResult(name, worst <= tol, worst, site)


def validate_drift(v):
    """Check edge antisymmetry, divergence, boundedness and zero spatial mean.

    Exact (zero-tolerance) for dyadic-rational fields, ``1e-12`` otherwise.
    Failures are reported, never raised.
    """
    dims = v.dims
    tol = 0.0 if v.exact else FLOAT_TOL
    e = v.expanded
    d = dims.d

    # V_k(x) + V_{-k}(x+k), re-checked on the expanded field
    anti = np.empty_like(e)
    for n, k in enumerate(directions(d)):
        rev = k.reverse().index
        anti[n] = e[n] + np.roll(e[rev], -k.sign, axis=k.axis)
    checks = [
        _worst(anti, dims, tol, "antisymmetry"),
        _worst(e.sum(axis=0), dims, tol, "divergence"),
    ]
    excess = np.maximum(np.abs(e) - 1.0, 0.0)
    bound = _worst(excess, dims, tol, "boundedness")
    bound.residual = float(np.max(np.abs(e), initial=0.0))
    bound.passed = bound.residual <= 1.0 + tol
    checks.append(bound)
    means = np.abs(v.v.reshape(d, -1).sum(axis=1))
    worst_axis = int(np.argmax(means))
    checks.append(CheckResult("zero_mean", bool(means[worst_axis] <= tol * dims.n_sites),
                              float(means[worst_axis]),
                              None if means[worst_axis] == 0 else (worst_axis,)))

    report = ValidationReport(checks, tol)
    zero_rates = (e == -1.0).sum(axis=0)
    n_bad = int((zero_rates >= 2 * d - 1).sum())
    if n_bad:
        msg = f"{n_bad} site(s) have >= {2 * d - 1} zero jump rates; chain may be reducible"
        report.warnings.append(msg)
        warnings.warn(msg, ReducibilityWarning, stacklevel=2)
    return report


def curl(h):
    """Drift ``V_k(x) = sum_l H_{k,l}(x)`` of a stream tensor.

    For positive ``k = e_i`` the sum collapses to
    ``sum_{j != i} H_{e_i,e_j}(x) - H_{e_i,e_j}(x - e_j)``.
    """
    dims = h.dims
    v = np.zeros((dims.d,) + dims.shape)
    for i in range(dims.d):
        for j in range(dims.d):
            if i == j:
                continue
            hij = h.positive(i, j)
            v[i] += hij - np.roll(hij, 1, axis=j)
    worst = float(np.max(np.abs(v), initial=0.0))
    # the derived negative components are shifts of the positive ones
    if worst > 1.0 + (0.0 if h.exact else FLOAT_TOL):
        raise OutOfRange(f"curl has |V| = {worst} > 1; stream tensor too large")
    return DriftField(dims, v)
