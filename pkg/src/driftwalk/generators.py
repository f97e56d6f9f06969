"""Example environments: i.i.d. plaquettes, Lipschitz height fields, Manhattan lattices.

Every generator is a pure function of its :class:`GeneratorSpec`; with the
default two-point laws all outputs are dyadic rationals, so the structural
checks in :func:`~driftwalk.lattice.validate_drift` hold exactly.

The "soup of oriented cycles" picture is the plaquette generator: each stored
value is the circulation around one elementary oriented cycle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import AmplitudeTooLarge, NetDriftWarning, NotLipschitz, UnbalancedTorus
from .lattice import DriftField, LatticeDims, ScalarLatticeField, StreamTensorField, curl

KINDS = ("plaquette_iid", "manhattan", "height_field", "from_file")


def default_amplitude(d, bits=10):
    """Largest multiple of ``2**-bits`` strictly below ``1/(2d)``."""
    return (math.ceil(2**bits / (2 * d)) - 1) / 2**bits


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    dims: LatticeDims
    seed: int = 0
    amplitude: float | None = None
    balanced: bool = True
    continuous: bool = False
    path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def effective_amplitude(self):
        return default_amplitude(self.dims.d) if self.amplitude is None else self.amplitude

    def rng(self, stream=0):
        return np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=(stream,)))

    def to_dict(self):
        return {"kind": self.kind, "d": self.dims.d, "L": self.dims.L,
                "seed": int(self.seed), "amplitude": self.amplitude,
                "balanced": self.balanced, "continuous": self.continuous}

    @classmethod
    def from_dict(cls, data):
        return cls(kind=data["kind"], dims=LatticeDims(int(data["d"]), int(data["L"])),
                   seed=int(data.get("seed", 0)), amplitude=data.get("amplitude"),
                   balanced=bool(data.get("balanced", True)),
                   continuous=bool(data.get("continuous", False)))

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def gen_plaquette_iid(spec):
    """i.i.d. plaquette circulations ``h_{e_i,e_j}(x) = +-amplitude``.

    Returns ``(tensor, drift)``.  ``|V_k| <= 2(d-1) * amplitude < 1``.
    """
    dims = spec.dims
    amp = spec.effective_amplitude
    if amp < 0:
        raise ValueError("amplitude must be nonnegative")
    if amp > 1.0 / (2 * dims.d):
        raise AmplitudeTooLarge(f"amplitude {amp} exceeds 1/(2d) = {1.0 / (2 * dims.d)}")
    rng = spec.rng()
    shape = (len(dims.pairs),) + dims.shape
    if spec.continuous:
        h = rng.uniform(-amp, amp, size=shape)
    else:
        h = np.where(rng.random(shape) < 0.5, -amp, amp)
    tensor = StreamTensorField(dims, h)
    return tensor, curl(tensor)


def manhattan_orientations(spec):
    """Line orientations ``u_i`` as ``(d, L, ..., L)`` arrays over ``d-1`` coordinates."""
    dims = spec.dims
    m = dims.L ** (dims.d - 1)
    if spec.balanced and m % 2:
        raise UnbalancedTorus(f"balanced orientations need L^(d-1) = {m} even")
    rng = spec.rng()
    u = np.empty((dims.d, m))
    for i in range(dims.d):
        if spec.balanced:
            u[i] = rng.permutation(np.repeat([1.0, -1.0], m // 2))
        else:
            u[i] = np.where(rng.random(m) < 0.5, -1.0, 1.0)
    return u.reshape((dims.d,) + (dims.L,) * (dims.d - 1))


def manhattan_from_orientations(dims, u):
    """``V_{+-e_i}(x) = +-u_i(x with coordinate i deleted)``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.empty((dims.d,) + dims.shape)
    for i in range(dims.d):
        v[i] = np.broadcast_to(np.expand_dims(u[i], axis=i), dims.shape)
        total = float(u[i].sum())
        if total != 0:
            warnings.warn(f"axis {i + 1} orientations sum to {total:g}: net drift on the torus",
                          NetDriftWarning, stacklevel=2)
    return DriftField(dims, v)


def gen_manhattan(spec, orientations=None):
    """Randomly oriented Manhattan lattice.

    ``orientations`` overrides the random draw (same layout as
    :func:`manhattan_orientations`), for constructing fixed configurations.
    """
    u = manhattan_orientations(spec) if orientations is None else orientations
    return manhattan_from_orientations(spec.dims, u)


def _dual_neighbour_gaps(psi):
    """Max ``|psi(y) - psi(y+e_a)|`` per axis with the argmax site."""
    out = []
    for a in range(psi.ndim):
        gap = np.abs(psi - np.roll(psi, -1, axis=a))
        idx = int(np.argmax(gap))
        out.append((float(gap.flat[idx]), np.unravel_index(idx, psi.shape)))
    return out


def check_lipschitz(psi):
    """Raise :class:`NotLipschitz` naming the first offending dual edge."""
    values = psi.values if isinstance(psi, ScalarLatticeField) else np.asarray(psi)
    for axis, (gap, site) in enumerate(_dual_neighbour_gaps(values)):
        if gap > 1:
            y = tuple(int(c) for c in site)
            y2 = list(y)
            y2[axis] = (y2[axis] + 1) % values.shape[axis]
            raise NotLipschitz(f"|psi{y} - psi{tuple(y2)}| = {gap} > 1 across axis {axis + 1}",
                               edge=(y, tuple(y2)))


def random_lipschitz_field(dims, seed=0, spread=None):
    """Random integer 1-Lipschitz field on the dual torus.

    Starts from i.i.d. integers and clamps every site to ``min(neighbour) + 1``
    until nothing changes (the lower 1-Lipschitz envelope on the torus).
    The law is not that of a uniform graph homomorphism.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(1,)))
    spread = dims.L if spread is None else spread
    psi = rng.integers(0, spread + 1, size=dims.shape).astype(np.float64)
    while True:
        lower = psi
        for a in range(dims.d):
            for s in (1, -1):
                lower = np.minimum(lower, np.roll(psi, s, axis=a) + 1)
        if np.array_equal(lower, psi):
            break
        psi = lower
    psi -= np.round(psi.mean())
    return ScalarLatticeField(dims, psi)


def gen_height_field(spec, psi=None):
    """Stream tensor ``H_{e_i,e_j}(x) = psi(x + (1/2,...,1/2)) / d`` from a height field.

    ``psi`` lives on the dual torus: ``psi.values[y]`` is the height at
    ``y + (1/2, ..., 1/2)``.  In ``d = 2`` this is the plaquette centre; in
    higher dimensions every pair ``i < j`` reads the same dual site (the only
    choice that keeps each tensor difference a single dual-edge increment).
    """
    dims = spec.dims
    if psi is None:
        psi = random_lipschitz_field(dims, spec.seed)
    values = psi.values if isinstance(psi, ScalarLatticeField) else np.asarray(psi, dtype=float)
    if values.shape != dims.shape:
        raise ValueError("psi shape does not match the lattice")
    check_lipschitz(values)
    h = np.broadcast_to(values / dims.d, (len(dims.pairs),) + dims.shape)
    tensor = StreamTensorField(dims, h)
    return tensor, curl(tensor)


def generate(spec):
    """Dispatch on ``spec.kind``; returns ``(tensor or None, drift)``."""
    if spec.kind == "plaquette_iid":
        return gen_plaquette_iid(spec)
    if spec.kind == "manhattan":
        return None, gen_manhattan(spec)
    if spec.kind == "height_field":
        return gen_height_field(spec)
    from .io import load_environment
    obj = load_environment(spec.path)
    if isinstance(obj, StreamTensorField):
        return obj, curl(obj)
    return None, obj
