"""Fourier multipliers on the torus, Helmholtz decomposition and the H-1 functional.

Transform convention (positive exponent forward, ``L^-d`` on the inverse)::

    fhat(p) = sum_x exp(i p.x) f(x)
    f(x)    = L^-d sum_p exp(-i p.x) fhat(p),     p in {2 pi m / L}^d

so that ``(f(. + k))^ = exp(-i p.k) fhat`` and the lattice gradient
``grad_k f = f(. + k) - f`` has multiplier ``exp(-i p.k) - 1``.  Inverse
multipliers vanish at ``p = 0``; they refuse inputs with a nonzero mean
instead of projecting them away.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DimsMismatch, NetDriftWarning, NotMeanZero
from .lattice import Direction, DriftField, LatticeDims, ScalarLatticeField, StreamTensorField, curl
from .validation import check_drift, check_mean_zero

MEAN_ZERO_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class SpectralField:
    dims: LatticeDims
    coeffs: np.ndarray = field(repr=False)


def _axes(d):
    return tuple(range(-d, 0))


def fourier(values, d):
    """Forward transform over the trailing ``d`` axes."""
    values = np.asarray(values)
    n = np.prod(values.shape[-d:])
    return np.fft.ifftn(values, axes=_axes(d)) * n


def inverse_fourier(coeffs, d):
    coeffs = np.asarray(coeffs)
    n = np.prod(coeffs.shape[-d:])
    return np.fft.fftn(coeffs, axes=_axes(d)) / n


def _dims_of(values, dims=None):
    if dims is not None:
        return dims
    values = np.asarray(values)
    return LatticeDims(values.ndim, values.shape[0])


def dft(f):
    """Forward transform of a scalar field (or a raw ``(L,)*d`` array)."""
    if isinstance(f, ScalarLatticeField):
        dims, values = f.dims, f.values
    else:
        values = np.asarray(f, dtype=float)
        dims = _dims_of(values)
    return SpectralField(dims, fourier(values, dims.d))


def idft(F, real=True):
    values = inverse_fourier(F.coeffs, F.dims.d)
    if real:
        values = values.real
        return ScalarLatticeField(F.dims, values)
    return values


def frequencies(dims):
    """``(d, L, ..., L)`` array of the frequency grid ``p``."""
    grid = 2 * np.pi * np.arange(dims.L) / dims.L
    return np.array(np.meshgrid(*([grid] * dims.d), indexing="ij"))


def dhat(dims):
    """``D(p) = sum_j (1 - cos p_j)``; the lattice Laplacian has multiplier ``-2 D(p)``."""
    return (1 - np.cos(frequencies(dims))).sum(axis=0)


def multiplier_grad(k, p):
    """Multiplier ``exp(-i p.k) - 1`` of ``grad_k`` at frequency ``p`` (shape ``(d, ...)``)."""
    k = k if isinstance(k, Direction) else Direction.from_index(k)
    p = np.asarray(p, dtype=float)
    return np.exp(-1j * k.sign * p[k.axis]) - 1


def multiplier_lap(p):
    p = np.asarray(p, dtype=float)
    return -2 * (1 - np.cos(p)).sum(axis=0)


def _inverse_sqrt_symbol(dims):
    D = dhat(dims)
    out = np.zeros_like(D)
    nz = D > 0
    out[nz] = 1.0 / np.sqrt(2 * D[nz])
    return out


def _values(f):
    if isinstance(f, ScalarLatticeField):
        return f.dims, f.values
    values = np.asarray(f, dtype=float)
    return _dims_of(values), values


def _apply(f, symbol_fn, need_mean_zero=True):
    dims, values = _values(f)
    if need_mean_zero:
        check_mean_zero(values)
    fh = fourier(values, dims.d)
    out = inverse_fourier(fh * symbol_fn(dims), dims.d).real
    return ScalarLatticeField(dims, out)


def riesz(k, f):
    """Riesz operator ``Gamma_k = |Delta|^{-1/2} grad_k`` on a mean-zero field."""
    k = k if isinstance(k, Direction) else Direction.from_index(k)
    return _apply(f, lambda dims: multiplier_grad(k, frequencies(dims)) * _inverse_sqrt_symbol(dims))


def inv_sqrt_lap(f):
    """``|Delta|^{-1/2}``: multiplier ``(2 D(p))^{-1/2}``, zero at ``p = 0``."""
    return _apply(f, _inverse_sqrt_symbol)


def sqrt_lap(f):
    return _apply(f, lambda dims: np.sqrt(2 * dhat(dims)), need_mean_zero=False)


def lattice_gradient(k, values):
    k = k if isinstance(k, Direction) else Direction.from_index(k)
    return np.roll(values, -k.sign, axis=k.axis) - values


def helmholtz(v):
    """Stationary stream tensor ``h`` with ``curl(h) = v``.

    ``h_{e_i,e_j} = |Delta|^{-1} (grad_{e_i} v_{e_j} - grad_{e_j} v_{e_i})``,
    the unique square-summable, mean-zero solution.
    """
    v = check_drift(v)
    dims = v.dims
    d = dims.d
    p = frequencies(dims)
    D = dhat(dims)
    inv = np.zeros_like(D)
    inv[D > 0] = 1.0 / (2 * D[D > 0])
    vh = fourier(v.v, d)
    m = [multiplier_grad(Direction(i, 1), p) for i in range(d)]
    h = np.empty((len(dims.pairs),) + dims.shape)
    for n, (i, j) in enumerate(dims.pairs):
        h[n] = inverse_fourier((m[i] * vh[j] - m[j] * vh[i]) * inv, d).real
    return StreamTensorField(dims, h)


def tensor_symmetry_residual(h):
    """Max violation of ``H_{l,k}(x) = H_{-k,l}(x+k) = H_{k,-l}(x+l) = -H_{k,l}(x)``."""
    e = h.expanded
    n = e.shape[0]
    worst = 0.0
    for a in range(n):
        ka = Direction.from_index(a)
        for b in range(n):
            lb = Direction.from_index(b)
            target = -e[a, b]
            worst = max(worst, float(np.max(np.abs(e[b, a] - target))))
            shifted = np.roll(e[ka.reverse().index, b], -ka.sign, axis=ka.axis)
            worst = max(worst, float(np.max(np.abs(shifted - e[b, a]))))
            shifted = np.roll(e[a, lb.reverse().index], -lb.sign, axis=lb.axis)
            worst = max(worst, float(np.max(np.abs(shifted - e[b, a]))))
    return worst


def curl_residual(h, v):
    """Max edge error ``|curl(h) - v|`` over all ``2d`` directions."""
    return float(np.max(np.abs(curl(h).expanded - v.expanded)))


@dataclass(frozen=True, eq=False)
class CovarianceSpectrum:
    dims: LatticeDims
    chat: np.ndarray = field(repr=False)  # (d, d, *shape) complex
    mode: str = "single"
    R: int = 1

    def psd_margin(self):
        """Min over ``p`` of ``lambda_min(C(p)) / max(trace C(p), tiny)``."""
        d = self.dims.d
        mats = np.moveaxis(self.chat.reshape(d, d, -1), -1, 0)
        mats = 0.5 * (mats + np.conj(np.swapaxes(mats, 1, 2)))
        eig = np.linalg.eigvalsh(mats)
        tr = np.maximum(np.abs(np.trace(mats, axis1=1, axis2=2)), 1e-300)
        return float(np.min(eig[:, 0] / tr))


def _pairwise_sum(arrays):
    arrays = list(arrays)
    while len(arrays) > 1:
        nxt = [arrays[i] + arrays[i + 1] for i in range(0, len(arrays) - 1, 2)]
        if len(arrays) % 2:
            nxt.append(arrays[-1])
        arrays = nxt
    return arrays[0]


def _single_spectrum(v):
    d = v.dims.d
    ph = fourier(v.phi, d)
    return np.conj(ph)[:, None] * ph[None, :] / v.dims.n_sites


def covariance_spectrum(envs):
    """``C_ij(p) = L^-d conj(Phi_i(p)) Phi_j(p)``, averaged over realizations."""
    if isinstance(envs, DriftField):
        envs = [envs]
    envs = [check_drift(v) for v in envs]
    if not envs:
        raise ValueError("no environments given")
    dims = envs[0].dims
    if any(v.dims != dims for v in envs):
        raise DimsMismatch("all environments must share the same lattice dims")
    chat = _pairwise_sum(_single_spectrum(v) for v in envs) / len(envs)
    mode = "single" if len(envs) == 1 else "ensemble"
    return CovarianceSpectrum(dims, chat, mode, len(envs))


def hminus_functional(spec):
    """``Ctilde_ij = (2 / L^d) sum_{p != 0} C_ij(p) / D(p)`` and its trace.

    Warns with :class:`NetDriftWarning` when ``C(0) != 0``.
    """
    if isinstance(spec, DriftField) or isinstance(spec, (list, tuple)):
        spec = covariance_spectrum(spec)
    dims = spec.dims
    c0 = spec.chat[(slice(None), slice(None)) + (0,) * dims.d]
    if np.max(np.abs(c0)) > 1e-10:
        warnings.warn("C(0) != 0: drift has a net mean; Ctilde excludes p = 0",
                      NetDriftWarning, stacklevel=2)
    D = dhat(dims)
    w = np.zeros_like(D)
    w[D > 0] = 1.0 / D[D > 0]
    axes = tuple(range(2, 2 + dims.d))
    ct = 2.0 / dims.n_sites * np.sum(spec.chat * w, axis=axes)
    ct = np.real(0.5 * (ct + ct.T.conj()))
    return ct, float(np.trace(ct))


def hminus_norms(v):
    """``|| |Delta|^{-1/2} V_k ||^2`` for every direction (``L^-d``-normalised).

    Finite on any torus; growth with ``L`` signals failure of the H-1
    condition in infinite volume.
    """
    v = check_drift(v)
    dims = v.dims
    e = v.expanded
    check_mean_zero(e.reshape(2 * dims.d, -1).sum(axis=1), already_summed=True,
                    scale=np.max(np.abs(e), initial=0.0) * dims.n_sites)
    sym = _inverse_sqrt_symbol(dims) ** 2
    fh = fourier(e, dims.d)
    axes = tuple(range(1, 1 + dims.d))
    return np.sum(np.abs(fh) ** 2 * sym, axis=axes) / dims.n_sites**2


def bhat(v):
    """Single-realization drift covariance spectrum ``B_{k,l}(p)``, shape ``(2d, 2d, *shape)``."""
    d = v.dims.d
    vh = fourier(v.expanded, d)
    return np.conj(vh)[:, None] * vh[None, :] / v.dims.n_sites


@dataclass
class IdentityReport:
    residuals: dict

    def max(self):
        return max(self.residuals.values())

    def passed(self, tol=1e-10):
        return self.max() <= tol


def check_spectral_identities(v):
    """Residuals of the pointwise identities satisfied by ``B_{k,l}(p)``.

    ``vector``: ``B_{k,l} = -e^{ip.k} B_{-k,l} = -e^{-ip.l} B_{k,-l}``;
    ``divfree``: ``sum_k B_{k,l} = sum_l B_{k,l} = 0``;
    ``equiv0``: ``sum_{k,l} (1-e^{-ip.k})(1-e^{ip.l}) B_{k,l} = 0``;
    ``c_zero``: ``C(0) = 0``;
    ``c_from_b``: ``C_ij = (1+e^{-ip_i})(1+e^{ip_j}) B_{e_i,e_j}``.
    """
    dims = v.dims
    d = dims.d
    p = frequencies(dims)
    B = bhat(v)
    dirs = [Direction.from_index(n) for n in range(2 * d)]
    phase = np.array([np.exp(1j * k.sign * p[k.axis]) for k in dirs])  # e^{ip.k}
    rev = [k.reverse().index for k in dirs]
    res = {}
    res["vector"] = max(
        float(np.max(np.abs(B + phase[:, None] * B[rev, :]))),
        float(np.max(np.abs(B + np.conj(phase)[None, :] * B[:, rev]))),
    )
    res["divfree"] = max(float(np.max(np.abs(B.sum(axis=0)))),
                         float(np.max(np.abs(B.sum(axis=1)))))
    left = 1 - np.conj(phase)
    right = 1 - phase
    res["equiv0"] = float(np.max(np.abs(np.sum(left[:, None] * right[None, :] * B, axis=(0, 1)))))
    steps = np.array([k.vector(d) for k in dirs], dtype=float)
    origin = (slice(None), slice(None)) + (0,) * d
    c0 = np.einsum("ki,lj,kl->ij", steps, steps, B[origin])
    res["c_zero"] = float(np.max(np.abs(c0)))
    chat = _single_spectrum(v)
    worst = 0.0
    for i in range(d):
        for j in range(d):
            pred = (1 + np.exp(-1j * p[i])) * (1 + np.exp(1j * p[j])) * B[2 * i, 2 * j]
            worst = max(worst, float(np.max(np.abs(chat[i, j] - pred))))
    res["c_from_b"] = worst
    return IdentityReport(res)


def commutator_residual(v, f):
    """Sup-norm of ``(sum_l M_l grad_l + sum_l grad_{-l} M_l) f`` and the quadratic form.

    Both vanish for divergence-free ``v``.  Evaluated in real space.
    """
    e = v.expanded
    f = np.asarray(f.values if isinstance(f, ScalarLatticeField) else f, dtype=float)
    out = np.zeros_like(f)
    for n in range(e.shape[0]):
        k = Direction.from_index(n)
        out += e[n] * lattice_gradient(k, f)
        mf = e[n] * f
        out += lattice_gradient(k.reverse(), mf)
    return float(np.max(np.abs(out))), float(np.mean(f * out))


class HelmholtzDecomposition(TransformerMixin, BaseEstimator):
    """Drift field to stationary stream tensor (and back via ``inverse_transform``).

    ``fit`` only validates; the decomposition is a fixed linear map.
    """

    def __init__(self, check_roundtrip=True, tol=1e-10):
        self.check_roundtrip = check_roundtrip
        self.tol = tol

    def fit(self, X, y=None):
        X = check_drift(X)
        self.dims_ = X.dims
        self.stream_ = helmholtz(X)
        self.roundtrip_error_ = curl_residual(self.stream_, X)
        if self.check_roundtrip and self.roundtrip_error_ > self.tol:
            raise ArithmeticError(f"curl(helmholtz(v)) error {self.roundtrip_error_:g} > {self.tol:g}")
        return self

    def transform(self, X):
        return helmholtz(X)

    def inverse_transform(self, X):
        return curl(X)


class HminusEstimator(BaseEstimator):
    """H-1 functional of one environment or an ensemble.

    Attributes after ``fit``: ``spectrum_``, ``ctilde_``, ``trace_``,
    ``norms_`` (per-direction ``|||Delta|^{-1/2} V_k||^2``, averaged over the
    ensemble) and ``identities_`` (worst residuals over realizations).
    """

    def fit(self, X, y=None):
        envs = [X] if isinstance(X, DriftField) else list(X)
        envs = [check_drift(v) for v in envs]
        self.spectrum_ = covariance_spectrum(envs)
        self.ctilde_, self.trace_ = hminus_functional(self.spectrum_)
        self.norms_ = _pairwise_sum(hminus_norms(v) for v in envs) / len(envs)
        worst = {}
        for v in envs:
            for key, val in check_spectral_identities(v).residuals.items():
                worst[key] = max(worst.get(key, 0.0), val)
        self.identities_ = worst
        return self

    def report(self):
        return {
            "d": self.spectrum_.dims.d, "L": self.spectrum_.dims.L,
            "mode": self.spectrum_.mode, "R": self.spectrum_.R,
            "ctilde": self.ctilde_.tolist(), "trace": self.trace_,
            "hminus_norms": self.norms_.tolist(),
            "identity_residuals": self.identities_,
        }


__all__ = [
    "SpectralField", "CovarianceSpectrum", "IdentityReport", "NotMeanZero",
    "dft", "idft", "fourier", "inverse_fourier", "frequencies", "dhat",
    "multiplier_grad", "multiplier_lap", "riesz", "inv_sqrt_lap", "sqrt_lap",
    "helmholtz", "tensor_symmetry_residual", "curl_residual",
    "covariance_spectrum", "hminus_functional", "hminus_norms", "bhat",
    "check_spectral_identities", "commutator_residual",
    "HelmholtzDecomposition", "HminusEstimator",
]
