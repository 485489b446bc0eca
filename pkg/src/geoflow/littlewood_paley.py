"""Dyadic (Littlewood-Paley) decomposition and the norm family built on it.

The dyadic bump is ``phi(r) = chi(r/2) - chi(r)`` where ``chi`` is a smooth
cut-off equal to 1 on ``[0, 3/4]`` and 0 beyond ``4/3``, glued with the
``exp(-1/x)`` mollifier.  Hence ``supp phi = [3/4, 8/3]`` and
``sum_j phi(2^-j r) = 1`` for every ``r > 0`` (the sum telescopes).

Space integrals are Riemann sums on the collocation grid; time integrals
use the trapezoid rule on uniformly spaced samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .spectral import GridSpec, SpectralField, transform_inverse

__all__ = [
    "phi",
    "chi",
    "DyadicSpectrum",
    "NormRequest",
    "dyadic_range",
    "vertical_range",
    "dyadic_block",
    "vertical_block",
    "vertical_mean",
    "dyadic_spectrum",
    "sobolev_norm",
    "intersection_norm",
    "lebesgue_norm",
    "aniso_norm",
    "besov_norm",
    "truncation_estimate",
    "chemin_lerner_norm",
    "time_besov_norm",
    "energy_norm",
    "energy_norm_from_samples",
    "interpolation_check",
    "interpolation_bound",
    "besov_sobolev_constants",
    "fractional_derivative",
    "evaluate_request",
]

_LO, _HI = 0.75, 4.0 / 3.0


def _smooth_step(x):
    """0 for x <= 0, 1 for x >= 1, C-infinity in between."""
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    y = 1.0 - x
    b = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return a / (a + b)


def chi(r):
    return 1.0 - _smooth_step((np.asarray(r, dtype=float) - _LO) / (_HI - _LO))


def phi(r):
    """Dyadic bump supported in ``[3/4, 8/3]``."""
    r = np.asarray(r, dtype=float)
    return chi(r / 2.0) - chi(r)


@dataclass
class DyadicSpectrum:
    """Per-block norms ``[(j, value), ...]`` in ascending ``j``."""

    entries: list[tuple[int, float]] = field(default_factory=list)

    @property
    def indices(self) -> np.ndarray:
        return np.array([j for j, _ in self.entries], dtype=int)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.entries], dtype=float)

    def weighted(self, s: float) -> np.ndarray:
        return 2.0 ** (s * self.indices) * self.values

    def lq(self, s: float, q: float) -> float:
        return _lq(self.weighted(s), q)


def _lq(values, q: float) -> float:
    values = np.abs(np.asarray(values, dtype=float))
    if values.size == 0:
        return 0.0
    if math.isinf(q):
        return float(values.max())
    return float(np.sum(values**q) ** (1.0 / q))


@dataclass(frozen=True)
class NormRequest:
    """One norm evaluation: ``kind`` plus the indices that kind uses.

    ``kind`` is one of sobolev, besov, lebesgue, aniso, chemin_lerner, energy.
    For aniso, ``p`` is the horizontal and ``q`` the vertical exponent.  For
    chemin_lerner, ``a`` is the time exponent, ``p`` the space exponent and
    ``q`` the summation exponent.  For energy, ``nu0`` weights the
    dissipation integral.
    """

    kind: str
    s: float = 0.0
    p: float = 2.0
    q: float = 2.0
    a: float = 2.0
    nu0: float = 1.0

    KINDS = ("sobolev", "besov", "lebesgue", "aniso", "chemin_lerner", "energy")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; expected one of {self.KINDS}")
        for name in ("p", "q", "a"):
            value = getattr(self, name)
            if not value >= 1:
                raise ValueError(f"{name} must lie in [1, inf], got {value}")
        if self.nu0 < 0:
            raise ValueError("nu0 must be >= 0")

    @property
    def needs_series(self) -> bool:
        return self.kind in ("chemin_lerner", "energy")

    @classmethod
    def from_dict(cls, d: dict) -> "NormRequest":
        conv = {k: (math.inf if v in ("inf", "infinity") else v) for k, v in d.items()}
        return cls(**conv)


def dyadic_range(grid: GridSpec) -> tuple[int, int]:
    """Block indices whose annuli can touch the resolved wavenumbers."""
    kmin = grid.k_min
    kmax = float(grid.kabs.max())
    return math.ceil(math.log2(kmin) - 2), math.floor(math.log2(kmax) + 2)


def vertical_range(grid: GridSpec) -> tuple[int, int]:
    k3 = np.abs(grid.wavenumbers[-1])
    k3 = k3[k3 > 0]
    return math.ceil(math.log2(k3.min()) - 2), math.floor(math.log2(k3.max()) + 2)


def _block_weight(grid: GridSpec, j: int) -> np.ndarray:
    return phi(2.0 ** (-j) * grid.kabs)


def dyadic_block(u: SpectralField, j: int) -> SpectralField:
    """Isotropic block: coefficients times ``phi(2^-j |xi|)``."""
    return u.like(u.coeffs * _block_weight(u.grid, j))


def vertical_block(u: SpectralField, k: int) -> SpectralField:
    """Vertical block: coefficients times ``phi(2^-k |xi_3|)``.

    Modes with ``xi_3 = 0`` belong to no block; see :func:`vertical_mean`.
    """
    k3 = np.abs(u.grid.k(u.grid.ndim - 1))
    return u.like(u.coeffs * phi(2.0 ** (-k) * k3))


def vertical_mean(u: SpectralField) -> SpectralField:
    """The ``xi_3 = 0`` part of ``u`` (its average over the vertical variable)."""
    k3 = u.grid.k(u.grid.ndim - 1)
    return u.like(u.coeffs * (k3 == 0))


def fractional_derivative(u: SpectralField, s: float) -> SpectralField:
    """``|D|^s u``; the mean coefficient is set to 0."""
    g = u.grid
    mult = np.where(g.zero_mode, 0.0, np.where(g.zero_mode, 1.0, g.kabs) ** s)
    return u.like(u.coeffs * mult)


def sobolev_norm(u: SpectralField, s: float) -> float:
    """Homogeneous Sobolev norm; the mean is excluded."""
    g = u.grid
    weight = np.where(g.zero_mode, 0.0, np.where(g.zero_mode, 1.0, g.k2) ** s)
    return float(np.sqrt(g.volume * np.sum(weight * np.sum(np.abs(u.coeffs) ** 2, axis=0))))


def intersection_norm(u: SpectralField, s_values: Sequence[float]) -> float:
    """Norm of an intersection of homogeneous Sobolev spaces, taken as a max."""
    return max(sobolev_norm(u, s) for s in s_values)


def _oversampled(u: SpectralField, factor: int) -> tuple[np.ndarray, float]:
    g = u.grid
    if factor == 1:
        return transform_inverse(u, real=False), g.cell_volume
    shape = tuple(factor * m for m in g.n)
    big = np.zeros((u.components,) + shape, dtype=complex)
    index = np.ix_(*[np.mod(idx, factor * m) for idx, m in zip(g.signed_indices, g.n)])
    big[(slice(None),) + index] = u.coeffs
    size = int(np.prod(shape))
    phys = sfft.ifftn(big, axes=tuple(range(1, g.ndim + 1))) * size
    return phys, g.volume / size


def _modulus(u: SpectralField, oversample: int = 1) -> tuple[np.ndarray, float]:
    phys, dv = _oversampled(u, oversample)
    if np.abs(phys.imag).max() <= 1e-13 * max(np.abs(phys.real).max(), 1e-300):
        mod = np.sqrt(np.sum(phys.real**2, axis=0))
    else:
        mod = np.sqrt(np.sum(np.abs(phys) ** 2, axis=0))
    return mod, dv


def _lebesgue_from_modulus(mod: np.ndarray, r: float, dv: float) -> float:
    if math.isinf(r):
        return float(mod.max())
    return float((dv * np.sum(mod**r)) ** (1.0 / r))


def lebesgue_norm(u: SpectralField, r: float, oversample: int = 1) -> float:
    """L^r norm of the pointwise Euclidean modulus, by Riemann sum.

    ``oversample=2`` evaluates on a grid refined by zero padding, which
    reduces quadrature error for sharply localised fields.
    """
    mod, dv = _modulus(u, oversample)
    return _lebesgue_from_modulus(mod, r, dv)


def aniso_norm(u: SpectralField, a: float, b: float, oversample: int = 1) -> float:
    """``|| || u(x_h, .) ||_{L^b(vertical)} ||_{L^a(horizontal)}``."""
    mod, _ = _modulus(u, oversample)
    return _aniso_from_modulus(mod, u.grid, a, b)


def _aniso_from_modulus(mod: np.ndarray, grid: GridSpec, a: float, b: float) -> float:
    n = mod.shape
    dz = grid.lengths[-1] / n[-1]
    dxh = float(np.prod(grid.lengths[:-1])) / float(np.prod(n[:-1]))
    if math.isinf(b):
        inner_ = mod.max(axis=-1)
    else:
        inner_ = (dz * np.sum(mod**b, axis=-1)) ** (1.0 / b)
    return _lebesgue_from_modulus(inner_, a, dxh)


def dyadic_spectrum(u: SpectralField, p: float = 2.0, j_range=None) -> DyadicSpectrum:
    """Block norms ``||Delta_j u||_{L^p}`` in ascending ``j``."""
    lo, hi = j_range or dyadic_range(u.grid)
    entries = []
    for j in range(lo, hi + 1):
        block = dyadic_block(u, j)
        if p == 2.0:
            value = float(np.sqrt(u.grid.volume * np.sum(np.abs(block.coeffs) ** 2)))
        else:
            value = lebesgue_norm(block, p)
        entries.append((j, value))
    return DyadicSpectrum(entries)


def besov_norm(u: SpectralField, s: float, p: float, q: float) -> float:
    """``l^q`` over ``j`` of ``2^{js} ||Delta_j u||_{L^p}``."""
    return dyadic_spectrum(u, p).lq(s, q)


def truncation_estimate(u: SpectralField) -> float:
    """Relative L^2 mass lost by clipping the block range (mean excluded)."""
    lo, hi = dyadic_range(u.grid)
    total = sum(_block_weight(u.grid, j) for j in range(lo, hi + 1))
    resid = u.coeffs * (1.0 - total)
    resid[:, u.grid.zero_mode] = 0.0
    norm = np.sqrt(np.sum(np.abs(u.coeffs[:, ~u.grid.zero_mode]) ** 2))
    if norm == 0:
        return 0.0
    return float(np.sqrt(np.sum(np.abs(resid) ** 2)) / norm)


def _check_series(times, fields):
    times = np.asarray(times, dtype=float)
    if len(times) < 2 or len(fields) != len(times):
        raise ValueError("a time series needs at least 2 samples with one field per time")
    steps = np.diff(times)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * max(abs(steps.max()), 1.0):
        raise ValueError("time samples must be uniformly spaced and increasing")
    return times


def _time_norm(values: np.ndarray, times: np.ndarray, a: float) -> float:
    if math.isinf(a):
        return float(np.max(values))
    return float(np.trapezoid(values**a, times) ** (1.0 / a))


def _block_table(fields, p: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = dyadic_range(fields[0].grid)
    js = np.arange(lo, hi + 1)
    table = np.array([[v for _, v in dyadic_spectrum(f, p, (lo, hi)).entries] for f in fields])
    return js, table


def chemin_lerner_norm(times, fields, a: float, b: float, c: float, s: float) -> float:
    """Time integration inside the block sum: ``l^c_j(2^{js} ||Delta_j u||_{L^a_t L^b})``."""
    times = _check_series(times, fields)
    js, table = _block_table(fields, b)
    per_block = np.array([_time_norm(table[:, i], times, a) for i in range(len(js))])
    return _lq(2.0 ** (s * js) * per_block, c)


def time_besov_norm(times, fields, a: float, b: float, c: float, s: float) -> float:
    """Plain ``L^a_t Besov^s_{b,c}``: the block sum is taken first."""
    times = _check_series(times, fields)
    js, table = _block_table(fields, b)
    weights = 2.0 ** (s * js)
    per_time = np.array([_lq(weights * row, c) for row in table])
    return _time_norm(per_time, times, a)


def energy_norm_from_samples(times, hs_sq, hs1_sq, nu0: float) -> float:
    """``sqrt(max_t ||f||_{H^s}^2 + nu0 * int ||f||_{H^{s+1}}^2)`` from squared samples."""
    times = np.asarray(times, dtype=float)
    hs_sq = np.asarray(hs_sq, dtype=float)
    if hs_sq.size == 0:
        raise ValueError("empty series")
    integral = float(np.trapezoid(hs1_sq, times)) if len(times) > 1 else 0.0
    return float(np.sqrt(hs_sq.max() + nu0 * integral))


def energy_norm(times, fields, s: float, nu0: float) -> float:
    """Energy-space norm over the sampled interval ``[times[0], times[-1]]``."""
    if len(fields) == 0:
        raise ValueError("empty series")
    hs = [sobolev_norm(f, s) ** 2 for f in fields]
    hs1 = [sobolev_norm(f, s + 1) ** 2 for f in fields]
    return energy_norm_from_samples(times, hs, hs1, nu0)


@lru_cache(maxsize=64)
def besov_sobolev_constants(s: float, samples: int = 20001) -> tuple[float, float]:
    """Bounds ``c1 <= ||u||_{B^s_{2,2}} / ||u||_{H^s} <= c2`` valid for every field.

    Per wavevector the ratio squared is ``sum_j (2^j/r)^{2s} phi(2^-j r)^2``,
    which is invariant under ``r -> 2r``; the extremes are taken over one
    octave.  At ``s = 0`` these are the extremes of ``(sum_j phi^2)^{1/2}``.
    """
    r = np.linspace(1.0, 2.0, samples)
    total = np.zeros_like(r)
    for j in range(-3, 5):
        total += (2.0**j / r) ** (2 * s) * phi(2.0 ** (-j) * r) ** 2
    root = np.sqrt(total)
    return float(root.min()), float(root.max())


def interpolation_bound(s: float, alpha: float, beta: float) -> float:
    """Upper bound on the ratio returned by :func:`interpolation_check`.

    Uses ``2^{js}||Delta_j u|| <= c_lo 2^{j alpha} ||u||_{H^{s-alpha}}`` and
    ``<= c_hi 2^{-j beta} ||u||_{H^{s+beta}}`` (``phi <= 1`` on the annulus
    ``[3/4, 8/3] 2^j``), then sums the two geometric tails.
    """
    r = np.array([0.75, 8.0 / 3.0])
    c_lo = float(np.max(r ** (alpha - s)))
    c_hi = float(np.max(r ** (-(s + beta))))
    w = alpha + beta
    tails = 1.0 / (1.0 - 2.0**-alpha) + 1.0 / (1.0 - 2.0**-beta)
    return c_lo ** (beta / w) * c_hi ** (alpha / w) * tails


def interpolation_check(u: SpectralField, s: float, alpha: float, beta: float):
    """Compare ``||u||_{B^s_{2,1}}`` with ``||u||_{H^{s-a}}^{b/(a+b)} ||u||_{H^{s+b}}^{a/(a+b)}``.

    Returns ``(lhs, rhs, lhs / rhs)``.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    lhs = besov_norm(u, s, 2.0, 1.0)
    lo = sobolev_norm(u, s - alpha)
    hi = sobolev_norm(u, s + beta)
    if lo == 0.0 or hi == 0.0:
        raise ValueError("interpolation check is undefined for the zero field")
    w = alpha + beta
    rhs = lo ** (beta / w) * hi ** (alpha / w)
    return lhs, rhs, lhs / rhs


def evaluate_request(req: NormRequest, fields, times=None) -> tuple[float, float]:
    """Evaluate one request; returns ``(value, truncation_estimate)``."""
    u = fields[0]
    trunc = 0.0
    if req.kind == "sobolev":
        value = sobolev_norm(u, req.s)
    elif req.kind == "besov":
        value = besov_norm(u, req.s, req.p, req.q)
        trunc = truncation_estimate(u)
    elif req.kind == "lebesgue":
        value = lebesgue_norm(u, req.p)
    elif req.kind == "aniso":
        value = aniso_norm(u, req.p, req.q)
    elif req.kind == "chemin_lerner":
        value = chemin_lerner_norm(times, fields, req.a, req.p, req.q, req.s)
        trunc = max(truncation_estimate(f) for f in fields)
    else:
        if times is None:
            times = [0.0]
        value = energy_norm(times, fields, req.s, req.nu0)
    return value, trunc
