"""Right-hand sides of every evolution system handled by the solver.

Pressure and geopotential are eliminated by Leray projection.  Nonlinear
terms are evaluated pseudo-spectrally in advective form and dealiased.  Each
system exposes a full right-hand side (``*_rhs``) and, for the time
stepper, the part left after removing the exactly integrated linear flow
(``*_nonlinear``).
"""

from __future__ import annotations

from enum import Enum

import numpy as np
import scipy.fft as sfft

from .exceptions import (
    ComponentCountError,
    MissingForcingError,
    NotQuasiGeostrophicError,
    ShapeMismatchError,
    TimestampMismatchError,
    UnsupportedConfigurationError,
)
from .operators import (
    PhysParams,
    apply_A,
    delta_F_symbol,
    divergence,
    e3_cross,
    gamma_apply,
    leray_project,
    osc_project,
    potential_vorticity,
    qg_project,
)
from .spectral import (
    GridSpec,
    SpectralField,
    laplacian,
)

__all__ = [
    "SystemKind",
    "ROLE",
    "REQUIRES",
    "is_hermitian",
    "convective_term",
    "pe_rhs",
    "qg_rhs",
    "g_force",
    "w_systems_rhs",
    "f_terms",
    "delta_pe_rhs",
    "ns2d_rhs",
    "lift_2d",
    "prf_rhs",
    "rf_rhs",
    "lrf_rhs",
    "g_terms_rf",
    "delta_rf_rhs",
    "pressure",
]


class SystemKind(str, Enum):
    PE = "PE"
    QG = "QG"
    W_H = "W_H"
    W_INH = "W_INH"
    DELTA_PE = "DELTA_PE"
    RF = "RF"
    NS2D = "NS2D"
    PRF = "PRF"
    LRF = "LRF"
    DELTA_RF = "DELTA_RF"


# Role of the field each system evolves, and the companion roles it reads.
ROLE = {
    SystemKind.PE: "U",
    SystemKind.QG: "U_QG",
    SystemKind.W_H: "W_H",
    SystemKind.W_INH: "W_INH",
    SystemKind.DELTA_PE: "DELTA",
    SystemKind.RF: "U",
    SystemKind.NS2D: "UBAR",
    SystemKind.PRF: "W_PRF",
    SystemKind.LRF: "W_RF",
    SystemKind.DELTA_RF: "DELTA",
}

REQUIRES = {
    SystemKind.W_INH: ("U_QG",),
    SystemKind.DELTA_PE: ("U_QG", "W_H", "W_INH"),
    SystemKind.PRF: ("UBAR",),
    SystemKind.DELTA_RF: ("W_RF", "UBAR"),
}

_QG_TOL = 1e-10


def is_hermitian(coeffs: np.ndarray, grid: GridSpec, rtol: float = 1e-12) -> bool:
    """True when ``coeffs`` are the coefficients of a real field."""
    axes = grid.axes
    mirrored = np.roll(np.flip(coeffs, axis=axes), 1, axis=axes)
    scale = max(float(np.abs(coeffs).max()), 1e-300)
    return bool(np.abs(coeffs - mirrored.conj()).max() <= rtol * scale)


def _advect(a: np.ndarray, b: np.ndarray, grid: GridSpec, real: bool) -> np.ndarray:
    """Coefficients of ``sum_i a^i d_i b`` for the first ``grid.ndim`` components of ``a``."""
    d = grid.ndim
    if real:
        # Work on the non-negative half of the last axis only.
        m = grid.n[-1] // 2 + 1
        bh = b[..., :m]
        vel = sfft.irfftn(a[:d, ..., :m], s=grid.shape, axes=grid.axes) * grid.size
        acc = np.zeros((b.shape[0],) + grid.shape)
        for axis in range(d):
            kh = grid.k(axis)[..., :m] if axis == d - 1 else grid.k(axis)
            grad = sfft.irfftn((1j * kh) * bh, s=grid.shape, axes=grid.axes)
            acc += vel[axis] * grad
        out = sfft.fftn(acc, axes=grid.axes)
    else:
        vel = sfft.ifftn(a[:d], axes=grid.axes) * grid.size
        acc = np.zeros((b.shape[0],) + grid.shape, dtype=complex)
        for axis in range(d):
            acc += vel[axis] * sfft.ifftn(1j * grid.k(axis) * b, axes=grid.axes)
        out = sfft.fftn(acc, axes=grid.axes)
    out *= grid.mask
    return out


def convective_term(a: SpectralField, b: SpectralField, real: bool | None = None) -> SpectralField:
    """Dealiased pseudo-spectral ``a . grad b``.

    The advecting velocity is the first ``grid.ndim`` components of ``a``.
    ``real`` selects the real-to-complex transform path; by default it is
    used when both inputs are Hermitian.
    """
    if a.grid != b.grid:
        raise ShapeMismatchError("convective_term: fields live on different grids")
    if a.components < a.grid.ndim:
        raise ComponentCountError("the advecting field needs a full velocity")
    if real is None:
        real = is_hermitian(a.coeffs, a.grid) and is_hermitian(b.coeffs, b.grid)
    return b.like(_advect(a.coeffs, b.coeffs, a.grid, real))


def _diffusion(U: SpectralField, params: PhysParams) -> SpectralField:
    """``L U = (nu Delta v, nu' Delta theta)``."""
    lap = laplacian(U).coeffs
    visc = np.full((U.components,) + (1,) * U.grid.ndim, params.nu)
    if U.components == 4:
        visc[3] = params.nu_prime
    return U.like(visc * lap)


def _rotation_pe(U: SpectralField, params: PhysParams) -> SpectralField:
    return leray_project(apply_A(U, params.F)) / params.eps


def _rotation_rf(v: SpectralField, params: PhysParams) -> SpectralField:
    return leray_project(e3_cross(v)) / params.eps


# -- primitive equations ---------------------------------------------------


def pe_nonlinear(U: SpectralField, real: bool = True) -> SpectralField:
    return -leray_project(convective_term(U, U, real))


def pe_rhs(U: SpectralField, params: PhysParams, nonlinear: bool = True) -> SpectralField:
    """``-P(v . grad U) + L U - (1/eps) P A U``."""
    out = _diffusion(U, params) - _rotation_pe(U, params)
    if nonlinear:
        out = out + pe_nonlinear(U, real=None)
    return out


def _check_qg(U: SpectralField, F: float):
    resid = np.abs(osc_project(U, F).coeffs).max()
    scale = max(float(np.abs(U.coeffs).max()), 1e-300)
    if resid > _QG_TOL * scale:
        raise NotQuasiGeostrophicError(
            f"field is not quasi-geostrophic: oscillating residual {resid / scale:.2e} (relative)"
        )


def qg_nonlinear(U_qg: SpectralField, F: float, adv: SpectralField | None = None) -> SpectralField:
    if adv is None:
        adv = convective_term(U_qg, U_qg, real=True)
    return -qg_project(adv, F)


def qg_rhs(U_qg: SpectralField, params: PhysParams, check: bool = True) -> SpectralField:
    """``-Q(v . grad U) + Gamma U`` for a quasi-geostrophic ``U``."""
    if check:
        _check_qg(U_qg, params.F)
    adv = convective_term(U_qg, U_qg)
    return qg_nonlinear(U_qg, params.F, adv) + gamma_apply(U_qg, params)


def _g_linear_part(U_qg: SpectralField, params: PhysParams) -> np.ndarray:
    """Coefficients of the ``(nu - nu')`` correction to the forcing."""
    g = U_qg.grid
    F = params.F
    k1, k2, k3 = (g.k(a) for a in range(3))
    omega = potential_vorticity(U_qg, F).coeffs[0]
    zero = g.zero_mode
    dF = np.where(zero, 1.0, delta_F_symbol(g, F))
    mult = np.where(zero, 0.0, -F * (params.nu - params.nu_prime) * (-g.k2) / dF**2)
    vec = np.stack(
        [
            1j * F * k2 * k3**2 * omega,
            -1j * F * k1 * k3**2 * omega,
            np.zeros_like(omega),
            -1j * (k1**2 + k2**2) * k3 * omega,
        ]
    )
    return mult * vec


def g_force(U_qg: SpectralField, params: PhysParams, adv: SpectralField | None = None) -> SpectralField:
    """Divergence-free, potential-vorticity-free forcing ``G = G^b + G^l``.

    ``G^b = P(osc part of U . grad U)``; ``G^l`` vanishes when ``nu = nu'``.
    ``adv`` may pass a precomputed ``U . grad U``.
    """
    if adv is None:
        adv = convective_term(U_qg, U_qg)
    G = leray_project(osc_project(adv, params.F))
    if not params.equal_viscosities:
        G = G + U_qg.like(_g_linear_part(U_qg, params))
    return G


def w_systems_rhs(
    W: SpectralField,
    kind: SystemKind | str,
    params: PhysParams,
    G: SpectralField | None = None,
) -> SpectralField:
    """``Gamma W - (1/eps) P A W``, minus ``G`` for the inhomogeneous flow."""
    kind = SystemKind(kind)
    if kind not in (SystemKind.W_H, SystemKind.W_INH):
        raise ValueError(f"w_systems_rhs handles W_H and W_INH, not {kind}")
    out = gamma_apply(W, params) - _rotation_pe(W, params)
    if kind is SystemKind.W_INH:
        if G is None:
            raise MissingForcingError("W_INH needs the forcing G at the same time")
        out = out - G
    return out


def _same_time(*fields):
    stamps = {f.t for f in fields if f.t is not None}
    if len(stamps) > 1:
        raise TimestampMismatchError(f"inputs carry different time stamps: {sorted(stamps)}")


def f_terms(delta, U_qg, W_h, W_inh, real: bool | None = None) -> list[SpectralField]:
    """The ten source terms of the error equation for the primitive system."""
    _same_time(delta, U_qg, W_h, W_inh)
    grids = {f.grid for f in (delta, U_qg, W_h, W_inh)}
    if len(grids) != 1:
        raise ShapeMismatchError("f_terms inputs must share one grid")

    def minus_p(a, b):
        return -leray_project(convective_term(a, b, real))

    qi = U_qg + W_inh
    return [
        minus_p(delta, delta),
        minus_p(delta, qi),
        minus_p(qi, delta),
        minus_p(delta, W_h),
        minus_p(W_h, delta),
        minus_p(U_qg, W_inh),
        minus_p(qi, W_h),
        minus_p(W_h, qi),
        minus_p(W_inh, qi),
        minus_p(W_h, W_h),
    ]


def delta_pe_nonlinear(delta, U_qg, W_h, W_inh, adv_qg: SpectralField | None = None) -> SpectralField:
    """Sum of the ten source terms, ``P(U~ . grad U~) - P(U . grad U)`` with ``U = delta + U~ + W``."""
    total = delta + U_qg + W_h + W_inh
    if adv_qg is None:
        adv_qg = convective_term(U_qg, U_qg, real=True)
    return leray_project(adv_qg - convective_term(total, total, real=True))


def delta_pe_rhs(delta, U_qg, W_h, W_inh, params: PhysParams) -> SpectralField:
    if not params.equal_viscosities:
        raise UnsupportedConfigurationError("the error system is formulated for nu = nu'")
    _same_time(delta, U_qg, W_h, W_inh)
    linear = _diffusion(delta, params) - _rotation_pe(delta, params)
    return linear + delta_pe_nonlinear(delta, U_qg, W_h, W_inh)


# -- rotating fluids -------------------------------------------------------


def ns2d_nonlinear(ubar: SpectralField, real: bool = True) -> SpectralField:
    return -leray_project(convective_term(ubar, ubar, real))


def ns2d_rhs(ubar: SpectralField, nu: float) -> SpectralField:
    """Two-dimensional Navier-Stokes with three components.

    The horizontal part is Leray-projected in 2D; the third component is a
    passive scalar advected by the horizontal flow.
    """
    if ubar.grid.ndim != 2 or ubar.components != 3:
        raise ComponentCountError("ns2d_rhs needs a 3-component field on a 2D grid")
    return ns2d_nonlinear(ubar, real=None) + laplacian(ubar) * nu


def lift_2d(ubar: SpectralField, grid3d: GridSpec) -> SpectralField:
    """Embed an x_3-independent field into the ``xi_3 = 0`` plane of ``grid3d``."""
    g2 = ubar.grid
    if grid3d.ndim != 3 or g2.ndim != 2:
        raise ShapeMismatchError("lift_2d maps a 2D field onto a 3D grid")
    if grid3d.n[:2] != g2.n or not np.allclose(grid3d.lengths[:2], g2.lengths):
        raise ShapeMismatchError(
            f"horizontal grids differ: {g2.n}/{g2.lengths} vs {grid3d.n[:2]}/{grid3d.lengths[:2]}"
        )
    out = np.zeros((ubar.components,) + grid3d.shape, dtype=complex)
    out[..., 0] = ubar.coeffs
    return SpectralField(grid3d, out, ubar.t)


def rf_nonlinear(v: SpectralField, real: bool = True) -> SpectralField:
    return -leray_project(convective_term(v, v, real))


def rf_rhs(v: SpectralField, params: PhysParams, nonlinear: bool = True) -> SpectralField:
    """``-P(v . grad v) + nu Delta v - (1/eps) P(e3 ^ v)``."""
    out = laplacian(v) * params.nu - _rotation_rf(v, params)
    if nonlinear:
        out = out + rf_nonlinear(v, real=None)
    return out


def lrf_rhs(W: SpectralField, params: PhysParams) -> SpectralField:
    return rf_rhs(W, params, nonlinear=False)


def prf_nonlinear(w: SpectralField, ubar3: SpectralField, real: bool = True) -> SpectralField:
    """``-P(w.grad w + w.grad u + u.grad w)``, using ``(w+u).grad(w+u) - u.grad u``."""
    total = w + ubar3
    return -leray_project(convective_term(total, total, real) - convective_term(ubar3, ubar3, real))


def prf_rhs(w: SpectralField, ubar_lifted: SpectralField, params: PhysParams) -> SpectralField:
    """Perturbed rotating-fluid system around a lifted two-dimensional flow."""
    real = None
    adv = (
        convective_term(w, w, real)
        + convective_term(w, ubar_lifted, real)
        + convective_term(ubar_lifted, w, real)
    )
    return -leray_project(adv) + laplacian(w) * params.nu - _rotation_rf(w, params)


def g_terms_rf(delta, W, ubar_lifted, real: bool | None = None) -> list[SpectralField]:
    """The eight source terms of the rotating-fluid error equation."""
    _same_time(delta, W, ubar_lifted)

    def minus_p(a, b):
        return -leray_project(convective_term(a, b, real))

    return [
        minus_p(delta, delta),
        minus_p(delta, W),
        minus_p(W, delta),
        minus_p(W, W),
        minus_p(delta, ubar_lifted),
        minus_p(ubar_lifted, delta),
        minus_p(W, ubar_lifted),
        minus_p(ubar_lifted, W),
    ]


def delta_rf_nonlinear(delta, W, ubar3, real: bool = True) -> SpectralField:
    return prf_nonlinear(delta + W, ubar3, real)


def delta_rf_rhs(delta, W, ubar_lifted, params: PhysParams) -> SpectralField:
    linear = laplacian(delta) * params.nu - _rotation_rf(delta, params)
    return linear + delta_rf_nonlinear(delta, W, ubar_lifted, real=None)


def pressure(v: SpectralField) -> SpectralField:
    """Diagnostic pressure ``-Delta^{-1} div(v . grad v)`` (mean set to 0)."""
    g = v.grid
    div = divergence(convective_term(v, v)).coeffs
    k2 = np.where(g.zero_mode, 1.0, g.k2)
    return v.like(np.where(g.zero_mode, 0.0, div / k2))
