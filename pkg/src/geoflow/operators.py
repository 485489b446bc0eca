"""Fourier-multiplier operators of the rotating / stratified systems.

Four-component fields are ``U = (v1, v2, v3, theta)``.  Whenever an
operator "projects" a four-component field, the Leray projection acts on the
velocity triplet and leaves ``theta`` untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .exceptions import ComponentCountError, WaveBasisError
from .spectral import GridSpec, SpectralField

__all__ = [
    "PhysParams",
    "WaveBasis",
    "apply_A",
    "e3_cross",
    "divergence",
    "leray_project",
    "potential_vorticity",
    "delta_F_symbol",
    "delta_F_inverse",
    "qg_project",
    "osc_project",
    "qg_from_vorticity",
    "gamma_symbol",
    "gamma_apply",
    "wave_basis",
    "pe_frequency",
    "rf_frequency",
]


@dataclass(frozen=True)
class PhysParams:
    """Viscosity ``nu``, diffusivity ``nu_prime``, Froude ratio ``F`` and Rossby number ``eps``."""

    nu: float
    F: float = 1.0
    eps: float = 1.0
    nu_prime: float | None = None

    def __post_init__(self):
        if self.nu_prime is None:
            object.__setattr__(self, "nu_prime", self.nu)
        for name in ("nu", "nu_prime"):
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
        for name in ("F", "eps"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")

    @property
    def dispersive(self) -> bool:
        return self.F != 1.0

    @property
    def equal_viscosities(self) -> bool:
        return self.nu == self.nu_prime

    @property
    def nu0(self) -> float:
        return min(self.nu, self.nu_prime)

    def with_eps(self, eps: float) -> "PhysParams":
        return PhysParams(nu=self.nu, F=self.F, eps=eps, nu_prime=self.nu_prime)

    def to_dict(self) -> dict:
        return {"nu": self.nu, "nu_prime": self.nu_prime, "F": self.F, "eps": self.eps}


def _require(u: SpectralField, count: int | tuple[int, ...], what: str):
    counts = (count,) if isinstance(count, int) else count
    if u.components not in counts:
        raise ComponentCountError(f"{what} needs {counts} components, got {u.components}")


def _ks(grid: GridSpec):
    return [grid.k(axis) for axis in range(grid.ndim)]


def apply_A(U: SpectralField, F: float) -> SpectralField:
    """Pointwise rotation/stratification matrix: (v1,v2,v3,th) -> (-v2, v1, th/F, -v3/F)."""
    _require(U, 4, "apply_A")
    c = U.coeffs
    return U.like(np.stack([-c[1], c[0], c[3] / F, -c[2] / F]))


def e3_cross(v: SpectralField) -> SpectralField:
    """``e3 ^ v`` on the velocity triplet."""
    if v.components < 3:
        raise ComponentCountError("e3_cross needs at least 3 components")
    c = v.coeffs
    out = np.zeros_like(c)
    out[0] = -c[1]
    out[1] = c[0]
    return v.like(out)


def divergence(v: SpectralField) -> SpectralField:
    """Divergence of the velocity part (first ``grid.ndim`` components)."""
    g = v.grid
    if v.components < g.ndim:
        raise ComponentCountError("divergence needs a velocity part")
    out = sum(1j * k * v.coeffs[a] for a, k in enumerate(_ks(g)))
    return v.like(out[None])


def leray_project(v: SpectralField) -> SpectralField:
    """Remove the gradient part of the velocity; other components pass through."""
    g = v.grid
    if v.components < g.ndim:
        raise ComponentCountError(
            f"Leray projection needs at least {g.ndim} components, got {v.components}"
        )
    ks = _ks(g)
    k2 = np.where(g.zero_mode, 1.0, g.k2)
    c = v.coeffs.copy()
    kdotv = sum(k * c[a] for a, k in enumerate(ks)) / k2
    for a, k in enumerate(ks):
        c[a] -= k * kdotv
    return v.like(c)


def potential_vorticity(U: SpectralField, F: float) -> SpectralField:
    """``d1 v2 - d2 v1 - F d3 theta`` as a scalar field."""
    _require(U, 4, "potential_vorticity")
    k1, k2, k3 = _ks(U.grid)
    c = U.coeffs
    return U.like((1j * k1 * c[1] - 1j * k2 * c[0] - F * 1j * k3 * c[3])[None])


def delta_F_symbol(grid: GridSpec, F: float) -> np.ndarray:
    k1, k2, k3 = _ks(grid)
    return -(k1**2 + k2**2 + F**2 * k3**2)


def delta_F_inverse(w: SpectralField, F: float) -> SpectralField:
    """Invert ``d1^2 + d2^2 + F^2 d3^2``; the mean coefficient is set to 0."""
    sym = delta_F_symbol(w.grid, F)
    zero = w.grid.zero_mode
    inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, sym))
    return w.like(w.coeffs * inv)


def qg_from_vorticity(omega: SpectralField, F: float) -> SpectralField:
    """Biot-Savart law: (-d2, d1, 0, -F d3) applied to ``Delta_F^{-1} omega``."""
    _require(omega, 1, "qg_from_vorticity")
    psi = delta_F_inverse(omega, F).coeffs[0]
    k1, k2, k3 = _ks(omega.grid)
    out = np.stack([-1j * k2 * psi, 1j * k1 * psi, np.zeros_like(psi), -F * 1j * k3 * psi])
    return omega.like(out)


def qg_project(U: SpectralField, F: float) -> SpectralField:
    return qg_from_vorticity(potential_vorticity(U, F), F)


def osc_project(U: SpectralField, F: float) -> SpectralField:
    return U - qg_project(U, F)


def gamma_symbol(grid: GridSpec, params: PhysParams) -> np.ndarray:
    """Real symbol of ``Delta Delta_F^{-1} (nu d1^2 + nu d2^2 + nu' F^2 d3^2)``; 0 at the mean."""
    k1, k2, k3 = _ks(grid)
    F = params.F
    num = params.nu * (k1**2 + k2**2) + params.nu_prime * F**2 * k3**2
    den = k1**2 + k2**2 + F**2 * k3**2
    zero = grid.zero_mode
    return np.where(zero, 0.0, -grid.k2 * num / np.where(zero, 1.0, den))


def gamma_apply(U: SpectralField, params: PhysParams) -> SpectralField:
    return U.like(U.coeffs * gamma_symbol(U.grid, params))


def pe_frequency(grid: GridSpec, F: float) -> np.ndarray:
    """``|xi|_F / (F |xi|)``, zero at the mean."""
    zero = grid.zero_mode
    kF = np.sqrt(-delta_F_symbol(grid, F))
    return np.where(zero, 0.0, kF / (F * np.where(zero, 1.0, grid.kabs)))


def rf_frequency(grid: GridSpec) -> np.ndarray:
    """``|xi_3| / |xi|``, zero at the mean."""
    zero = grid.zero_mode
    k3 = np.broadcast_to(grid.k(2), grid.shape)
    return np.where(zero, 0.0, np.abs(k3) / np.where(zero, 1.0, grid.kabs))


@dataclass(frozen=True, eq=False)
class WaveBasis:
    """Per-wavevector eigenvectors of the penalised skew operator on divergence-free fields.

    ``vectors[a]`` is a unit eigenvector field (shape ``(c, *n)``) for mode
    ``a`` and ``frequencies[a]`` its eigenvalue of ``i P A`` (PE) or
    ``i P(e3 ^ .)`` (RF), sorted ascending.  The solution of
    ``dU/dt = -(1/eps) P A U`` is therefore ``sum_a exp(i t w_a / eps) P_a U``.
    PE modes are ``(-, 0, +)``; RF modes are ``(-, +)``.
    """

    grid: GridSpec
    system: str
    F: float
    frequencies: np.ndarray
    vectors: np.ndarray

    @property
    def modes(self) -> int:
        return self.frequencies.shape[0]

    @property
    def components(self) -> int:
        return self.vectors.shape[1]

    @property
    def labels(self) -> tuple[str, ...]:
        return ("-", "0", "+") if self.system == "PE" else ("-", "+")

    def mode_index(self, label: str) -> int:
        return self.labels.index(label)

    def amplitudes(self, coeffs: np.ndarray) -> np.ndarray:
        """Components of ``coeffs`` along every eigenvector, shape ``(m, *n)``."""
        return np.einsum("ac...,c...->a...", self.vectors.conj(), coeffs)

    def project(self, U: SpectralField, label: str) -> SpectralField:
        a = self.mode_index(label)
        amp = np.sum(self.vectors[a].conj() * U.coeffs, axis=0)
        return U.like(self.vectors[a] * amp)

    def apply(self, coeffs: np.ndarray, factors: np.ndarray) -> np.ndarray:
        """Multiply each eigencomponent by ``factors[a]``; the complement is left unchanged."""
        out = coeffs.copy()
        conj = self._conj
        for a in range(self.modes):
            if np.all(factors[a] == 1.0):
                continue
            amp = np.einsum("c...,c...->...", conj[a], coeffs)
            amp *= factors[a] - 1.0
            out += self.vectors[a] * amp
        return out

    @cached_property
    def _conj(self) -> np.ndarray:
        c = np.ascontiguousarray(self.vectors.conj())
        c.setflags(write=False)
        return c

    @property
    def max_frequency(self) -> float:
        return float(np.abs(self.frequencies).max())


def _a_matrix(F: float) -> np.ndarray:
    return np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1 / F], [0, 0, -1 / F, 0]])


_E3_MATRIX = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)


def _divfree_basis(grid: GridSpec, system: str) -> np.ndarray:
    """Orthonormal real basis of divergence-free vectors at each xi, shape (N, c, m)."""
    xi = np.stack([np.broadcast_to(grid.k(a), grid.shape).ravel() for a in range(3)], axis=1)
    r = np.linalg.norm(xi, axis=1)
    unit = xi / np.where(r > 0, r, 1.0)[:, None]
    xh = np.hypot(xi[:, 0], xi[:, 1])
    a = np.zeros_like(xi)
    horiz = xh > 0
    a[horiz, 0] = -xi[horiz, 1] / xh[horiz]
    a[horiz, 1] = xi[horiz, 0] / xh[horiz]
    a[~horiz, 0] = 1.0
    b = np.cross(unit, a)
    if system == "PE":
        basis = np.zeros((xi.shape[0], 4, 3))
        basis[:, :3, 0] = a
        basis[:, :3, 1] = b
        basis[:, 3, 2] = 1.0
    else:
        basis = np.stack([a, b], axis=2)
    basis[r == 0] = 0.0
    return basis


@lru_cache(maxsize=8)
def wave_basis(grid: GridSpec, F: float = 1.0, system: str = "PE", tol: float = 1e-10) -> WaveBasis:
    """Numerically diagonalise the penalised operator at every resolved xi.

    The computed nonzero frequencies are checked against ``|xi|_F/(F|xi|)``
    (PE) or ``|xi_3|/|xi|`` (RF).

    Raises:
        WaveBasisError: naming the wavevector where the check fails.
    """
    if system not in ("PE", "RF"):
        raise ValueError(f"system must be 'PE' or 'RF', got {system!r}")
    if grid.ndim != 3:
        raise ValueError("wave bases are defined on 3D grids")
    if F == 0:
        raise ValueError("F must be nonzero")
    B = _divfree_basis(grid, system)
    M = _a_matrix(F) if system == "PE" else _E3_MATRIX
    K = np.einsum("nci,cd,ndj->nij", B, M, B)
    try:
        w, V = np.linalg.eigh(1j * K)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise WaveBasisError(f"eigen-solver failed: {exc}") from exc
    vectors = np.einsum("nci,nia->anc", B, V)

    zero = grid.zero_mode.ravel()
    if system == "PE":
        omega = pe_frequency(grid, F).ravel()
        expected = np.stack([-omega, np.zeros_like(omega), omega], axis=1)
    else:
        omega = rf_frequency(grid).ravel()
        expected = np.stack([-omega, omega], axis=1)
    err = np.abs(w - expected)
    err[zero] = 0.0
    worst = int(np.argmax(err.max(axis=1)))
    if err[worst].max() > tol:
        xi = tuple(float(np.broadcast_to(grid.k(a), grid.shape).ravel()[worst]) for a in range(3))
        raise WaveBasisError(
            f"frequency mismatch {err[worst].max():.3e} at xi={xi}", xi=xi
        )
    w[zero] = 0.0
    vectors[:, zero] = 0.0
    m = w.shape[1]
    frequencies = np.ascontiguousarray(w.T.reshape((m,) + grid.shape))
    vectors = np.ascontiguousarray(
        vectors.transpose(0, 2, 1).reshape((m, B.shape[1]) + grid.shape)
    )
    frequencies.setflags(write=False)
    vectors.setflags(write=False)
    return WaveBasis(grid, system, float(F), frequencies, vectors)
