"""Periodic grids, Fourier transforms, differentiation and dealiasing.

Coefficients follow the Fourier-series convention: a constant field ``c``
maps to the coefficient ``c`` at the zero wavevector and ``cos(x1)`` on a
``2*pi`` torus has coefficient ``1/2`` at ``xi = +-e1``.  With this
convention Parseval reads ``||u||_{L^2}^2 = volume * sum |u_hat|^2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .exceptions import InvalidGridError, ShapeMismatchError

__all__ = [
    "GridSpec",
    "SpectralField",
    "make_grid",
    "transform_forward",
    "transform_inverse",
    "derivative",
    "gradient",
    "laplacian",
    "dealias",
    "inner",
    "l2_norm",
    "save_snapshot",
    "load_snapshot",
]


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a periodic box discretised with ``n[i]`` points per axis.

    Wavevector tables are derived lazily and cached on the instance; the
    dataclass fields alone define equality and hashing.
    """

    n: tuple[int, ...]
    lengths: tuple[float, ...]
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if len(self.n) != len(self.lengths):
            raise InvalidGridError(
                f"n has {len(self.n)} axes but lengths has {len(self.lengths)}"
            )
        if len(self.n) not in (2, 3):
            raise InvalidGridError(f"only 2D and 3D grids are supported, got {len(self.n)} axes")
        for m in self.n:
            if int(m) != m or m < 8 or m % 2:
                raise InvalidGridError(f"every axis needs an even number of points >= 8, got n={self.n}")
        for length in self.lengths:
            if not length > 0:
                raise InvalidGridError(f"torus periods must be positive, got {self.lengths}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise InvalidGridError(
                f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction}"
            )

    @property
    def ndim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def axes(self) -> tuple[int, ...]:
        """Spatial axes of a component-first coefficient array."""
        return tuple(range(1, self.ndim + 1))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(length / m for length, m in zip(self.lengths, self.n))

    @property
    def cell_volume(self) -> float:
        return self.volume / self.size

    @cached_property
    def signed_indices(self) -> tuple[np.ndarray, ...]:
        """Signed alias of every FFT index, in ``[-n/2, n/2)``."""
        return tuple(np.fft.fftfreq(m, 1.0 / m).astype(int) for m in self.n)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(
            2.0 * np.pi / length * idx for length, idx in zip(self.lengths, self.signed_indices)
        )

    def k(self, axis: int) -> np.ndarray:
        """Wavenumbers along ``axis`` shaped to broadcast against the grid."""
        shape = [1] * self.ndim
        shape[axis] = self.n[axis]
        return self.wavenumbers[axis].reshape(shape)

    @cached_property
    def k2(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for axis in range(self.ndim):
            out = out + self.k(axis) ** 2
        return out

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def zero_mode(self) -> np.ndarray:
        return self.k2 == 0.0

    @cached_property
    def mask(self) -> np.ndarray:
        """True where a mode survives dealiasing.  Nyquist modes never do."""
        keep = np.ones(self.shape, dtype=bool)
        for axis, (m, idx) in enumerate(zip(self.n, self.signed_indices)):
            ok = (np.abs(idx) <= self.dealias_fraction * m / 2 + 1e-9) & (idx != -m // 2)
            shape = [1] * self.ndim
            shape[axis] = m
            keep = keep & ok.reshape(shape)
        return keep

    @property
    def k_min(self) -> float:
        """Smallest nonzero wavenumber magnitude."""
        return min(2.0 * np.pi / length for length in self.lengths)

    @property
    def k_max(self) -> float:
        """Largest wavevector magnitude kept by the dealias mask."""
        return float(self.kabs[self.mask].max())

    def horizontal(self) -> "GridSpec":
        """The 2D grid spanned by the first two axes."""
        return GridSpec(self.n[:2], self.lengths[:2], self.dealias_fraction)

    def to_dict(self) -> dict:
        return {
            "n": list(self.n),
            "lengths": list(self.lengths),
            "dealias_fraction": self.dealias_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return make_grid(d["n"], d["lengths"], d.get("dealias_fraction", 2.0 / 3.0))


def make_grid(
    n: Sequence[int],
    lengths: Sequence[float] | float | None = None,
    dealias_fraction: float = 2.0 / 3.0,
) -> GridSpec:
    """Build a periodic grid.

    Args:
        n: points per axis (2 or 3 axes), each even and at least 8.
        lengths: torus period per axis, or one period for every axis.
            Defaults to ``2*pi``.
        dealias_fraction: modes with ``|m| > dealias_fraction * n/2`` on any
            axis are removed by :func:`dealias`.

    Raises:
        InvalidGridError: on odd or tiny ``n`` or nonpositive lengths.
    """
    n = tuple(int(m) if float(m).is_integer() else m for m in n)
    if lengths is None:
        lengths = 2.0 * np.pi
    if np.isscalar(lengths):
        lengths = (float(lengths),) * len(n)
    return GridSpec(n, tuple(float(x) for x in lengths), float(dealias_fraction))


@dataclass(eq=False)
class SpectralField:
    """Fourier coefficients of a ``c``-component field on ``grid``.

    ``coeffs`` has shape ``(c, *grid.n)`` in FFT ordering.  ``t`` is an
    optional time stamp carried for bookkeeping.
    """

    grid: GridSpec
    coeffs: np.ndarray
    t: float | None = field(default=None)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim == self.grid.ndim:
            self.coeffs = self.coeffs[None]
        if self.coeffs.shape[1:] != self.grid.shape:
            raise ShapeMismatchError(
                f"coefficient shape {self.coeffs.shape} does not match grid {self.grid.shape}"
            )

    @property
    def components(self) -> int:
        return self.coeffs.shape[0]

    def like(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coeffs, self.t)

    def copy(self) -> "SpectralField":
        return self.like(self.coeffs.copy())

    def __getitem__(self, item) -> "SpectralField":
        c = self.coeffs[item]
        if c.ndim == self.grid.ndim:
            c = c[None]
        return self.like(c)

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise ShapeMismatchError("fields live on different grids")
        if other.components != self.components:
            raise ShapeMismatchError(
                f"component counts differ: {self.components} vs {other.components}"
            )

    def __add__(self, other):
        self._check(other)
        return self.like(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return self.like(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return self.like(self.coeffs * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self.like(self.coeffs / scalar)

    def __neg__(self):
        return self.like(-self.coeffs)

    @classmethod
    def zeros(cls, grid: GridSpec, components: int, t=None) -> "SpectralField":
        return cls(grid, np.zeros((components,) + grid.shape, dtype=complex), t)


def transform_forward(samples, grid: GridSpec, t=None) -> SpectralField:
    """Physical samples -> Fourier-series coefficients.

    ``samples`` has shape ``grid.n`` (scalar) or ``(c, *grid.n)``.
    """
    samples = np.asarray(samples)
    if samples.shape == grid.shape:
        samples = samples[None]
    if samples.shape[1:] != grid.shape:
        raise ShapeMismatchError(f"samples of shape {samples.shape} do not fit grid {grid.shape}")
    coeffs = sfft.fftn(samples, axes=grid.axes) / grid.size
    return SpectralField(grid, coeffs, t)


def transform_inverse(u: SpectralField, real: bool = True) -> np.ndarray:
    """Fourier-series coefficients -> samples of shape ``(c, *grid.n)``.

    With ``real=True`` the imaginary part, which is roundoff for Hermitian
    coefficients, is dropped.
    """
    out = sfft.ifftn(u.coeffs, axes=u.grid.axes) * u.grid.size
    return out.real if real else out


def to_physical_real(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Fast inverse transform for coefficients known to be Hermitian."""
    half = coeffs[..., : grid.n[-1] // 2 + 1]
    return sfft.irfftn(half, s=grid.shape, axes=grid.axes) * grid.size


def to_spectral_real(samples: np.ndarray, grid: GridSpec) -> np.ndarray:
    return sfft.fftn(samples, axes=grid.axes) / grid.size


def derivative(u: SpectralField, axis: int) -> SpectralField:
    """Spectral partial derivative along ``axis`` (multiplier ``i xi_axis``)."""
    return u.like(1j * u.grid.k(axis) * u.coeffs)


def gradient(u: SpectralField) -> np.ndarray:
    """Coefficients of every partial derivative, shape ``(ndim, c, *n)``."""
    g = u.grid
    return np.stack([1j * g.k(axis) * u.coeffs for axis in range(g.ndim)])


def laplacian(u: SpectralField) -> SpectralField:
    return u.like(-u.grid.k2 * u.coeffs)


def dealias(u: SpectralField) -> SpectralField:
    return u.like(u.coeffs * u.grid.mask)


def inner(u: SpectralField, v: SpectralField) -> float:
    """Real L^2 inner product over the torus, computed spectrally."""
    return float(u.grid.volume * np.real(np.vdot(u.coeffs, v.coeffs)))


def l2_norm(u: SpectralField) -> float:
    return float(np.sqrt(u.grid.volume * np.sum(np.abs(u.coeffs) ** 2)))


def save_snapshot(path, u: SpectralField, t: float | None = None, run_id: str = "") -> None:
    """Write ``u`` as one JSON header line followed by raw complex128 data."""
    if t is None:
        t = u.t if u.t is not None else 0.0
    header = {
        "grid": u.grid.to_dict(),
        "components": u.components,
        "time": float(t),
        "run_id": run_id,
        "dtype": "<c16",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(np.ascontiguousarray(u.coeffs, dtype="<c16").tobytes())


def load_snapshot(path) -> tuple[SpectralField, dict]:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    header = json.loads(head)
    grid = GridSpec.from_dict(header["grid"])
    shape = (header["components"],) + grid.shape
    expected = int(np.prod(shape)) * 16
    if len(body) != expected:
        raise ShapeMismatchError(
            f"snapshot body has {len(body)} bytes, header implies {expected}"
        )
    coeffs = np.frombuffer(body, dtype=header.get("dtype", "<c16")).reshape(shape).copy()
    return SpectralField(grid, coeffs, header.get("time")), header
