"""Ill-prepared initial data, epsilon sweeps and dispersive-decay probes.

The sweeps measure how the error ``delta_eps`` between the full solution
and its limit decomposition shrinks with the Rossby number and fit a power
law.  The probes measure how space-time norms of the linear oscillating flow
depend on ``eps``.  Measured exponents are reported next to the asymptotic
whole-space predictions; only weak properties are asserted elsewhere.
"""

from __future__ import annotations

import csv
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DivergenceError, GridTooSmallError
from .littlewood_paley import (
    _aniso_from_modulus,
    _lebesgue_from_modulus,
    energy_norm_from_samples,
    fractional_derivative,
    intersection_norm,
    lebesgue_norm,
    phi,
    sobolev_norm,
)
from .operators import (
    PhysParams,
    leray_project,
    osc_project,
    qg_from_vorticity,
    qg_project,
    wave_basis,
)
from .spectral import GridSpec, SpectralField, gradient, l2_norm, transform_forward
from .timestepper import DtPolicy, FlowState, LinearFlow, integrate

__all__ = [
    "DataSpec",
    "RateReport",
    "ProbeReport",
    "shell_index",
    "make_osc_data",
    "make_qg_data",
    "make_ubar_data",
    "make_probe_datum",
    "fit_power_law",
    "PowerLawRegressor",
    "predicted_exponents",
    "epsilon_sweep",
    "parse_target",
    "strichartz_probe",
]

_PHI_TAIL = 1e-8


@dataclass(frozen=True)
class DataSpec:
    """Exponents and constants describing an ill-prepared initial datum.

    ``hypothesis`` selects which norm of the oscillating part is normalised:
    ``"H2"`` sets ``||U_osc||_{H^{1/2+delta}} = m(eps) eps^{-delta/2}`` with
    ``m(eps) = eps^{m_exponent}``; ``"H3"`` sets it to ``C0 eps^{-gamma}``;
    ``"H4"`` sets ``max(||.||_{H^{1/2+c delta}}, ||.||_{H^{1/2+delta}})`` to
    ``C0 eps^{-gamma}``.  The rotating-fluid datum always uses the H4 form.
    """

    delta: float
    gamma: float
    alpha0: float = 1.0
    C0: float = 1.0
    c_lowfreq: float = 0.9
    seed: int = 0
    profile: str = "single_shell"
    shell_base: float = 1.0
    spectral_slope: float = 2.0
    hypothesis: str = "H3"
    system: str = "PE"
    m_exponent: float | None = None
    eta: float | None = None
    eta_prime: float | None = None
    k: float = 0.99
    qg_k0: float = 1.0
    ubar_norm: float | None = None

    def __post_init__(self):
        limit = 1.0 / 6.0 if self.system == "PE" else 0.25
        if self.system not in ("PE", "RF"):
            raise ValueError(f"system must be PE or RF, got {self.system!r}")
        if not 0 < self.delta <= limit + 1e-15:
            raise ValueError(f"delta must lie in (0, {limit:.4g}] for {self.system}, got {self.delta}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.gamma < self.delta / 2:
            raise ValueError(
                f"gamma must be < delta/2 (got gamma={self.gamma}, delta/2={self.delta / 2})"
            )
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be > 0")
        if not self.C0 >= 1:
            raise ValueError("C0 must be >= 1")
        if not 0 < self.c_lowfreq < 1:
            raise ValueError("c_lowfreq must lie in (0, 1)")
        if not 0 < self.k < 1:
            raise ValueError("k must lie in (0, 1)")
        if self.profile not in ("single_shell", "power_law"):
            raise ValueError(f"profile must be single_shell or power_law, got {self.profile!r}")
        if self.hypothesis not in ("H2", "H3", "H4"):
            raise ValueError(f"hypothesis must be H2, H3 or H4, got {self.hypothesis!r}")
        if self.eta is not None and not 0 < self.eta < 2 * self.eta0:
            raise ValueError("eta must lie in (0, 2 eta0)")
        if self.eta_prime is not None and not 0 < self.eta_prime < min(self.eta_value, self.c_lowfreq):
            raise ValueError("eta_prime must lie in (0, min(eta, c))")

    @property
    def eta0(self) -> float:
        return 0.5 * (1.0 - 2.0 * self.gamma / self.delta)

    @property
    def eta_value(self) -> float:
        return self.eta0 if self.eta is None else self.eta

    @property
    def eta_prime_value(self) -> float:
        if self.eta_prime is not None:
            return self.eta_prime
        return 0.5 * min(self.eta_value, self.c_lowfreq)

    def m(self, eps: float) -> float:
        expo = self.delta / 4 if self.m_exponent is None else self.m_exponent
        return eps**expo

    def to_dict(self) -> dict:
        return asdict(self)


# -- initial data ------------------------------------------------------------


def shell_index(spec: DataSpec, eps: float) -> int:
    """Dyadic shell ``round(log2(shell_base * eps^{-gamma/delta}))`` of the oscillating datum."""
    return int(round(math.log2(spec.shell_base * eps ** (-spec.gamma / spec.delta))))


@lru_cache(maxsize=1)
def _phi_upper_cut() -> float:
    """Smallest ``r`` beyond which ``phi(r) < _PHI_TAIL``."""
    lo, hi = 4.0 / 3.0, 8.0 / 3.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if phi(mid) < _PHI_TAIL:
            hi = mid
        else:
            lo = mid
    return hi


def _resolved_radius(grid: GridSpec) -> float:
    """Radius of the largest ball of wavevectors kept by the dealias mask."""
    return min(
        math.floor(grid.dealias_fraction * m / 2 + 1e-9) * 2 * math.pi / length
        for m, length in zip(grid.n, grid.lengths)
    )


def _required_n(grid: GridSpec, radius: float) -> int:
    length = max(grid.lengths)
    m = 8
    while math.floor(grid.dealias_fraction * m / 2 + 1e-9) * 2 * math.pi / length < radius:
        m += 2
    return m


def _shell_weight(grid: GridSpec, j: int) -> np.ndarray:
    need = 2.0**j * _phi_upper_cut()
    if _resolved_radius(grid) < need:
        req = _required_n(grid, need)
        raise GridTooSmallError(
            f"dyadic shell j={j} needs wavenumbers up to {need:.3g}; use n >= {req}",
            required_n=req,
        )
    weight = phi(2.0 ** (-j) * grid.kabs)
    weight[grid.zero_mode] = 0.0
    if not np.any(weight[grid.mask] > _PHI_TAIL):
        raise GridTooSmallError(f"dyadic shell j={j} lies below the lowest torus wavenumber")
    return weight


def _noise(grid: GridSpec, components: int, seed: int, stream: int) -> SpectralField:
    rng = np.random.default_rng([seed, stream])
    return transform_forward(rng.standard_normal((components,) + grid.shape), grid)


def make_osc_data(grid: GridSpec, spec: DataSpec, eps: float, F: float = 1.0) -> SpectralField:
    """Oscillating initial datum with random phases and an exact norm target.

    PE: four components in the range of the oscillating projector (zero
    potential vorticity). RF: three divergence-free components with no
    ``xi_3 = 0`` modes, so the whole datum disperses.

    Raises:
        GridTooSmallError: when the target shell is not resolved.
    """
    components = 4 if spec.system == "PE" else 3
    u = _noise(grid, components, spec.seed, 1)
    if spec.profile == "single_shell":
        weight = _shell_weight(grid, shell_index(spec, eps))
    else:
        k = np.where(grid.zero_mode, 1.0, grid.kabs)
        weight = np.where(grid.zero_mode, 0.0, k ** (-spec.spectral_slope))
    u = leray_project(u.like(u.coeffs * weight * grid.mask))
    if spec.system == "PE":
        u = osc_project(u, F)
        u = leray_project(u)
    else:
        vertical_zero = (grid.k(2) == 0.0)
        u = u.like(np.where(vertical_zero, 0.0, u.coeffs))
    hi = 0.5 + spec.delta
    if spec.system == "RF" or spec.hypothesis == "H4":
        current = intersection_norm(u, (0.5 + spec.c_lowfreq * spec.delta, hi))
        target = spec.C0 * eps ** (-spec.gamma)
    elif spec.hypothesis == "H3":
        current = sobolev_norm(u, hi)
        target = spec.C0 * eps ** (-spec.gamma)
    else:
        current = sobolev_norm(u, hi)
        target = spec.m(eps) * eps ** (-spec.delta / 2)
    return u * (target / current)


def _qg_profile(grid: GridSpec, k0: float) -> np.ndarray:
    """Deterministic low-mode potential vorticity in physical space."""
    kappa = [max(1, round(k0 * length / (2 * math.pi))) * 2 * math.pi / length for length in grid.lengths]
    x = np.meshgrid(*[np.arange(m) * length / m for m, length in zip(grid.n, grid.lengths)], indexing="ij")
    return (
        np.cos(kappa[0] * x[0] + kappa[2] * x[2])
        + np.cos(kappa[1] * x[1] - kappa[2] * x[2])
        + 0.5 * np.sin(kappa[0] * x[0] + kappa[1] * x[1])
    )


def _h1_norm(u: SpectralField, spec: DataSpec) -> float:
    return intersection_norm(u, (0.5, 0.5 + spec.delta))


def make_qg_data(grid: GridSpec, spec: DataSpec, eps: float, F: float = 1.0):
    """Quasi-geostrophic limit datum and its perturbed copy.

    Returns ``(U0_qg_eps, U0_qg_limit)``.  The limit has norm ``C0`` in
    ``H^{1/2} cap H^{1/2+delta}`` (max of the two); the copy differs from it by
    a seeded low-mode QG field of norm exactly ``C0 eps^alpha0``.
    """
    omega = transform_forward(_qg_profile(grid, spec.qg_k0), grid)
    limit = qg_from_vorticity(omega, F)
    limit = limit * (spec.C0 / _h1_norm(limit, spec))
    noise = _noise(grid, 4, spec.seed, 2)
    k0 = spec.qg_k0
    envelope = np.exp(-((grid.kabs / (2 * k0)) ** 2))
    pert = qg_project(noise.like(noise.coeffs * envelope * grid.mask), F)
    pert = pert.like(np.where(grid.zero_mode, 0.0, pert.coeffs))
    pert = pert * (spec.C0 * eps**spec.alpha0 / _h1_norm(pert, spec))
    return limit + pert, limit


def make_ubar_data(grid2d: GridSpec, spec: DataSpec) -> SpectralField:
    """Seeded low-mode three-component 2D datum, divergence-free and mean-free."""
    noise = _noise(grid2d, 3, spec.seed, 3)
    envelope = np.exp(-((grid2d.kabs / (2 * spec.qg_k0)) ** 2))
    u = leray_project(noise.like(noise.coeffs * envelope * grid2d.mask))
    u = u.like(np.where(grid2d.zero_mode, 0.0, u.coeffs))
    target = spec.C0 if spec.ubar_norm is None else spec.ubar_norm
    return u * (target / l2_norm(u))


def make_probe_datum(
    grid: GridSpec,
    j: int,
    system: str = "PE",
    F: float = 1.0,
    branch: str = "+",
    center=None,
) -> SpectralField:
    """Spatially localised single-shell datum on one wave branch.

    A coherent bump ``phi(2^-j |xi|) exp(-i xi . x0)`` with a fixed
    polarisation is projected on divergence-free (and, for PE, zero
    potential vorticity) fields and then on the eigen-branch ``branch``.
    The result is complex and has unit L^2 norm.
    """
    system = system.upper()
    c = 4 if system == "PE" else 3
    if center is None:
        center = [length / 2 for length in grid.lengths]
    phase = sum(grid.k(a) * center[a] for a in range(3))
    bump = _shell_weight(grid, j) * np.exp(-1j * phase) * grid.mask
    pol = np.array([1.0, 0.7, 0.4, 0.9])[:c].reshape((c,) + (1,) * 3)
    u = leray_project(SpectralField(grid, pol * bump))
    if system == "PE":
        u = leray_project(osc_project(u, F))
    u = wave_basis(grid, F if system == "PE" else 1.0, system).project(u, branch)
    if system == "RF":
        u = u.like(np.where(grid.k(2) == 0.0, 0.0, u.coeffs))
    return u / l2_norm(u)


# -- rate fitting --------------------------------------------------------------


def fit_power_law(points) -> tuple[float, float, float]:
    """Least-squares fit of ``value = prefactor * eps^alpha`` in log-log space.

    Returns ``(alpha, prefactor, r2)``; ``r2`` is 1 when the data are an
    exact power law, including constant data.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (eps, value) pairs")
    if len(pts) < 3:
        raise ValueError(f"a fit needs at least 3 points, got {len(pts)}")
    if np.any(pts <= 0):
        raise ValueError("eps and values must be positive")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    A = np.stack([x, np.ones_like(x)], axis=1)
    (alpha, logc), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([alpha, logc])
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, float(y @ y)) else 1.0 - ss_res / ss_tot
    return float(alpha), float(math.exp(logc)), float(r2)


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_power_law` (single feature ``eps``)."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=3)
        if X.shape[1] != 1:
            raise ValueError("PowerLawRegressor expects a single feature (eps)")
        self.alpha_, self.prefactor_, self.r2_ = fit_power_law(zip(X[:, 0], y))
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "alpha_")
        X = check_array(X)
        return self.prefactor_ * X[:, 0] ** self.alpha_


# -- epsilon sweeps ------------------------------------------------------------


def predicted_exponents(spec: DataSpec, s_list: Sequence[float], system: str) -> dict:
    """Asymptotic exponents attached to every measured quantity of a sweep."""
    e0, d = spec.eta0, spec.delta
    out = {}
    for s in s_list:
        if system == "PE":
            out[f"E_s{s:g}"] = min(spec.alpha0, 0.5 * (0.5 + 2 * e0 * d - s))
        else:
            out[f"E_s{s:g}"] = spec.k * (0.5 + 2 * e0 * d - s)
    if system == "PE":
        out["mixed_L2Linf"] = min(spec.alpha0, (e0 - spec.eta_value / 2) * d)
    else:
        out["mixed_L2Linf"] = spec.k * d * (e0 - spec.eta_prime_value / 2)
        out["v_minus_ubar_L2Linf"] = 5.0 / 6.0 * spec.k * e0 * d
    return out


@dataclass
class RateReport:
    """Per-eps rows, power-law fits and predicted exponents of one sweep."""

    system: str
    eps: list
    rows: list
    fits: dict
    predicted: dict
    flagged: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "eps": list(self.eps),
            "rows": self.rows,
            "fits": self.fits,
            "predicted": self.predicted,
            "flagged": self.flagged,
            "manifest": self.manifest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        keys: list[str] = []
        for row in self.rows:
            keys += [k for k in row if k not in keys]
        with open(out / "rows.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return out


def _h_sq(u: SpectralField, s: float) -> float:
    return sobolev_norm(u, s) ** 2


def _sweep_observers(s_list, spec: DataSpec, error_roles, system: str) -> dict:
    d_mix = spec.eta_prime_value * spec.delta

    def total(st):
        out = st["DELTA"]
        for r in error_roles:
            out = out + st[r]
        return out

    obs = {}
    for s in s_list:
        obs[f"delta_H{s:g}_sq"] = lambda st, s=s: _h_sq(st["DELTA"], s)
        obs[f"delta_H{s + 1:g}_sq"] = lambda st, s=s: _h_sq(st["DELTA"], s + 1)
    obs["mixed_Linf"] = lambda st: lebesgue_norm(fractional_derivative(total(st), d_mix), math.inf)
    if system == "RF":
        obs["v_minus_ubar_Linf"] = lambda st: lebesgue_norm(total(st), math.inf)
    return obs


def _l2_in_time(times, values) -> float:
    return float(np.sqrt(np.trapezoid(np.asarray(values) ** 2, times)))


def _sweep_point(job: dict) -> dict:
    """Run one eps value of a sweep; returns the report row."""
    grid = GridSpec.from_dict(job["grid"])
    spec = DataSpec(**job["spec"])
    eps, T, s_list = job["eps"], job["T"], job["s_list"]
    params = PhysParams(nu=job["nu"], F=job["F"], eps=eps, nu_prime=job["nu_prime"])
    policy = DtPolicy(**job["dt_policy"])
    system = spec.system
    row = {"eps": eps}
    if system == "PE":
        qg_eps, qg_lim = make_qg_data(grid, spec, eps, params.F)
        osc = make_osc_data(grid, spec, eps, params.F)
        zero = SpectralField.zeros(grid, 4)
        fields = {"U_QG": qg_lim, "W_H": osc, "W_INH": zero, "DELTA": qg_eps - qg_lim}
        kinds = ["QG", "W_H", "W_INH", "DELTA_PE"]
        error_roles = ("W_H", "W_INH")
    else:
        grid2 = grid.horizontal()
        fields = {
            "UBAR": make_ubar_data(grid2, spec),
            "W_RF": make_osc_data(grid, spec, eps),
            "DELTA": SpectralField.zeros(grid, 3),
        }
        kinds = ["NS2D", "LRF", "DELTA_RF"]
        error_roles = ("W_RF",)
    row["shell_j"] = shell_index(spec, eps) if spec.profile == "single_shell" else None
    row["delta0_H0.5"] = sobolev_norm(fields["DELTA"], 0.5)
    state = FlowState(0.0, fields, params)
    observers = _sweep_observers(s_list, spec, error_roles, system)
    try:
        record = integrate(state, T, policy, observers, kinds, observe_every=job["observe_every"])
    except DivergenceError as exc:
        row.update(status="diverged", last_valid_time=exc.last_valid_time, message=str(exc))
        return row
    times = np.asarray(record.times)
    for s in s_list:
        row[f"E_s{s:g}"] = energy_norm_from_samples(
            times, record.series(f"delta_H{s:g}_sq"), record.series(f"delta_H{s + 1:g}_sq"), params.nu0
        )
    row["mixed_L2Linf"] = _l2_in_time(times, record.series("mixed_Linf"))
    if system == "RF":
        row["v_minus_ubar_L2Linf"] = _l2_in_time(times, record.series("v_minus_ubar_Linf"))
    row["steps"] = record.steps
    row["status"] = "ok"
    if job.get("check_consistency") and system == "PE":
        row["consistency"] = _pe_consistency(record, state, T, policy, job["observe_every"])
    return row


def _pe_consistency(record, initial: FlowState, T, policy, observe_every) -> float:
    """Relative H^{1/2} gap between ``delta`` and ``U - U_QG - W_h - W_inh`` at ``T``."""
    fields = initial.fields
    U0 = fields["U_QG"] + fields["DELTA"] + fields["W_H"] + fields["W_INH"]
    full = integrate(FlowState(0.0, {"U": U0}, initial.params), T, policy, {}, ["PE"], observe_every=observe_every)
    end = record.final_state
    post = full.final_state["U"] - end["U_QG"] - end["W_H"] - end["W_INH"]
    ref = sobolev_norm(end["DELTA"], 0.5)
    return sobolev_norm(post - end["DELTA"], 0.5) / ref


def epsilon_sweep(
    grid: GridSpec,
    spec: DataSpec,
    eps_list: Sequence[float],
    T: float,
    s_list: Sequence[float] = (0.5,),
    nu: float = 0.05,
    F: float = 2.0,
    nu_prime: float | None = None,
    dt_policy: DtPolicy | None = None,
    observe_every: float | None = None,
    workers: int = 1,
    check_consistency: bool = False,
    runner: Callable[[dict], dict] | None = None,
) -> RateReport:
    """Measure ``||delta_eps||`` over a ladder of Rossby numbers and fit power laws.

    PE: the quasi-geostrophic limit, both oscillating linear flows and the
    error system are integrated together for every ``eps``.  RF: the 2D
    flow, the linear rotating flow and the error system.  ``runner`` may
    replace the solver (it receives the job dict and returns a row).
    Diverged points are flagged and left out of the fits.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3:
        raise ValueError("a sweep needs at least 3 eps values")
    system = spec.system
    if dt_policy is None:
        dt_policy = DtPolicy(kind="cfl", c=0.5, max_dt=T / 10 if T > 0 else None, phase_cap=1.0)
    if observe_every is None:
        observe_every = T / 50
    if nu_prime is None:
        nu_prime = nu
    base = {
        "grid": grid.to_dict(),
        "spec": spec.to_dict(),
        "T": T,
        "s_list": [float(s) for s in s_list],
        "nu": nu,
        "nu_prime": nu_prime,
        "F": F,
        "dt_policy": dt_policy.to_dict(),
        "observe_every": observe_every,
        "check_consistency": check_consistency,
    }
    jobs = [dict(base, eps=e) for e in eps_list]
    run = runner or _sweep_point
    if workers > 1 and runner is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(job) for job in jobs]
    for row, e in zip(rows, eps_list):
        row.setdefault("eps", e)
        row.setdefault("status", "ok")

    predicted = predicted_exponents(spec, s_list, system)
    ok = [r for r in rows if r["status"] == "ok"]
    flagged = [r["eps"] for r in rows if r["status"] != "ok"]
    fits = {}
    for name, pred in predicted.items():
        pts = [(r["eps"], r[name]) for r in ok if r.get(name) is not None]
        if len(pts) < 3 or any(v <= 0 for _, v in pts):
            fits[name] = {"alpha": None, "prefactor": None, "r2": None, "predicted": pred,
                          "note": "fewer than 3 usable points"}
            continue
        alpha, pref, r2 = fit_power_law(pts)
        fits[name] = {"alpha": alpha, "prefactor": pref, "r2": r2, "predicted": pred,
                      "discrepancy": alpha - pred}
    manifest = {k: v for k, v in base.items()}
    manifest["eps_list"] = eps_list
    return RateReport(system, eps_list, rows, fits, predicted, flagged, manifest)


# -- dispersive probes ---------------------------------------------------------

_TARGET = re.compile(r"^L(?P<a>\d+(?:\.\d+)?|inf)_L(?P<r>\d+(?:\.\d+)?|inf)(?:,(?P<b>\d+(?:\.\d+)?|inf))?(?P<grad>:grad)?$")


def _num(text: str) -> float:
    return math.inf if text == "inf" else float(text)


def parse_target(text: str) -> dict:
    """Parse ``"L{a}_L{r}"``, ``"L{a}_L{m},{b}"`` (anisotropic) and a ``":grad"`` suffix."""
    m = _TARGET.match(text.strip())
    if not m:
        raise ValueError(f"cannot parse norm target {text!r}; expected e.g. 'L2_Linf', 'L4_L6', 'L2_L4,2', 'L2_L3:grad'")
    out = {"name": text.strip(), "a": _num(m["a"]), "r": _num(m["r"]), "b": None, "grad": bool(m["grad"])}
    if m["b"] is not None:
        out["b"] = _num(m["b"])
    for key in ("a", "r"):
        if out[key] < 1:
            raise ValueError(f"exponent {key} must be >= 1 in {text!r}")
    return out


def _theta_exponent(a: float, r: float, scale: float) -> float:
    """``(theta * scale)(1 - 2/r)`` with the largest theta allowed for time exponent ``a``."""
    gain = 1.0 - 2.0 / r if math.isfinite(r) else 1.0
    if gain <= 0:
        return 0.0
    limit = 1.0 / (scale * a * gain)
    theta = min(1.0, limit)
    return theta * scale * gain


def predicted_probe_exponent(target: dict, system: str) -> float | None:
    if system == "PE":
        if target["b"] is not None:
            return None
        return _theta_exponent(target["a"], target["r"], 0.25)
    if target["b"] is not None:
        return _theta_exponent(target["a"], target["r"], 0.25)
    return _theta_exponent(target["a"], target["r"], 0.5)


def group_velocity_bound(grid: GridSpec, support: np.ndarray, system: str, F: float) -> float:
    """Largest ``|grad_xi omega|`` over ``support`` (rescaled time units)."""
    ks = [np.broadcast_to(grid.k(a), grid.shape) for a in range(3)]
    r = np.where(grid.zero_mode, 1.0, grid.kabs)
    if system == "PE":
        a = np.sqrt(ks[0] ** 2 + ks[1] ** 2 + F**2 * ks[2] ** 2)
        a = np.where(grid.zero_mode, 1.0, a)
        grad_a = [ks[0] / a, ks[1] / a, F**2 * ks[2] / a]
        comps = [(grad_a[i] * r - a * ks[i] / r) / (F * r**2) for i in range(3)]
    else:
        comps = [-ks[2] * ks[i] / r**3 for i in range(3)]
        comps[2] = comps[2] + 1.0 / r
    speed = np.sqrt(sum(c**2 for c in comps))
    speed = np.where(support, speed, 0.0)
    return float(speed.max())


@dataclass
class ProbeReport:
    """Space-time norms of the linear flow per eps, fitted exponents and the F=1 control."""

    system: str
    F: float
    T: float
    wrap_time: float
    times: list
    rows: list
    fits: dict
    control: dict
    warnings: list

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        with open(out / "rows.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["target", "F", "eps", "value"])
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return out


def _localised(u: SpectralField) -> bool:
    amp = np.sqrt(np.sum(np.abs(u.coeffs) ** 2, axis=0))
    support = amp > 1e-10 * amp.max()
    k = u.grid.kabs[support & ~u.grid.zero_mode]
    return k.size > 0 and k.max() / k.min() <= (8.0 / 3.0) / 0.75 * (1 + 1e-9)


def _probe_norms(u0: SpectralField, params: PhysParams, system: str, targets, times) -> dict:
    """Space-time norms of ``S(t) u0`` over ``times`` for every target."""
    import scipy.fft as sfft

    grid = u0.grid
    flow = LinearFlow(grid, params, system)
    need_grad = any(t["grad"] for t in targets)
    per_time = {t["name"]: [] for t in targets}
    for t in times:
        coeffs = flow.apply(u0.coeffs, float(t))
        fields = {False: coeffs}
        if need_grad:
            fields[True] = gradient(SpectralField(grid, coeffs)).reshape((-1,) + grid.shape)
        for grad, c in fields.items():
            phys = sfft.ifftn(c, axes=grid.axes) * grid.size
            mod = np.sqrt(np.sum(np.abs(phys) ** 2, axis=0))
            for tg in targets:
                if tg["grad"] != grad:
                    continue
                if tg["b"] is None:
                    val = _lebesgue_from_modulus(mod, tg["r"], grid.cell_volume)
                else:
                    val = _aniso_from_modulus(mod, grid, tg["r"], tg["b"])
                per_time[tg["name"]].append(val)
    out = {}
    for tg in targets:
        vals = np.asarray(per_time[tg["name"]])
        if math.isinf(tg["a"]):
            out[tg["name"]] = float(vals.max())
        else:
            out[tg["name"]] = float(np.trapezoid(vals ** tg["a"], times) ** (1.0 / tg["a"]))
    return out


def strichartz_probe(
    grid: GridSpec,
    datum: SpectralField,
    eps_list: Sequence[float],
    targets: Sequence[str] = ("L2_Linf", "L4_L6", "Linf_L2"),
    system: str = "PE",
    F: float = 2.0,
    nu: float = 0.0,
    T: float | None = None,
    n_times: int = 129,
    control: bool = True,
) -> ProbeReport:
    """Space-time norms of the linear oscillating flow across ``eps``.

    ``T`` is capped by the wrap-around time ``eps_min * L / (2 vg_max)`` of
    the fastest wave packet in the datum.  For PE the same datum, projected
    on the ``F = 1`` branch, is run as a non-dispersive control whose norms
    must not depend on ``eps``.
    """
    system = system.upper()
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    parsed = [parse_target(t) for t in targets]
    warnings = []
    if not _localised(datum):
        warnings.append("datum is not localised in a single dyadic shell")
    amp = np.sqrt(np.sum(np.abs(datum.coeffs) ** 2, axis=0))
    support = amp > 1e-10 * amp.max()
    vg = group_velocity_bound(grid, support, system, F)
    wrap = min(eps_list) * min(grid.lengths) / (2 * vg) if vg > 0 else math.inf
    if T is None:
        T = wrap
    elif T > wrap:
        warnings.append(f"T={T} exceeds the wrap-around time {wrap:.4g}; clipped")
        T = wrap
    times = np.linspace(0.0, T, n_times)

    rows, values = [], {t["name"]: [] for t in parsed}
    for eps in eps_list:
        res = _probe_norms(datum, PhysParams(nu=nu, F=F, eps=eps), system, parsed, times)
        for name, v in res.items():
            rows.append({"target": name, "F": F, "eps": eps, "value": v})
            values[name].append(v)
    fits = {}
    for tg in parsed:
        name = tg["name"]
        pred = predicted_probe_exponent(tg, system)
        if len(eps_list) >= 3:
            alpha, pref, r2 = fit_power_law(zip(eps_list, values[name]))
        else:
            alpha = math.log(values[name][-1] / values[name][0]) / math.log(eps_list[-1] / eps_list[0])
            pref, r2 = None, None
        fits[name] = {"alpha": alpha, "prefactor": pref, "r2": r2, "predicted": pred}

    ctrl = {}
    if control and system == "PE":
        base = wave_basis(grid, 1.0, "PE")
        cdatum = base.project(leray_project(osc_project(datum, 1.0)), "+")
        cdatum = cdatum / l2_norm(cdatum)
        cvals = {t["name"]: [] for t in parsed}
        for eps in eps_list:
            res = _probe_norms(cdatum, PhysParams(nu=nu, F=1.0, eps=eps), system, parsed, times)
            for name, v in res.items():
                rows.append({"target": name, "F": 1.0, "eps": eps, "value": v})
                cvals[name].append(v)
        for name, vals in cvals.items():
            vals = np.asarray(vals)
            spread = float((vals.max() - vals.min()) / vals.max())
            if len(eps_list) >= 2:
                alpha = float(np.polyfit(np.log(eps_list), np.log(vals), 1)[0])
            else:
                alpha = 0.0
            ctrl[name] = {"values": vals.tolist(), "max_rel_spread": spread, "alpha": alpha}
    return ProbeReport(system, F, float(T), float(wrap), times.tolist(), rows, fits, ctrl, warnings)
