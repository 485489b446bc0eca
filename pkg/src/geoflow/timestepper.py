"""Exact linear flows and integrating-factor RK4 time stepping.

The stiff linear part of every system (diffusion plus the ``1/eps``
rotation/stratification term) is diagonalised per wavevector by
:func:`geoflow.operators.wave_basis` and applied exactly; only the nonlinear
and forcing terms are integrated explicitly (Lawson form of RK4).
"""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Mapping

import numpy as np

from .exceptions import (
    DivergenceError,
    ShapeMismatchError,
    UnsupportedConfigurationError,
)
from .operators import (
    PhysParams,
    gamma_symbol,
    leray_project,
    qg_project,
    wave_basis,
)
from .spectral import GridSpec, SpectralField, save_snapshot, to_physical_real
from .systems import (
    REQUIRES,
    ROLE,
    SystemKind,
    convective_term,
    delta_pe_nonlinear,
    delta_rf_nonlinear,
    g_force,
    lift_2d,
    ns2d_nonlinear,
    pe_nonlinear,
    prf_nonlinear,
    qg_nonlinear,
    rf_nonlinear,
)

__all__ = [
    "FlowState",
    "RunRecord",
    "DtPolicy",
    "LinearFlow",
    "semigroup_apply",
    "step_ifrk4",
    "integrate",
    "blowup_functional",
    "energy_audit",
]

PE_FAMILY = {SystemKind.PE, SystemKind.QG, SystemKind.W_H, SystemKind.W_INH, SystemKind.DELTA_PE}
RF_FAMILY = {SystemKind.RF, SystemKind.PRF, SystemKind.LRF, SystemKind.DELTA_RF}


@dataclass
class FlowState:
    """Time ``t`` and the fields of every role being advanced together."""

    t: float
    fields: dict[str, SpectralField]
    params: PhysParams

    def __post_init__(self):
        grids3 = {f.grid for f in self.fields.values() if f.grid.ndim == 3}
        if len(grids3) > 1:
            raise ShapeMismatchError("all 3D fields of a state must share one grid")
        if "UBAR" in self.fields and grids3:
            g3 = next(iter(grids3))
            if self.fields["UBAR"].grid != g3.horizontal():
                raise ShapeMismatchError("UBAR must live on the horizontal grid of the 3D fields")

    @property
    def grid(self) -> GridSpec:
        for f in self.fields.values():
            if f.grid.ndim == 3:
                return f.grid
        return next(iter(self.fields.values())).grid

    def __getitem__(self, role: str) -> SpectralField:
        return self.fields[role]

    def replace(self, t: float, fields: dict[str, SpectralField]) -> "FlowState":
        stamped = {k: SpectralField(v.grid, v.coeffs, t) for k, v in fields.items()}
        return FlowState(t, stamped, self.params)

    def check_roles(self, kinds: Iterable[SystemKind]):
        for kind in kinds:
            for role in (ROLE[kind],) + REQUIRES.get(kind, ()):
                if role not in self.fields:
                    raise ValueError(f"{kind.value} needs the {role} field in the state")


@dataclass(frozen=True)
class DtPolicy:
    """Step-size rule.

    ``kind="fixed"`` uses ``dt``; ``kind="cfl"`` uses ``c * dx / max|v|``
    capped by ``max_dt``.  ``phase_cap`` additionally bounds the step by
    ``phase_cap * eps / max_frequency`` so fast oscillations stay resolved
    in the explicit nonlinear part.  Steps are shortened to land exactly on
    observation times.
    """

    kind: str = "cfl"
    dt: float | None = None
    c: float = 0.5
    max_dt: float | None = None
    phase_cap: float | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "cfl"):
            raise ValueError(f"dt policy kind must be 'fixed' or 'cfl', got {self.kind!r}")
        if self.kind == "fixed" and not (self.dt and self.dt > 0):
            raise ValueError("a fixed dt policy needs dt > 0")
        if self.c <= 0:
            raise ValueError("CFL constant must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


class RunRecord:
    """Manifest plus time series of named diagnostics and optional snapshots."""

    def __init__(self, manifest: Mapping):
        self._manifest = json.loads(json.dumps(dict(manifest), default=_json_default))
        self.times: list[float] = []
        self.samples: dict[str, list[float]] = {}
        self.snapshots: list[dict] = []
        self.status = "running"
        self.message = ""
        self.steps = 0

    @property
    def manifest(self) -> Mapping:
        return MappingProxyType(self._manifest)

    def add(self, t: float, values: Mapping[str, float]):
        if self.times and t <= self.times[-1]:
            raise ValueError(f"sample time {t} is not after {self.times[-1]}")
        if not self.times:
            for name in values:
                self.samples[name] = []
        if set(values) != set(self.samples):
            raise ValueError("every sample must carry the same diagnostics")
        self.times.append(float(t))
        for name, value in values.items():
            self.samples[name].append(float(value))

    def series(self, name: str) -> np.ndarray:
        return np.asarray(self.samples[name])

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = dict(self._manifest)
        manifest["status"] = self.status
        manifest["steps"] = self.steps
        if self.message:
            manifest["message"] = self.message
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        names = list(self.samples)
        with open(out / "diagnostics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + names)
            for i, t in enumerate(self.times):
                writer.writerow([repr(t)] + [repr(self.samples[n][i]) for n in names])
        return out


def _json_default(obj):
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, SystemKind):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")


class LinearFlow:
    """Exact propagator ``exp(h L)`` of one linear operator on one grid.

    ``system`` is ``"PE"`` (rotation/stratification with wave basis),
    ``"RF"`` (rotation), ``"HEAT"`` or ``"HEAT_GAMMA"`` (diffusion only).
    The diffusive symbol is ``Gamma`` for PE and HEAT_GAMMA (equal to
    ``-nu|xi|^2`` when ``nu = nu'``) and ``-nu|xi|^2`` for the others.
    """

    def __init__(self, grid: GridSpec, params: PhysParams, system: str, heat_symbol=None):
        self.grid = grid
        self.params = params
        self.system = system
        if heat_symbol is None:
            if system in ("PE", "HEAT_GAMMA"):
                heat_symbol = gamma_symbol(grid, params)
            else:
                heat_symbol = -params.nu * grid.k2
        self.heat_symbol = heat_symbol
        self.basis = None
        if system in ("PE", "RF"):
            self.basis = wave_basis(grid, params.F if system == "PE" else 1.0, system)
        self._cache: OrderedDict = OrderedDict()

    @property
    def max_frequency(self) -> float:
        return 0.0 if self.basis is None else self.basis.max_frequency

    def _factors(self, h: float):
        key = float(h)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        heat = np.exp(h * self.heat_symbol)
        phases = None
        if self.basis is not None:
            phases = np.exp(1j * (h / self.params.eps) * self.basis.frequencies)
        self._cache[key] = (heat, phases)
        if len(self._cache) > 4:
            self._cache.popitem(last=False)
        return heat, phases

    def apply(self, coeffs: np.ndarray, h: float) -> np.ndarray:
        if h == 0:
            return coeffs.copy()
        heat, phases = self._factors(h)
        if phases is not None:
            coeffs = self.basis.apply(coeffs, phases)
        return heat * coeffs


def semigroup_apply(U: SpectralField, t: float, params: PhysParams, system: str = "PE") -> SpectralField:
    """Solution at time ``t`` of the linear system started from ``U``.

    PE: ``dU/dt = L U - (1/eps) P A U``; RF: ``dv/dt = nu Delta v - (1/eps) P(e3 ^ v)``.

    Raises:
        UnsupportedConfigurationError: PE with ``nu != nu'``.
    """
    system = system.upper()
    if system == "PE" and not params.equal_viscosities:
        raise UnsupportedConfigurationError(
            "the exact PE semigroup is only provided for nu = nu'"
        )
    if system not in ("PE", "RF"):
        raise ValueError(f"system must be PE or RF, got {system!r}")
    flow = _flow(U.grid, params, system)
    t0 = U.t if U.t is not None else 0.0
    return SpectralField(U.grid, flow.apply(U.coeffs, t), t0 + t)


_FLOWS: OrderedDict = OrderedDict()


def _flow(grid: GridSpec, params: PhysParams, system: str) -> LinearFlow:
    key = (grid, params, system)
    flow = _FLOWS.get(key)
    if flow is None:
        flow = LinearFlow(grid, params, system)
        _FLOWS[key] = flow
        if len(_FLOWS) > 8:
            _FLOWS.popitem(last=False)
    return flow


def _flow_for(kind: SystemKind, grid: GridSpec, params: PhysParams) -> LinearFlow:
    if kind is SystemKind.QG:
        return _flow(grid, params, "HEAT_GAMMA")
    if kind in PE_FAMILY:
        if kind in (SystemKind.PE, SystemKind.DELTA_PE) and not params.equal_viscosities:
            raise UnsupportedConfigurationError(
                f"{kind.value} integration is only provided for nu = nu'"
            )
        return _flow(grid, params, "PE")
    if kind in RF_FAMILY:
        return _flow(grid, params, "RF")
    return _flow(grid, params, "HEAT")


def _nonlinear(kinds, fields: Mapping[str, np.ndarray], grids, params: PhysParams) -> dict:
    """Explicit parts of every advanced system at one RK stage."""
    F = params.F

    def fld(role):
        return SpectralField(grids[role], fields[role])

    out = {}
    adv_qg = None
    if SystemKind.QG in kinds or SystemKind.W_INH in kinds or SystemKind.DELTA_PE in kinds:
        uq = fld("U_QG")
        adv_qg = convective_term(uq, uq, real=True)
    ubar3 = None
    if any(k in kinds for k in (SystemKind.PRF, SystemKind.DELTA_RF)):
        g3 = next(grids[r] for r in fields if grids[r].ndim == 3)
        ubar3 = lift_2d(fld("UBAR"), g3)
    for kind in kinds:
        role = ROLE[kind]
        if kind is SystemKind.PE:
            val = pe_nonlinear(fld(role))
        elif kind is SystemKind.QG:
            val = qg_nonlinear(fld(role), F, adv_qg)
        elif kind in (SystemKind.W_H, SystemKind.LRF):
            val = None
        elif kind is SystemKind.W_INH:
            val = -g_force(fld("U_QG"), params, adv_qg)
        elif kind is SystemKind.DELTA_PE:
            val = delta_pe_nonlinear(fld(role), fld("U_QG"), fld("W_H"), fld("W_INH"), adv_qg)
        elif kind is SystemKind.NS2D:
            val = ns2d_nonlinear(fld(role))
        elif kind is SystemKind.RF:
            val = rf_nonlinear(fld(role))
        elif kind is SystemKind.PRF:
            val = prf_nonlinear(fld(role), ubar3)
        elif kind is SystemKind.DELTA_RF:
            val = delta_rf_nonlinear(fld(role), fld("W_RF"), ubar3)
        else:  # pragma: no cover - enum is closed
            raise ValueError(kind)
        out[role] = None if val is None else val.coeffs
    return out


def _reproject(kind: SystemKind, u: SpectralField, F: float) -> SpectralField:
    if kind is SystemKind.QG:
        return qg_project(u, F)
    return leray_project(u)


def step_ifrk4(state: FlowState, dt: float, kinds, nonlinear: bool = True) -> FlowState:
    """Advance every system in ``kinds`` by one integrating-factor RK4 step.

    With ``nonlinear=False`` the step is exactly the linear flow.

    Raises:
        DivergenceError: when any field becomes non-finite.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    kinds = [SystemKind(k) for k in kinds]
    state.check_roles(kinds)
    params = state.params
    roles = [ROLE[k] for k in kinds]
    grids = {r: f.grid for r, f in state.fields.items()}
    flows = {ROLE[k]: _flow_for(k, grids[ROLE[k]], params) for k in kinds}
    u0 = {r: f.coeffs for r, f in state.fields.items()}
    h = dt
    half = 0.5 * h

    def E(role, x, tau):
        return flows[role].apply(x, tau)

    if nonlinear:
        # Lawson RK4 with the propagator applications regrouped so that only
        # E(h/2) is ever used: E(h) x = E(h/2) E(h/2) x.
        k1 = _nonlinear(kinds, u0, grids, params)
        eu_half = {r: E(r, u0[r], half) for r in roles}
        stage_a = dict(u0)
        for r in roles:
            stage_a[r] = eu_half[r] if k1[r] is None else E(r, u0[r] + half * k1[r], half)
        k2 = _nonlinear(kinds, stage_a, grids, params)
        stage_b = dict(u0)
        for r in roles:
            stage_b[r] = eu_half[r] if k2[r] is None else eu_half[r] + half * k2[r]
        k3 = _nonlinear(kinds, stage_b, grids, params)
        stage_c = dict(u0)
        for r in roles:
            x = eu_half[r] if k3[r] is None else eu_half[r] + h * k3[r]
            stage_c[r] = E(r, x, half)
        k4 = _nonlinear(kinds, stage_c, grids, params)
        new = dict(u0)
        for r in roles:
            if k1[r] is None:
                new[r] = stage_c[r]
                continue
            # E(h/2)(u0 + h/6 k1) = (1/3) stage_a + (2/3) E(h/2) u0
            x = stage_a[r] / 3.0 + (2.0 / 3.0) * eu_half[r] + (h / 3.0) * (k2[r] + k3[r])
            new[r] = E(r, x, half) + (h / 6.0) * k4[r]
    else:
        new = {r: E(r, u0[r], h) for r in roles}
    fields = dict(state.fields)
    for kind in kinds:
        r = ROLE[kind]
        g = grids[r]
        u = SpectralField(g, new[r])
        if nonlinear:
            u = _reproject(kind, SpectralField(g, new[r] * g.mask), params.F)
        if not np.all(np.isfinite(u.coeffs)):
            raise DivergenceError(
                f"{kind.value} produced non-finite values after t={state.t}",
                last_valid_time=state.t,
            )
        fields[r] = u
    return state.replace(state.t + dt, fields)


def _max_velocity(state: FlowState) -> float:
    vmax = 0.0
    for r, f in state.fields.items():
        g = f.grid
        vel = to_physical_real(f.coeffs[: g.ndim], g)
        vmax = max(vmax, float(np.sqrt(np.sum(vel**2, axis=0)).max()))
    return vmax


def _choose_dt(state: FlowState, policy: DtPolicy, flows_max_freq: float) -> float:
    if policy.kind == "fixed":
        dt = policy.dt
    else:
        dx = min(min(f.grid.spacing) for f in state.fields.values())
        vmax = _max_velocity(state)
        dt = policy.c * dx / vmax if vmax > 0 else math.inf
        if policy.max_dt is not None:
            dt = min(dt, policy.max_dt)
    if policy.phase_cap is not None and flows_max_freq > 0:
        dt = min(dt, policy.phase_cap * state.params.eps / flows_max_freq)
    return dt


Observer = Callable[[FlowState], float]


def integrate(
    initial: FlowState,
    T: float,
    dt_policy: DtPolicy,
    observers: Mapping[str, Observer],
    kinds,
    observe_every: float | None = None,
    snapshot_every: int | None = None,
    out_dir=None,
    manifest: Mapping | None = None,
    nonlinear: bool = True,
) -> RunRecord:
    """Advance ``kinds`` together from ``initial`` to time ``initial.t + T``.

    Observers are evaluated at the start and every ``observe_every`` time
    units (default: ``T / 50``).  Every ``snapshot_every``-th observation the
    fields are written to ``out_dir`` if given, or kept in memory.

    Raises:
        DivergenceError: with the partial record attached as ``.record``.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    kinds = [SystemKind(k) for k in kinds]
    initial.check_roles(kinds)
    grid = initial.grid
    meta = {
        "grid": grid.to_dict(),
        "params": initial.params.to_dict(),
        "kinds": [k.value for k in kinds],
        "scheme": "IF-RK4 (Lawson)",
        "dt_policy": dt_policy.to_dict(),
        "T": T,
        "observe_every": observe_every,
        "nonlinear": nonlinear,
    }
    if manifest:
        meta.update(manifest)
    record = RunRecord(meta)
    if observe_every is None:
        observe_every = T / 50 if T > 0 else 1.0
    if not observe_every > 0:
        raise ValueError("observe_every must be > 0")
    max_freq = 0.0
    for k in kinds:
        g = initial.fields[ROLE[k]].grid
        max_freq = max(max_freq, _flow_for(k, g, initial.params).max_frequency)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    state = initial
    t0 = initial.t
    n_obs = 0 if T == 0 else max(1, int(round(T / observe_every)))
    if n_obs and abs(n_obs * observe_every - T) > 1e-9 * max(T, 1):
        n_obs = math.ceil(T / observe_every)

    def observe(st: FlowState, index: int):
        record.add(st.t, {name: fn(st) for name, fn in observers.items()})
        if snapshot_every and index % snapshot_every == 0:
            entry = {"t": st.t, "index": index}
            if out_dir is not None:
                paths = {}
                for role, f in st.fields.items():
                    p = Path(out_dir) / f"snap_{index:05d}_{role}.bin"
                    save_snapshot(p, f, st.t, run_id=str(meta.get("run_id", "")))
                    paths[role] = p.name
                entry["files"] = paths
            else:
                entry["fields"] = {r: f.copy() for r, f in st.fields.items()}
            record.snapshots.append(entry)

    observe(state, 0)
    try:
        for i in range(1, n_obs + 1):
            t_target = t0 + min(i * observe_every, T)
            span = t_target - state.t
            dt_max = _choose_dt(state, dt_policy, max_freq)
            n_sub = max(1, math.ceil(span / dt_max - 1e-12))
            dt = span / n_sub
            for _ in range(n_sub):
                state = step_ifrk4(state, dt, kinds, nonlinear)
                record.steps += 1
            state = state.replace(t_target, state.fields)
            observe(state, i)
    except DivergenceError as exc:
        record.status = "diverged"
        record.message = str(exc)
        exc.record = record
        if out_dir is not None:
            record.write(out_dir)
        raise
    record.status = "ok"
    record.final_state = state
    if out_dir is not None:
        record.write(out_dir)
    return record


def blowup_functional(times, fields: Iterable[SpectralField]) -> np.ndarray:
    """Running trapezoid integral of ``||grad U||^2_{H^{1/2}} = ||U||^2_{H^{3/2}}``.

    Returns the cumulative values at every sample time (first entry 0).
    """
    times = np.asarray(times, dtype=float)
    vals = []
    for f in fields:
        g = f.grid
        vals.append(g.volume * float(np.sum(g.k2**1.5 * np.abs(f.coeffs) ** 2)))
    vals = np.asarray(vals)
    if len(vals) != len(times):
        raise ShapeMismatchError("one field per sample time is required")
    out = np.zeros_like(times)
    if len(times) > 1:
        out[1:] = np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(times))
    return out


def energy_audit(times, energy, dissipation, nu: float) -> np.ndarray:
    """Relative drift of ``E(t) + 2 nu int_0^t D - E(0)`` by composite Simpson.

    ``energy`` holds ``||u||^2`` and ``dissipation`` holds ``||grad u||^2``
    at uniformly spaced ``times``; drift is evaluated at even sample indices.
    """
    times = np.asarray(times, float)
    E = np.asarray(energy, float)
    D = np.asarray(dissipation, float)
    h = np.diff(times)
    if len(times) < 3 or not np.allclose(h, h[0], rtol=1e-9):
        raise ValueError("energy_audit needs at least 3 uniformly spaced samples")
    idx = np.arange(2, len(times), 2)
    integral = np.array(
        [h[0] / 3 * (D[0] + 4 * D[1 : i : 2].sum() + 2 * D[2 : i - 1 : 2].sum() + D[i]) for i in idx]
    )
    return np.abs(E[idx] + 2 * nu * integral - E[0]) / E[0]
