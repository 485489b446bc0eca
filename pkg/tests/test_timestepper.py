import json
import math

import numpy as np
import pytest

from conftest import random_field, rel
from geoflow.exceptions import DivergenceError, UnsupportedConfigurationError
from geoflow.littlewood_paley import sobolev_norm
from geoflow.operators import PhysParams, leray_project, osc_project, qg_project
from geoflow.spectral import SpectralField, l2_norm, make_grid
from geoflow.systems import g_force, lift_2d
from geoflow.timestepper import (
    DtPolicy,
    FlowState,
    LinearFlow,
    RunRecord,
    blowup_functional,
    energy_audit,
    integrate,
    semigroup_apply,
    step_ifrk4,
)


def divfree(grid, comps, seed, amp=1.0):
    return leray_project(random_field(grid, comps, seed=seed)) * amp


def heat_only(U, t, nu):
    return U.like(U.coeffs * np.exp(-nu * U.grid.k2 * t))


class TestSemigroup:
    def test_identity_at_zero(self, grid16):
        U = divfree(grid16, 4, 1)
        p = PhysParams(nu=0.2, F=2.0, eps=0.01)
        assert rel(semigroup_apply(U, 0.0, p), U) < 1e-12

    @pytest.mark.parametrize("system,comps", [("PE", 4), ("RF", 3)])
    def test_group_property(self, grid16, system, comps):
        U = divfree(grid16, comps, 2)
        p = PhysParams(nu=0.1, F=2.0, eps=0.01)
        two = semigroup_apply(semigroup_apply(U, 0.03, p, system), 0.05, p, system)
        assert rel(two, semigroup_apply(U, 0.08, p, system)) < 1e-11

    @pytest.mark.parametrize("system,comps", [("PE", 4), ("RF", 3)])
    def test_unitary_rotation(self, grid16, system, comps):
        U = divfree(grid16, comps, 3)
        p = PhysParams(nu=0.1, F=2.0, eps=1e-3)
        out = semigroup_apply(U, 0.37, p, system)
        assert l2_norm(out) == pytest.approx(l2_norm(heat_only(U, 0.37, 0.1)), rel=1e-12)

    def test_unequal_viscosity(self, grid8):
        with pytest.raises(UnsupportedConfigurationError):
            semigroup_apply(divfree(grid8, 4, 4), 0.1, PhysParams(nu=0.1, nu_prime=0.2))


class TestStep:
    def test_linear_step_is_exact(self, grid16):
        p = PhysParams(nu=0.5, F=2.0, eps=1e-3)
        U = divfree(grid16, 4, 5)
        st = FlowState(0.0, {"U": U}, p)
        out = step_ifrk4(st, 0.05, ["PE"], nonlinear=False)
        assert rel(out["U"], semigroup_apply(U, 0.05, p)) < 1e-12
        assert out.t == pytest.approx(0.05)

    def test_stiff_rotation(self, grid16):
        p = PhysParams(nu=0.1, F=2.0, eps=1e-6)
        U = divfree(grid16, 4, 6)
        rec = integrate(FlowState(0.0, {"U": U}, p), 1.0, DtPolicy("fixed", dt=0.1), {}, ["PE"], observe_every=0.5, nonlinear=False)
        out = rec.final_state["U"]
        assert np.all(np.isfinite(out.coeffs))
        assert l2_norm(out) == pytest.approx(l2_norm(heat_only(U, 1.0, 0.1)), rel=1e-12)

    def test_qg_fourth_order(self):
        g = make_grid((16, 16, 16))
        F = 2.0
        p = PhysParams(nu=0.05, F=F, eps=0.1)
        U = qg_project(random_field(g, 4, seed=7), F) * (2.0 / l2_norm(qg_project(random_field(g, 4, seed=7), F)))

        def run(dt):
            st = FlowState(0.0, {"U_QG": U}, p)
            for _ in range(int(round(0.4 / dt))):
                st = step_ifrk4(st, dt, ["QG"])
            return st["U_QG"]

        a, b, c = run(0.1), run(0.05), run(0.025)
        ratio = l2_norm(a - b) / l2_norm(b - c)
        assert 10 <= ratio <= 24

    def test_qg_stays_qg(self, grid16):
        F = 2.0
        p = PhysParams(nu=0.05, F=F, eps=0.1)
        U = qg_project(random_field(grid16, 4, seed=8), F)
        out = step_ifrk4(FlowState(0.0, {"U_QG": U}, p), 0.05, ["QG"])["U_QG"]
        assert np.max(np.abs(osc_project(out, F).coeffs)) < 1e-12 * np.max(np.abs(out.coeffs))

    def test_missing_role(self, grid8):
        with pytest.raises(ValueError):
            step_ifrk4(FlowState(0.0, {"U": divfree(grid8, 4, 1)}, PhysParams(nu=0.1)), 0.1, ["DELTA_PE"])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, grid16):
        p = PhysParams(nu=0.0, F=2.0, eps=1.0)
        U = divfree(grid16, 4, 9, amp=1e150)
        with pytest.raises(DivergenceError) as info:
            integrate(FlowState(0.0, {"U": U}, p), 1.0, DtPolicy("fixed", dt=0.5), {"E": lambda s: l2_norm(s["U"])}, ["PE"], observe_every=0.5)
        assert info.value.record.status == "diverged"
        assert info.value.last_valid_time == 0.0
        assert len(info.value.record.times) == 1


class TestLockstep:
    def test_two_paths(self):
        g = make_grid((16, 16, 16))
        F, eps = 2.0, 0.05
        p = PhysParams(nu=0.1, F=F, eps=eps)
        Uq = qg_project(random_field(g, 4, seed=10), F)
        W0 = osc_project(leray_project(random_field(g, 4, seed=11)), F)
        zero = SpectralField.zeros(g, 4)
        coupled = FlowState(0.0, {"U_QG": Uq, "W_H": W0, "W_INH": zero, "DELTA": zero}, p)
        policy = DtPolicy("fixed", dt=0.01)
        kinds = ["QG", "W_H", "W_INH", "DELTA_PE"]
        rec = integrate(coupled, 0.1, policy, {}, kinds, observe_every=0.05)
        full = integrate(FlowState(0.0, {"U": Uq + W0}, p), 0.1, policy, {}, ["PE"], observe_every=0.05)
        fs = rec.final_state
        recon = full.final_state["U"] - fs["U_QG"] - fs["W_H"] - fs["W_INH"]
        assert sobolev_norm(recon - fs["DELTA"], 0.5) <= 1e-6 * sobolev_norm(full.final_state["U"], 0.5)


class TestIntegrate:
    def test_zero_horizon(self, grid8):
        st = FlowState(0.0, {"U": divfree(grid8, 4, 1)}, PhysParams(nu=0.1))
        rec = integrate(st, 0.0, DtPolicy(), {"E": lambda s: l2_norm(s["U"])}, ["PE"])
        assert rec.times == [0.0] and rec.steps == 0

    def test_lands_on_observations(self, grid8):
        st = FlowState(0.0, {"U": divfree(grid8, 4, 1)}, PhysParams(nu=0.1))
        rec = integrate(st, 0.3, DtPolicy("fixed", dt=0.07), {"E": lambda s: l2_norm(s["U"])}, ["PE"], observe_every=0.1)
        assert np.allclose(rec.times, [0, 0.1, 0.2, 0.3])

    def test_writes_outputs(self, tmp_path, grid8):
        st = FlowState(0.0, {"U": divfree(grid8, 4, 1)}, PhysParams(nu=0.1))
        integrate(st, 0.2, DtPolicy(), {"E": lambda s: l2_norm(s["U"])}, ["PE"], observe_every=0.1, snapshot_every=1, out_dir=tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["status"] == "ok" and manifest["kinds"] == ["PE"]
        assert (tmp_path / "diagnostics.csv").read_text().startswith("t,E")
        assert len(list(tmp_path.glob("snap_*_U.bin"))) == 3

    def test_deterministic(self, grid8):
        st = FlowState(0.0, {"U": divfree(grid8, 4, 1)}, PhysParams(nu=0.1, F=2.0, eps=0.1))
        a = integrate(st, 0.2, DtPolicy(phase_cap=1.0), {}, ["PE"]).final_state["U"]
        b = integrate(st, 0.2, DtPolicy(phase_cap=1.0), {}, ["PE"]).final_state["U"]
        assert np.array_equal(a.coeffs, b.coeffs)

    def test_ns2d_energy_audit(self):
        g = make_grid((32, 32))
        nu = 0.05
        u = leray_project(random_field(g, 3, seed=3))
        obs = {
            "E": lambda s: l2_norm(s["UBAR"]) ** 2,
            "D": lambda s: sobolev_norm(s["UBAR"], 1.0) ** 2,
        }
        rec = integrate(FlowState(0.0, {"UBAR": u}, PhysParams(nu=nu)), 0.5, DtPolicy(c=0.5, max_dt=0.005), obs, ["NS2D"], observe_every=0.005)
        drift = energy_audit(rec.times, rec.series("E"), rec.series("D"), nu)
        assert drift.max() <= 1e-6


class TestRunRecord:
    def test_manifest_read_only(self):
        rec = RunRecord({"a": 1})
        with pytest.raises(TypeError):
            rec.manifest["a"] = 2

    def test_monotone_times(self):
        rec = RunRecord({})
        rec.add(0.0, {"x": 1.0})
        with pytest.raises(ValueError):
            rec.add(0.0, {"x": 2.0})

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            DtPolicy("fixed")
        with pytest.raises(ValueError):
            DtPolicy("adaptive")


class TestLinearFlow:
    def test_heat(self, grid8):
        flow = LinearFlow(grid8, PhysParams(nu=0.3), "HEAT")
        U = divfree(grid8, 3, 1)
        assert rel(U.like(flow.apply(U.coeffs, 0.2)), heat_only(U, 0.2, 0.3)) < 1e-14


class TestBlowup:
    def test_zero(self, grid8):
        z = SpectralField.zeros(grid8, 4)
        assert np.all(blowup_functional([0, 1], [z, z]) == 0)

    def test_heat_decay(self, grid16):
        c = np.zeros((1,) + grid16.shape, complex)
        c[0, 2, 0, 0] = c[0, -2, 0, 0] = 0.5
        U = SpectralField(grid16, c)
        nu, k2 = 0.2, 4.0
        times = np.linspace(0, 1, 4001)
        vals = blowup_functional(times, [heat_only(U, t, nu) for t in times])
        A2 = l2_norm(U) ** 2
        exact = A2 * k2**1.5 * (1 - np.exp(-2 * nu * k2)) / (2 * nu * k2)
        assert vals[-1] == pytest.approx(exact, rel=1e-6)
        assert np.all(np.diff(vals) >= 0)
