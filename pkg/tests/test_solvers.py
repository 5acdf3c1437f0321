"""Linear and quasi-linear marching: accuracy, transposition, failure modes."""

import dataclasses

import numpy as np
import pytest

from hiercontrol.errors import BlowUpError, CoefficientError
from hiercontrol.grids import (
    Field,
    build_grid,
    build_time_grid,
    space_inner,
    stepped_pairing,
)
from hiercontrol.solvers import (
    LinearCoefficients,
    Nonlinearity,
    combine_control_source,
    constant_coefficients,
    march_adjoint,
    march_forward,
    nonlinearity_preset,
    solve_backward_linear,
    solve_forward_linear,
    solve_forward_quasilinear,
    state_factors,
)

from conftest import standard_cutoffs


def _sine_field(grid, amp=1.0, k=1):
    x = grid.nodes[:, 0]
    vals = amp * np.sin(np.pi * k * x)
    if grid.dim == 2:
        vals = vals * np.sin(np.pi * k * grid.nodes[:, 1])
    vals[grid.boundary] = 0.0
    return Field(grid, vals)


def _interior_noise(rng, grid, tgrid):
    arr = rng.standard_normal((tgrid.n_slices, grid.n_nodes))
    arr[:, grid.boundary] = 0.0
    return arr


class TestLinearForward:
    def test_heat_kernel(self):
        # y0 = sin(pi x) decays as exp(-pi^2 t) under pure diffusion
        g = build_grid(1, 64)
        tg = build_time_grid(0.1, 256)
        c = constant_coefficients(g, tg, b=1.0)
        y = solve_forward_linear(c, None, _sine_field(g))
        exact = np.exp(-np.pi**2 * 0.1) * np.sin(np.pi * g.nodes[:, 0])
        err = np.abs(y.values[-1] - exact).max() / np.abs(exact).max()
        assert err < 2e-2

    def test_heat_kernel_2d(self):
        g = build_grid(2, 16)
        tg = build_time_grid(0.05, 128)
        c = constant_coefficients(g, tg, b=1.0)
        y = solve_forward_linear(c, None, _sine_field(g))
        exact = np.exp(-2.0 * np.pi**2 * 0.05) * (
            np.sin(np.pi * g.nodes[:, 0]) * np.sin(np.pi * g.nodes[:, 1])
        )
        err = np.abs(y.values[-1] - exact).max() / np.abs(exact).max()
        assert err < 3e-2

    def test_max_principle_decay(self):
        g = build_grid(1, 32)
        tg = build_time_grid(1.0, 64)
        c = constant_coefficients(g, tg, b=1.0)
        y = solve_forward_linear(c, None, _sine_field(g, amp=2.0))
        peaks = np.abs(y.values).max(axis=1)
        assert np.all(np.diff(peaks) <= 1e-14)


class TestTransposition:
    def _varying(self, g, tg, rng):
        # time- and space-varying roster so every slice gets its own factor
        x = g.nodes[:, 0]
        t = tg.times[:, None]
        b = 1.0 + 0.3 * np.sin(2.0 * np.pi * t) * x * (1.0 - x)
        f_adv = np.repeat((0.4 * np.cos(t) + 0.0 * x)[:, :, None], g.dim, axis=2)
        f0 = 0.5 * np.sin(t + x)
        return LinearCoefficients(
            grid=g, tgrid=tg, b=b, f_adv=f_adv, f0=f0, B=b.copy(), g=None, g0=None
        )

    def test_march_adjoint_is_exact_transpose(self):
        g = build_grid(1, 24)
        tg = build_time_grid(1.0, 40)
        rng = np.random.default_rng(11)
        c = self._varying(g, tg, rng)
        factors = state_factors(c)
        for _ in range(50):
            s = _interior_noise(rng, g, tg)
            r = _interior_noise(rng, g, tg)
            pT = rng.standard_normal(g.n_nodes)
            pT[g.boundary] = 0.0
            y = march_forward(factors, np.zeros(g.n_nodes), s)
            p = march_adjoint(factors, pT, r)
            lhs = stepped_pairing(g, tg, s, p)
            rhs = stepped_pairing(g, tg, y, r) + space_inner(Field(g, y[-1]), Field(g, pT))
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_adjoint_of_symmetric_march_is_time_reversal(self):
        # with a constant self-adjoint operator, the adjoint march is the
        # forward march read backwards, shifted one solve
        g = build_grid(1, 32)
        tg = build_time_grid(1.0, 20)
        c = constant_coefficients(g, tg, b=1.0)
        factors = state_factors(c)
        v = _sine_field(g, amp=1.0, k=2).values
        y = march_forward(factors, v, None)
        p = march_adjoint(factors, v, None)
        for m in range(1, tg.steps + 1):
            np.testing.assert_allclose(p[m], y[tg.steps + 1 - m], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(p[0], p[1], rtol=0, atol=0)

    def test_continuous_mode_is_shifted_adjoint_mode(self):
        # constant roster chosen so the backward operator is the literal
        # transpose of the forward one; the two marches then differ only by
        # where the terminal slice sits
        g = build_grid(1, 24)
        tg = build_time_grid(1.0, 16)
        c = constant_coefficients(g, tg, b=1.0, f_adv=0.5, f0=0.3, B=1.0, g=0.5, g0=-0.3)
        pT = _sine_field(g, amp=1.0).values
        adj = solve_backward_linear(c, None, Field(g, pT), form="adjoint").values
        cont = solve_backward_linear(c, None, Field(g, pT), form="continuous").values
        for m in range(1, tg.steps + 1):
            np.testing.assert_allclose(adj[m], cont[m - 1], rtol=1e-12, atol=1e-14)

    def test_unknown_backward_form(self):
        g = build_grid(1, 16)
        tg = build_time_grid(1.0, 16)
        c = constant_coefficients(g, tg, b=1.0)
        with pytest.raises(ValueError):
            solve_backward_linear(c, None, _sine_field(g), form="sideways")


class TestRosterValidation:
    def test_ellipticity_rejected(self):
        g = build_grid(1, 16)
        tg = build_time_grid(1.0, 16)
        with pytest.raises(CoefficientError, match="ellipticity"):
            constant_coefficients(g, tg, b=0.0)

    def test_shape_rejected(self):
        g = build_grid(1, 16)
        tg = build_time_grid(1.0, 16)
        ok = constant_coefficients(g, tg, b=1.0)
        with pytest.raises(CoefficientError, match="shape"):
            LinearCoefficients(
                grid=g, tgrid=tg, b=ok.b[:-1], f_adv=None, f0=None, B=ok.B, g=None, g0=None
            )

    def test_budget_keys(self):
        g = build_grid(1, 16)
        tg = build_time_grid(1.0, 16)
        c = constant_coefficients(g, tg, b=2.0, f0=0.5)
        bud = c.budget()
        assert bud["b"] == 2.0 and bud["f0"] == 0.5
        assert bud["total"] == pytest.approx(sum(v for k, v in bud.items() if k != "total"))


class TestNonlinearity:
    def test_presets_pass_self_check(self):
        names = ["heat", "linear-f", "cubic-f", "burgers-f", "gradient-diffusion",
                 "mild-quasilinear"]
        for name in names:
            nl = nonlinearity_preset(name, a0=1.0, c1=0.2, c2=0.1)
            nl.self_check(dim=1)
            nl.self_check(dim=2)

    def test_unknown_preset(self):
        with pytest.raises(CoefficientError, match="preset"):
            nonlinearity_preset("sideways-diffusion")

    def test_f_origin_constraint(self):
        with pytest.raises(CoefficientError, match="f\\(0, 0\\)"):
            Nonlinearity(
                a=lambda s, eta: np.ones_like(s),
                a_y=lambda s, eta: np.zeros_like(s),
                a_z=lambda s, eta: np.zeros(eta.shape),
                f=lambda s, eta: s + 1.0,
                f_y=lambda s, eta: np.ones_like(s),
                f_z=lambda s, eta: np.zeros(eta.shape),
            )

    def test_d2_analytic_vs_fd_fallback(self):
        nl = nonlinearity_preset("gradient-diffusion", a0=1.0, c=0.3)
        stripped = dataclasses.replace(
            nl, a_yy=None, a_yz=None, a_zz=None, f_yy=None, f_yz=None, f_zz=None
        )
        rng = np.random.default_rng(5)
        s = rng.standard_normal(40)
        eta = rng.standard_normal((40, 2))
        for which in ("a_yy", "a_yz", "a_zz"):
            exact = nl.d2(which, s, eta)
            fd = stripped.d2(which, s, eta)
            np.testing.assert_allclose(fd, exact, rtol=2e-5, atol=2e-6)

    def test_preset_alias_normalization(self):
        nl = nonlinearity_preset("Mild_Quasilinear", q=0.1)
        assert nl.name == "mild-quasilinear"


class TestQuasilinearForward:
    def test_lagged_vs_refreshed_agree(self):
        g = build_grid(1, 64)
        tg = build_time_grid(0.5, 256)
        nl = nonlinearity_preset("mild-quasilinear", a0=1.0, q=0.1, c=0.5)
        y0 = _sine_field(g, amp=0.5)
        lagged = solve_forward_quasilinear(nl, g, tg, y0, refreshes=0)
        fresh = solve_forward_quasilinear(nl, g, tg, y0, refreshes=4)
        assert np.abs(lagged.values - fresh.values).max() < 1e-4

    def test_grid_self_convergence(self):
        nl = nonlinearity_preset("mild-quasilinear", a0=1.0, q=0.3, c=0.5)

        def run(cells, steps):
            g = build_grid(1, cells)
            tg = build_time_grid(0.25, steps)
            return solve_forward_quasilinear(nl, g, tg, _sine_field(g, amp=0.5)).values[-1]

        coarse, mid, ref = run(16, 32), run(32, 64), run(64, 128)
        err_c = np.abs(coarse - ref[::4]).max()
        err_m = np.abs(mid - ref[::2]).max()
        assert err_c / err_m >= 1.8

    def test_heat_preset_matches_linear_solver(self):
        g = build_grid(1, 32)
        tg = build_time_grid(0.5, 64)
        nl = nonlinearity_preset("heat", a0=1.0)
        y0 = _sine_field(g)
        ynl = solve_forward_quasilinear(nl, g, tg, y0, refreshes=0)
        c = constant_coefficients(g, tg, b=1.0)
        ylin = solve_forward_linear(c, None, y0)
        np.testing.assert_allclose(ynl.values, ylin.values, rtol=1e-11, atol=1e-13)

    def test_blowup_reports_slice(self):
        # focusing nonlinearity: f = -c y^3 with large c feeds energy back
        g = build_grid(1, 32)
        tg = build_time_grid(1.0, 16)
        nl = nonlinearity_preset("cubic-f", a0=1.0, c=-100.0)
        with pytest.raises(BlowUpError) as exc:
            solve_forward_quasilinear(nl, g, tg, _sine_field(g, amp=10.0))
        assert exc.value.slice_index >= 1

    def test_ellipticity_loss_reports_node(self):
        nl = nonlinearity_preset("mild-quasilinear", a0=1.0, q=-2.0, c=0.0)
        g = build_grid(1, 32)
        tg = build_time_grid(1.0, 16)
        with pytest.raises(CoefficientError, match="ellipticity"):
            solve_forward_quasilinear(nl, g, tg, _sine_field(g, amp=2.0))


class TestControlSource:
    def test_all_absent_is_none(self, grid16, tgrid32):
        cut = standard_cutoffs(grid16)
        assert combine_control_source(cut, None, None, None) is None

    def test_masked_sum(self, grid16, tgrid32):
        from hiercontrol.grids import SpaceTimeField

        cut = standard_cutoffs(grid16)
        rng = np.random.default_rng(2)
        u = SpaceTimeField(grid16, tgrid32, _interior_noise(rng, grid16, tgrid32))
        v1 = SpaceTimeField(grid16, tgrid32, _interior_noise(rng, grid16, tgrid32))
        out = combine_control_source(cut, u, v1, None)
        expected = cut["leader"].values[None, :] * u.values
        expected = expected + cut["follower1"].values[None, :] * v1.values
        np.testing.assert_allclose(out, expected, rtol=0, atol=0)
