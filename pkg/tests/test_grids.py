"""Grids, quadrature, difference operators, cutoffs."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiercontrol.errors import CoefficientError, GeometryError, GridMismatchError
from hiercontrol.grids import (
    CutoffRegion,
    Field,
    SpaceTimeField,
    assemble_divergence_operator,
    box_mask,
    boxes_intersect,
    build_cutoff,
    build_grid,
    build_time_grid,
    gradient,
    inner_product,
    smoothstep,
    space_inner,
    stepped_norm2,
    stepped_pairing,
    zero_field,
)


class TestBuildGrid:
    def test_1d_counts(self):
        g = build_grid(1, 16)
        assert g.n_nodes == 17
        assert g.boundary.sum() == 2
        assert g.interior_idx.size == 15
        assert np.isclose(g.h, 1.0 / 16)

    def test_2d_counts(self):
        g = build_grid(2, 8)
        assert g.n_nodes == 81
        assert g.boundary.sum() == 32
        assert g.interior_idx.size == 49

    def test_2d_lexicographic_order(self):
        g = build_grid(2, 8)
        # node index ix * (cells + 1) + iy
        idx = 3 * 9 + 5
        assert np.allclose(g.nodes[idx], [3 / 8, 5 / 8])

    def test_rejects_bad_dim_and_cells(self):
        with pytest.raises(GeometryError):
            build_grid(3, 16)
        with pytest.raises(GeometryError):
            build_grid(1, 4)

    def test_time_grid(self):
        tg = build_time_grid(2.0, 32)
        assert tg.tau == pytest.approx(2.0 / 32)
        assert tg.n_slices == 33
        with pytest.raises(GeometryError):
            build_time_grid(-1.0, 32)
        with pytest.raises(GeometryError):
            build_time_grid(1.0, 8)


class TestQuadrature:
    def test_trapezoid_weights_sum_to_measure(self):
        for dim, cells in ((1, 16), (2, 8)):
            g = build_grid(dim, cells)
            assert g.weights.sum() == pytest.approx(1.0)

    def test_quadratic_integral(self):
        g = build_grid(1, 64)
        f = Field(g, g.x**2)
        # int_0^1 x^2 = 1/3, trapezoid error O(h^2)
        assert inner_product(f, Field(g, np.ones(g.n_nodes))) == pytest.approx(1 / 3, abs=1e-4)

    def test_stepped_pairing_skips_slice_zero(self):
        g = build_grid(1, 16)
        tg = build_time_grid(1.0, 32)
        a = np.zeros((tg.n_slices, g.n_nodes))
        a[0] = 1e6  # never integrated
        assert stepped_norm2(g, tg, a) == 0.0

    def test_stepped_pairing_constant(self):
        g = build_grid(1, 16)
        tg = build_time_grid(1.0, 32)
        a = np.ones((tg.n_slices, g.n_nodes))
        assert stepped_pairing(g, tg, a, a) == pytest.approx(1.0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_pairing_bilinear(self, s, t):
        g = build_grid(1, 8)
        tg = build_time_grid(1.0, 16)
        rng = np.random.default_rng(0)
        a = rng.standard_normal((tg.n_slices, g.n_nodes))
        b = rng.standard_normal((tg.n_slices, g.n_nodes))
        c = rng.standard_normal((tg.n_slices, g.n_nodes))
        lhs = stepped_pairing(g, tg, s * a + t * b, c)
        rhs = s * stepped_pairing(g, tg, a, c) + t * stepped_pairing(g, tg, b, c)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


class TestDifferenceOperators:
    def test_gradient_linear_exact(self):
        g = build_grid(1, 16)
        f = Field(g, 2.0 * g.x + 1.0)
        assert np.allclose(gradient(f)[:, 0], 2.0)

    def test_gradient_2d_plane_exact(self):
        g = build_grid(2, 8)
        f = Field(g, 3.0 * g.nodes[:, 0] - 2.0 * g.nodes[:, 1])
        gr = gradient(f)
        assert np.allclose(gr[:, 0], 3.0)
        assert np.allclose(gr[:, 1], -2.0)

    def test_divergence_operator_symmetric(self):
        g = build_grid(1, 16)
        b = 1.0 + g.x  # variable coefficient
        A = assemble_divergence_operator(g, b[:, None]).toarray()
        ii = g.interior_idx
        assert np.allclose(A[np.ix_(ii, ii)], A[np.ix_(ii, ii)].T)

    def test_divergence_flux_form_values(self):
        # -(d/dx)((1+x) d/dx): off-diagonals -(1 + x_k +- h/2)/h^2
        g = build_grid(1, 16)
        h = g.h
        A = assemble_divergence_operator(g, (1.0 + g.x)[:, None]).toarray()
        k = 5
        assert A[k, k + 1] == pytest.approx(-(1.0 + g.x[k] + h / 2) / h**2)
        assert A[k, k - 1] == pytest.approx(-(1.0 + g.x[k] - h / 2) / h**2)

    def test_divergence_2d_constant_is_laplacian(self):
        g = build_grid(2, 8)
        A = assemble_divergence_operator(g, np.ones((g.n_nodes, 2)))
        f = np.sin(np.pi * g.nodes[:, 0]) * np.sin(np.pi * g.nodes[:, 1])
        lap = A @ f
        ii = g.interior_idx
        # 5-point stencil of the product sine: eigenvalue 2(1-cos(pi h))/h^2 per axis
        lam = 2.0 * (1.0 - np.cos(np.pi * g.h)) / g.h**2
        assert np.allclose(lap[ii], 2.0 * lam * f[ii], rtol=1e-10)


class TestFields:
    def test_field_rejects_nonfinite(self):
        g = build_grid(1, 16)
        v = np.zeros(g.n_nodes)
        v[3] = np.nan
        with pytest.raises(CoefficientError):
            Field(g, v)

    def test_spacetime_shape_check(self):
        g = build_grid(1, 16)
        tg = build_time_grid(1.0, 32)
        with pytest.raises(GridMismatchError):
            SpaceTimeField(g, tg, np.zeros((5, g.n_nodes)))

    def test_zero_field_norm(self):
        g = build_grid(1, 16)
        assert zero_field(g).norm() == 0.0

    def test_space_inner_matches_weights(self):
        g = build_grid(1, 16)
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal(g.n_nodes), rng.standard_normal(g.n_nodes)
        got = space_inner(Field(g, a), Field(g, b))
        assert got == pytest.approx(float(np.dot(g.weights * a, b)))


class TestCutoffs:
    def test_smoothstep_endpoints_and_midpoint(self):
        assert smoothstep(np.array([0.0]))[0] == 0.0
        assert smoothstep(np.array([1.0]))[0] == 1.0
        assert smoothstep(np.array([0.5]))[0] == pytest.approx(0.5)

    def test_cutoff_plateau_and_support(self):
        g = build_grid(1, 64)
        c = build_cutoff(g, (0.4, 0.6), (0.3, 0.7))
        assert isinstance(c, CutoffRegion)
        inner = box_mask(g, c.inner)
        assert np.all(c.values[inner] == 1.0)
        outside = (g.x < 0.3) | (g.x > 0.7)
        assert np.all(c.values[outside] == 0.0)
        assert np.all((0.0 <= c.values) & (c.values <= 1.0))

    def test_cutoff_requires_strict_inclusion(self):
        g = build_grid(1, 64)
        with pytest.raises(GeometryError):
            build_cutoff(g, (0.3, 0.6), (0.3, 0.7))
        with pytest.raises(GeometryError):
            build_cutoff(g, (0.2, 0.8), (0.3, 0.7))

    def test_box_mask_strict_interior(self):
        g = build_grid(1, 16)
        m = box_mask(g, (0.25, 0.5))
        xs = g.x[m]
        assert xs.min() > 0.25 - 1e-12 and xs.max() < 0.5 + 1e-12
        assert not m[g.boundary].any()

    def test_boxes_intersect(self):
        assert boxes_intersect(1, ((0.2, 0.5),), ((0.4, 0.8),))
        assert not boxes_intersect(1, ((0.2, 0.3),), ((0.4, 0.8),))
        assert boxes_intersect(2, ((0.2, 0.5), (0.2, 0.5)), ((0.4, 0.8), (0.1, 0.25)))

    @settings(max_examples=25, deadline=None)
    @given(
        st.floats(0.05, 0.3),
        st.floats(0.35, 0.45),
        st.floats(0.05, 0.2),
    )
    def test_cutoff_bounds_property(self, lo, hi, pad):
        g = build_grid(1, 32)
        c = build_cutoff(g, (lo, hi), (max(lo - pad, 0.0), min(hi + pad, 1.0) if hi + pad < 1 else 0.99))
        assert np.all((0.0 <= c.values) & (c.values <= 1.0))
