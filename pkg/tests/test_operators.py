"""Elemental operator kernels: strategies, formulations, analytic checks."""

import numpy as np
import pytest

from speckern.field_block import Block, FieldState, deinterleave_array
from speckern.geometry import (
    GeometryClass,
    REFERENCE_VERTICES,
    make_affine_block,
    make_deformed_block,
    make_synthetic_factors,
    quadrature_coords,
)
from speckern.operators import (
    FieldStateError,
    OperatorKind,
    Strategy,
    UnsupportedStrategyError,
    _basis_apply,
    apply_operator,
    bwd_trans,
    helmholtz_apply,
    helmholtz_apply_coll,
    helmholtz_apply_noncoll,
    iproduct_wrt_base,
    iproduct_wrt_deriv_base,
    mass_apply,
    operator_flops,
    phys_deriv,
)
from speckern.shapes import Shape, build_shape_basis, mode_count, quad_point_counts

ALL_SHAPES = list(Shape)
STRATEGIES = (Strategy.STD_MAT, Strategy.STD_MAT_GROUPED, Strategy.SUM_FAC)


def _coeff_block(shape, order, n_elements=3, width=4, gcls=GeometryClass.REGULAR, seed=0):
    sb = build_shape_basis(shape, order)
    fac = make_synthetic_factors(sb, gcls, n_elements, seed=seed)
    return Block(sb, fac, FieldState.COEFF, 1, width)


def _identity_block(shape, order, state=FieldState.COEFF, width=1, n_components=1):
    sb = build_shape_basis(shape, order)
    fac = make_affine_block(shape, REFERENCE_VERTICES[shape])
    return Block(sb, fac, state, n_components, width)


def _constant_coeffs(sb):
    w = sb.ref_weights
    gram = sb.bmat.T @ (w[:, None] * sb.bmat)
    return np.linalg.solve(gram, sb.bmat.T @ w)


def _project(block, samples):
    """Coefficients of a function given its quadrature samples (dense solve,
    tests only)."""
    sb = block.basis
    wj = _pointwise_w(block)
    gram = sb.bmat.T @ (wj[:, None] * sb.bmat)
    return np.linalg.solve(gram, sb.bmat.T @ (wj * samples))


def _pointwise_w(block):
    if block.geometry_class is GeometryClass.DEFORMED:
        return block.factors.jac[0]
    return block.basis.ref_weights * block.factors.jac[0]


def _slice_factors(fac, e):
    from speckern.geometry import GeometricFactors

    return GeometricFactors(
        fac.geometry_class,
        fac.shape,
        1,
        fac.dxi_dx[e : e + 1].copy(),
        fac.jac[e : e + 1].copy(),
    )


class TestDenseFactoredHinge:
    """Sum-factorised application must equal the dense matrix action: the
    structural link between the 1D factor tables and the assembled basis."""

    @pytest.mark.parametrize("shape", ALL_SHAPES)
    @pytest.mark.parametrize("order", [1, 2, 4, 6])
    def test_value_derivative_and_transpose_paths(self, shape, order):
        rng = np.random.default_rng(order)
        blk = _coeff_block(shape, order, n_elements=2, width=2)
        sb = blk.basis
        x = rng.standard_normal((sb.n_modes, 2))
        blk.set_elements(x[None])
        view = blk.host()[0]
        for dmode in [None] + list(range(sb.ndim)):
            mat = sb.bmat if dmode is None else sb.dbmats[dmode]
            got = deinterleave_array(
                _basis_apply(blk, view, Strategy.SUM_FAC, dmode=dmode), 2
            )
            ref = mat @ x
            assert np.max(np.abs(got - ref)) <= 1e-12 * max(1, np.max(np.abs(ref)))
        yblk = Block(sb, blk.factors, FieldState.PHYS, 1, 2)
        y = rng.standard_normal((sb.n_points, 2))
        yblk.set_elements(y[None])
        yview = yblk.host()[0]
        for dmode in [None] + list(range(sb.ndim)):
            mat = sb.bmat if dmode is None else sb.dbmats[dmode]
            got = deinterleave_array(
                _basis_apply(yblk, yview, Strategy.SUM_FAC, transpose=True, dmode=dmode),
                2,
            )
            ref = mat.T @ y
            assert np.max(np.abs(got - ref)) <= 1e-12 * max(1, np.max(np.abs(ref)))


class TestBwdTrans:
    @pytest.mark.parametrize("shape", ALL_SHAPES)
    def test_constant_coefficients_give_ones(self, shape):
        blk = _identity_block(shape, 3)
        coeffs = _constant_coeffs(blk.basis)
        blk.set_elements(coeffs[None, :, None])
        for strat in STRATEGIES:
            u = bwd_trans(blk, strat).get_elements()[0][:, 0]
            np.testing.assert_allclose(u, 1.0, atol=1e-11)

    def test_quad_sumfac_equals_dense_kronecker(self):
        rng = np.random.default_rng(1)
        blk = _identity_block(Shape.QUAD, 3)
        x = rng.standard_normal(blk.basis.n_modes)
        blk.set_elements(x[None, :, None])
        u = bwd_trans(blk, Strategy.SUM_FAC).get_elements()[0][:, 0]
        np.testing.assert_allclose(u, blk.basis.bmat @ x, atol=1e-13)

    def test_tet_strategies_agree(self):
        rng = np.random.default_rng(2)
        blk = _coeff_block(Shape.TET, 3, n_elements=4)
        blk.set_elements(rng.standard_normal((1, blk.basis.n_modes, 4)))
        outs = [bwd_trans(blk, s).get_elements() for s in STRATEGIES]
        for o in outs[1:]:
            assert np.max(np.abs(o - outs[0])) <= 1e-12 * np.max(np.abs(outs[0]))

    def test_state_mismatch_rejected(self):
        blk = _identity_block(Shape.QUAD, 2, state=FieldState.PHYS)
        with pytest.raises(FieldStateError):
            bwd_trans(blk)

    def test_reserved_strategy_rejected(self):
        blk = _identity_block(Shape.QUAD, 2)
        with pytest.raises(UnsupportedStrategyError):
            bwd_trans(blk, Strategy.SUM_FAC_TOP)


class TestIProductWrtBase:
    @pytest.mark.parametrize("shape", ALL_SHAPES)
    def test_ones_give_basis_integrals(self, shape):
        # direct quadrature-loop oracle for integral of each basis function
        blk = _identity_block(shape, 2, state=FieldState.PHYS)
        sb = blk.basis
        blk.set_elements(np.ones((1, sb.n_points, 1)))
        expect = np.zeros(sb.n_modes)
        for m in range(sb.n_modes):
            for l in range(sb.n_points):
                expect[m] += sb.ref_weights[l] * sb.bmat[l, m]
        for strat in STRATEGIES:
            got = iproduct_wrt_base(blk, strat).get_elements()[0][:, 0]
            np.testing.assert_allclose(got, expect, atol=1e-13)

    def test_zero_input_gives_zero(self):
        blk = _identity_block(Shape.TET, 2, state=FieldState.PHYS)
        out = iproduct_wrt_base(blk).get_elements()
        np.testing.assert_array_equal(out, 0.0)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        sb = build_shape_basis(Shape.PRISM, 2)
        fac = make_synthetic_factors(sb, GeometryClass.DEFORMED, 2, seed=4)
        u = rng.standard_normal((sb.n_points, 2))
        v = rng.standard_normal((sb.n_points, 2))
        alpha, beta = 1.7, -0.3

        def ip(vals):
            blk = Block(sb, fac, FieldState.PHYS, 1, 2)
            blk.set_elements(vals[None])
            return iproduct_wrt_base(blk).get_elements()[0]

        lhs = ip(alpha * u + beta * v)
        rhs = alpha * ip(u) + beta * ip(v)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.max(np.abs(rhs)))


class TestPhysDeriv:
    @pytest.mark.parametrize("shape", ALL_SHAPES)
    def test_linear_field_on_affine_elements(self, shape):
        sb = build_shape_basis(shape, 3)
        fac = make_affine_block(
            shape,
            REFERENCE_VERTICES[shape] @ (np.eye(shape.ndim) * 0.7).T
            + np.arange(shape.ndim),
        )
        blk = Block(sb, fac, FieldState.PHYS, 1, 2)
        xi = quadrature_coords(sb)
        # physical coordinates of the points
        x = xi * 0.7 + np.arange(shape.ndim)
        blk.set_elements(x[:, 0][None, :, None])
        grads = phys_deriv(blk).get_elements()
        np.testing.assert_allclose(grads[0][:, 0], 1.0, atol=1e-11)
        for j in range(1, shape.ndim):
            np.testing.assert_allclose(grads[j][:, 0], 0.0, atol=1e-11)

    def test_bilinear_on_identity_quad(self):
        blk = _identity_block(Shape.QUAD, 3, state=FieldState.PHYS)
        xi = quadrature_coords(blk.basis)
        blk.set_elements((xi[:, 0] * xi[:, 1])[None, :, None])
        grads = phys_deriv(blk).get_elements()
        np.testing.assert_allclose(grads[0][:, 0], xi[:, 1], atol=1e-12)
        np.testing.assert_allclose(grads[1][:, 0], xi[:, 0], atol=1e-12)

    def test_deformed_quad_chain_rule(self):
        # x = (xi1 + a xi2^2, xi2): du/dx of u = x1 known analytically
        a = 0.1
        sb = build_shape_basis(Shape.QUAD, 3)

        def mapping(xi):
            x = xi.copy()
            x[:, 0] = xi[:, 0] + a * xi[:, 1] ** 2
            return x

        fac = make_deformed_block(sb, mapping)
        blk = Block(sb, fac, FieldState.PHYS, 1, 1)
        xi = quadrature_coords(sb)
        x = mapping(xi)
        # u = x1^2: grad = (2 x1, 0) in physical coordinates
        blk.set_elements((x[:, 0] ** 2)[None, :, None])
        grads = phys_deriv(blk).get_elements()
        np.testing.assert_allclose(grads[0][:, 0], 2 * x[:, 0], atol=1e-10)
        np.testing.assert_allclose(grads[1][:, 0], 0.0, atol=1e-10)


class TestIProductWrtDerivBase:
    def test_zero_components_give_zero(self):
        sb = build_shape_basis(Shape.TRI, 2)
        fac = make_synthetic_factors(sb, GeometryClass.REGULAR, 2, seed=0)
        blk = Block(sb, fac, FieldState.PHYS, 2, 2)
        out = iproduct_wrt_deriv_base(blk).get_elements()
        np.testing.assert_array_equal(out, 0.0)

    def test_matches_dense_construction_on_quad(self):
        rng = np.random.default_rng(5)
        sb = build_shape_basis(Shape.QUAD, 3)
        fac = make_synthetic_factors(sb, GeometryClass.DEFORMED, 1, seed=6)
        blk = Block(sb, fac, FieldState.PHYS, 2, 1)
        v = rng.standard_normal((2, sb.n_points, 1))
        blk.set_elements(v)
        wj = fac.jac[0]
        expect = sum(sb.dbmats[d].T @ (wj * v[d, :, 0]) for d in range(2))
        for strat in STRATEGIES:
            got = iproduct_wrt_deriv_base(blk, strat).get_elements()[0][:, 0]
            np.testing.assert_allclose(got, expect, atol=1e-12 * np.max(np.abs(expect)))

    @pytest.mark.parametrize("shape", [Shape.TRI, Shape.HEX, Shape.TET])
    def test_adjoint_identity(self, shape):
        # <iproduct_deriv(v), uhat> == sum_d <v_d, W (D_d B uhat)>
        rng = np.random.default_rng(7)
        sb = build_shape_basis(shape, 3)
        fac = make_synthetic_factors(sb, GeometryClass.DEFORMED, 1, seed=8)
        d = sb.ndim
        vblk = Block(sb, fac, FieldState.PHYS, d, 1)
        v = rng.standard_normal((d, sb.n_points, 1))
        vblk.set_elements(v)
        uhat = rng.standard_normal(sb.n_modes)
        lhs = iproduct_wrt_deriv_base(vblk).get_elements()[0][:, 0] @ uhat
        wj = fac.jac[0]
        rhs = sum(v[k, :, 0] @ (wj * (sb.dbmats[k] @ uhat)) for k in range(d))
        assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(rhs))

    def test_wrong_component_count_rejected(self):
        blk = _identity_block(Shape.HEX, 2, state=FieldState.PHYS, n_components=2)
        with pytest.raises(ValueError):
            iproduct_wrt_deriv_base(blk)


class TestMass:
    def test_identity_quad_constant_gives_basis_integrals(self):
        blk = _identity_block(Shape.QUAD, 2)
        sb = blk.basis
        coeffs = _constant_coeffs(sb)
        blk.set_elements(coeffs[None, :, None])
        got = mass_apply(blk).get_elements()[0][:, 0]
        expect = sb.bmat.T @ sb.ref_weights  # integral of each basis function
        np.testing.assert_allclose(got, expect, atol=1e-12)

    @pytest.mark.parametrize("shape", ALL_SHAPES)
    @pytest.mark.parametrize("order", range(1, 5))
    def test_positive_definite_on_random_vectors(self, shape, order):
        rng = np.random.default_rng(order)
        blk = _coeff_block(shape, order, n_elements=1, width=1, gcls=GeometryClass.DEFORMED)
        for _ in range(100):
            x = rng.standard_normal(blk.basis.n_modes)
            blk.set_elements(x[None, :, None])
            mx = mass_apply(blk).get_elements()[0][:, 0]
            assert x @ mx > 0.0

    def test_scaled_hex_jacobian_factor(self):
        rng = np.random.default_rng(9)
        sb = build_shape_basis(Shape.HEX, 2)
        x = rng.standard_normal(sb.n_modes)
        results = {}
        for h in (2.0, 1.0):
            fac = make_affine_block(Shape.HEX, 0.5 * h * REFERENCE_VERTICES[Shape.HEX])
            blk = Block(sb, fac, FieldState.COEFF, 1, 1)
            blk.set_elements(x[None, :, None])
            results[h] = mass_apply(blk).get_elements()[0][:, 0]
        np.testing.assert_allclose(results[1.0], 0.125 * results[2.0], atol=1e-13)


class TestHelmholtz:
    def test_constant_reduces_to_mass(self):
        for shape in ALL_SHAPES:
            blk = _identity_block(shape, 2)
            coeffs = _constant_coeffs(blk.basis)
            blk.set_elements(coeffs[None, :, None])
            h = helmholtz_apply_noncoll(blk, 1.0, Strategy.STD_MAT).get_elements()
            m = mass_apply(blk, Strategy.STD_MAT).get_elements()
            np.testing.assert_allclose(h, m, atol=1e-12 * np.max(np.abs(m)))

    def test_zero_lambda_annihilates_constants(self):
        for shape in ALL_SHAPES:
            blk = _identity_block(shape, 3)
            coeffs = _constant_coeffs(blk.basis)
            blk.set_elements(coeffs[None, :, None])
            h = helmholtz_apply_coll(blk, 0.0).get_elements()
            assert np.max(np.abs(h)) < 1e-11

    @pytest.mark.parametrize("shape", ALL_SHAPES)
    @pytest.mark.parametrize("gcls", list(GeometryClass))
    def test_formulations_and_strategies_agree(self, shape, gcls):
        rng = np.random.default_rng(10)
        for order in (1, 2, 3, 4):
            blk = _coeff_block(shape, order, n_elements=3, gcls=gcls, seed=11)
            blk.set_elements(rng.uniform(-1, 1, (1, blk.basis.n_modes, 3)))
            outs = []
            for strat in STRATEGIES:
                outs.append(helmholtz_apply_noncoll(blk, 2.5, strat).get_elements())
                outs.append(helmholtz_apply_coll(blk, 2.5, strat).get_elements())
            scale = np.max(np.abs(outs[0]))
            for o in outs[1:]:
                assert np.max(np.abs(o - outs[0])) <= 1e-11 * scale

    def test_symmetry_of_bilinear_form(self):
        rng = np.random.default_rng(12)
        for shape in ALL_SHAPES:
            blk = _coeff_block(shape, 3, n_elements=1, width=1, gcls=GeometryClass.DEFORMED)
            n = blk.basis.n_modes
            for _ in range(5):
                u = rng.standard_normal(n)
                v = rng.standard_normal(n)
                blk.set_elements(u[None, :, None])
                hu = helmholtz_apply_coll(blk, 1.3).get_elements()[0][:, 0]
                blk.set_elements(v[None, :, None])
                hv = helmholtz_apply_coll(blk, 1.3).get_elements()[0][:, 0]
                scale = max(abs(u @ hv), abs(v @ hu), 1.0)
                assert abs(u @ hv - v @ hu) <= 1e-11 * scale

    def test_dirichlet_energy_of_quadratic_on_identity_quad(self):
        # u = xi1^2 + xi1 xi2: integral of |grad u|^2 over the square is 8
        blk = _identity_block(Shape.QUAD, 2)
        xi = quadrature_coords(blk.basis)
        coeffs = _project(blk, xi[:, 0] ** 2 + xi[:, 0] * xi[:, 1])
        blk.set_elements(coeffs[None, :, None])
        out = helmholtz_apply_coll(blk, 0.0).get_elements()[0][:, 0]
        assert abs(coeffs @ out - 8.0) < 1e-12

    def test_default_form_dispatch(self):
        rng = np.random.default_rng(13)
        blk = _coeff_block(Shape.HEX, 2)
        blk.set_elements(rng.standard_normal((1, blk.basis.n_modes, 3)))
        a = helmholtz_apply(blk, 1.0, Strategy.SUM_FAC).get_elements()
        b = helmholtz_apply(blk, 1.0, Strategy.STD_MAT).get_elements()
        c = helmholtz_apply(blk, 1.0, Strategy.SUM_FAC, form="noncoll").get_elements()
        assert np.max(np.abs(a - b)) <= 1e-11 * np.max(np.abs(a))
        assert np.max(np.abs(c - a)) <= 1e-11 * np.max(np.abs(a))

    def test_negative_lambda_rejected(self):
        blk = _identity_block(Shape.QUAD, 2)
        with pytest.raises(ValueError):
            helmholtz_apply_noncoll(blk, -1.0)
        with pytest.raises(ValueError):
            helmholtz_apply_coll(blk, -0.5)


class TestProjection:
    @pytest.mark.parametrize("shape", ALL_SHAPES)
    def test_projection_reproduces_polynomials(self, shape):
        # forward solve through the operator-built mass matrix (dense
        # factorisation in tests only), then backward transform
        rng = np.random.default_rng(14)
        order = 3
        blk = _coeff_block(shape, order, n_elements=1, width=1, seed=15)
        sb = blk.basis
        xi_ref = quadrature_coords(sb)
        # random polynomial of total degree <= order
        coef = rng.standard_normal(sb.ndim + 1)
        samples = coef[0] + xi_ref @ coef[1:]
        samples = samples * (1.0 + 0.2 * xi_ref[:, 0])  # degree 2 total
        m = np.empty((sb.n_modes, sb.n_modes))
        for k in range(sb.n_modes):
            e = np.zeros(sb.n_modes)
            e[k] = 1.0
            blk.set_elements(e[None, :, None])
            m[:, k] = mass_apply(blk).get_elements()[0][:, 0]
        pblk = Block(sb, blk.factors, FieldState.PHYS, 1, 1)
        pblk.set_elements(samples[None, :, None])
        rhs = iproduct_wrt_base(pblk).get_elements()[0][:, 0]
        coeffs = np.linalg.solve(m, rhs)
        blk.set_elements(coeffs[None, :, None])
        back = bwd_trans(blk).get_elements()[0][:, 0]
        assert np.max(np.abs(back - samples)) <= 1e-10 * max(1, np.max(np.abs(samples)))


class TestPaddingAndDeterminism:
    @pytest.mark.parametrize("shape", [Shape.QUAD, Shape.TET])
    def test_results_independent_of_padding(self, shape):
        # the first 7 elements of an 8-element block and a 7-element block
        # (same width) must produce bit-identical outputs
        sb = build_shape_basis(shape, 3)
        rng_data = np.random.default_rng(16).standard_normal((sb.n_modes, 8))
        outs = {}
        for ne in (7, 8):
            fac = make_synthetic_factors(sb, GeometryClass.REGULAR, ne, seed=17)
            blk = Block(sb, fac, FieldState.COEFF, 1, 4)
            blk.set_elements(rng_data[None, :, :ne])
            outs[ne] = {
                strat: apply_operator(
                    OperatorKind.HELMHOLTZ_COLL, blk, strat, 1.0
                ).get_elements()[0][:, :7]
                for strat in STRATEGIES
            }
        for strat in STRATEGIES:
            np.testing.assert_array_equal(outs[7][strat], outs[8][strat])

    def test_padded_group_matches_element_by_element(self):
        # one 5-element block at width 4 (padded) versus five 1-element
        # blocks sharing the geometry, element for element
        sb = build_shape_basis(Shape.TRI, 3)
        fac = make_synthetic_factors(sb, GeometryClass.DEFORMED, 5, seed=30)
        data = np.random.default_rng(31).uniform(-1, 1, (sb.n_modes, 5))
        blk = Block(sb, fac, FieldState.COEFF, 1, 4)
        blk.set_elements(data[None])
        grouped = mass_apply(blk, Strategy.SUM_FAC).get_elements()[0]
        from speckern.geometry import deformed_factors_from_coords

        for e in range(5):
            fac_e = make_synthetic_factors(sb, GeometryClass.DEFORMED, 5, seed=30)
            single = Block(sb, _slice_factors(fac_e, e), FieldState.COEFF, 1, 4)
            single.set_elements(data[None, :, e : e + 1])
            alone = mass_apply(single, Strategy.SUM_FAC).get_elements()[0][:, 0]
            np.testing.assert_allclose(
                alone, grouped[:, e], rtol=0, atol=1e-13 * np.max(np.abs(grouped))
            )

    def test_repeat_runs_bit_identical(self):
        sb = build_shape_basis(Shape.PRISM, 2)
        fac = make_synthetic_factors(sb, GeometryClass.DEFORMED, 5, seed=18)
        data = np.random.default_rng(19).standard_normal((1, sb.n_modes, 5))
        results = []
        for _ in range(2):
            blk = Block(sb, fac, FieldState.COEFF, 1, 4)
            blk.set_elements(data)
            results.append(
                helmholtz_apply_coll(blk, 1.0, Strategy.SUM_FAC).get_elements()
            )
        np.testing.assert_array_equal(results[0], results[1])

    @pytest.mark.parametrize("width", [1, 2, 4, 8])
    def test_interleave_width_does_not_change_results(self, width):
        rng = np.random.default_rng(20)
        sb = build_shape_basis(Shape.TET, 3)
        fac = make_synthetic_factors(sb, GeometryClass.DEFORMED, 6, seed=21)
        data = rng.standard_normal((1, sb.n_modes, 6))
        blk = Block(sb, fac, FieldState.COEFF, 1, width)
        blk.set_elements(data)
        out = mass_apply(blk, Strategy.SUM_FAC).get_elements()
        blk1 = Block(sb, fac, FieldState.COEFF, 1, 1)
        blk1.set_elements(data)
        ref = mass_apply(blk1, Strategy.SUM_FAC).get_elements()
        assert np.max(np.abs(out - ref)) <= 1e-13 * np.max(np.abs(ref))


class TestOperatorFlops:
    def test_quad_bwdtrans_stdmat(self):
        nq = 4 * 4
        npm = 9
        assert (
            operator_flops(OperatorKind.BWD_TRANS, Shape.QUAD, 2, Strategy.STD_MAT)
            == 2 * nq * npm
        )

    def test_quad_bwdtrans_sumfac_loop_trips(self):
        q1, q2 = quad_point_counts(Shape.QUAD, 2)
        p1 = 3
        expect = 2 * (q1 * p1 * p1 + q1 * q2 * p1)
        assert (
            operator_flops(OperatorKind.BWD_TRANS, Shape.QUAD, 2, Strategy.SUM_FAC)
            == expect
        )

    def test_grouped_matches_stdmat(self):
        for kind in (OperatorKind.MASS, OperatorKind.HELMHOLTZ_NONCOLL):
            assert operator_flops(
                kind, Shape.TET, 3, Strategy.STD_MAT
            ) == operator_flops(kind, Shape.TET, 3, Strategy.STD_MAT_GROUPED)

    def test_hex_tet_helmholtz_per_dof_ratio_order_of_magnitude(self):
        # qualitative check: tetrahedra cost several times more per output
        # coefficient than hexahedra at order 7
        f_tet = operator_flops(
            OperatorKind.HELMHOLTZ_COLL, Shape.TET, 7, Strategy.SUM_FAC
        ) / mode_count(Shape.TET, 7)
        f_hex = operator_flops(
            OperatorKind.HELMHOLTZ_COLL, Shape.HEX, 7, Strategy.SUM_FAC
        ) / mode_count(Shape.HEX, 7)
        ratio = f_tet / f_hex
        assert 2.0 < ratio < 20.0

    def test_unsupported_strategy_rejected(self):
        with pytest.raises(UnsupportedStrategyError):
            operator_flops(OperatorKind.MASS, Shape.HEX, 2, Strategy.SUM_FAC_TOP)


class TestFieldApplication:
    def test_apply_to_field_multiblock_threads(self):
        from speckern.field_block import make_field
        from speckern.operators import apply_to_field

        fld = make_field(
            [Shape.QUAD, Shape.TRI, Shape.HEX],
            2,
            GeometryClass.REGULAR,
            4,
            interleave_width=2,
            seed=22,
        )
        rng = np.random.default_rng(23)
        for blk in fld.blocks:
            blk.set_elements(rng.standard_normal((1, blk.n_data, 4)))
        serial = apply_to_field(OperatorKind.MASS, fld, threads=1)
        parallel = apply_to_field(OperatorKind.MASS, fld, threads=3)
        for a, b in zip(serial.blocks, parallel.blocks):
            np.testing.assert_array_equal(a.get_elements(), b.get_elements())
