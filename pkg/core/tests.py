import numpy as np
import sympy as sp
from django.test import SimpleTestCase, TestCase

from core.exceptions import (
    BallOutsideGrid,
    CoincidentPoints,
    DimensionMismatch,
    InhomogeneousOrder,
    MalformedSpec,
    NotCElliptic,
    NotElliptic,
    ZeroOperator,
)
from core.models import CVerdict, EllipticVerdict, OperatorAnalysis
from core.services.ellipticity import (
    c_ellipticity,
    cancellation_image_intersection,
    is_elliptic,
    kernel_homogeneous,
)
from core.services.grid import GridDomain, GridFunction, apply_operator, gradient_tensor
from core.services.operators import adjoint_laplacian, builtin, compose, gradient, laplacian, sym_grad
from core.services.poly import (
    ZERO_DEGREE,
    MultiIndex,
    VPolynomial,
    apply_to_polynomial,
    ball_average,
    ball_moment,
    make_operator,
    polynomial_basis,
    symbol,
    symbol_batch,
)
from core.services.projection import (
    BallSpec,
    apply_projection,
    averaged_taylor,
    build_projection,
    check_corrector_identity,
    check_degree_preservation,
    check_dual_exactness,
    check_idempotent,
    kernel_scaling,
    maz_kernel,
    maz_kernel_batch,
    projection_stability,
    representation_error,
    riesz_bound_check,
)
from core.tasks import analyze_operator_task, cached_profile, save_analysis


def random_polynomial(rng, n, dim, degree, scale=5):
    basis = polynomial_basis(n, dim, degree)
    values = [sp.Rational(int(rng.integers(-scale, scale + 1)), int(rng.integers(1, 4))) for _ in basis]
    return VPolynomial.from_coordinates(n, dim, basis, values)


def unit_square(cells: int) -> GridDomain:
    return GridDomain(n=2, h=1.0 / cells, mask=np.ones((cells, cells), dtype=bool), origin=(0.0, 0.0), kind="square")


GRADIENT_2D = {
    "n": 2, "k": 1, "dim_v": 1, "dim_w": 2,
    "terms": [{"alpha": [1, 0], "matrix": [[1], [0]]}, {"alpha": [0, 1], "matrix": [[0], [1]]}],
}


class OperatorSpecTests(SimpleTestCase):
    def test_gradient_spec_is_valid(self):
        op = make_operator(GRADIENT_2D)
        self.assertEqual((op.n, op.k, op.dim_v, op.dim_w), (2, 1, 1, 2))

    def test_symmetric_gradient_with_root_two_coordinates(self):
        r = "sqrt(2)/2"
        spec = {
            "n": 2, "k": 1, "dim_v": 2, "dim_w": 3,
            "terms": [
                {"alpha": [1, 0], "matrix": [[1, 0], [0, 0], [0, r]]},
                {"alpha": [0, 1], "matrix": [[0, 0], [0, 1], [r, 0]]},
            ],
        }
        op = make_operator(spec)
        self.assertEqual(op.spec_hash, sym_grad(2).spec_hash)

    def test_lower_order_term_is_rejected(self):
        spec = dict(GRADIENT_2D, terms=GRADIENT_2D["terms"] + [{"alpha": [0, 0], "matrix": [[1], [1]]}])
        with self.assertRaises(InhomogeneousOrder):
            make_operator(spec)

    def test_zero_matrices_are_rejected(self):
        spec = dict(GRADIENT_2D, terms=[{"alpha": [1, 0], "matrix": [[0], [0]]}])
        with self.assertRaises(ZeroOperator):
            make_operator(spec)

    def test_wrong_matrix_shape(self):
        spec = dict(GRADIENT_2D, terms=[{"alpha": [1, 0], "matrix": [[1, 0]]}])
        with self.assertRaises(MalformedSpec):
            make_operator(spec)

    def test_spec_round_trip(self):
        for name in ("sym_grad_3d", "eps_dev_3d", "grad_eps_dev_3d", "laplace_2d"):
            op = builtin(name)
            self.assertEqual(make_operator(op.to_spec()).spec_hash, op.spec_hash, name)

    def test_laplacian_is_adjoint_square_of_gradient(self):
        xis = np.random.default_rng(2).normal(size=(6, 2))
        direct = symbol_batch(laplacian(2), xis)
        composed = symbol_batch(adjoint_laplacian(gradient(2)), xis)
        np.testing.assert_allclose(np.abs(direct), np.abs(composed), rtol=1e-12)


class PolynomialTests(SimpleTestCase):
    def test_multi_index_order(self):
        alpha = MultiIndex((2, 0, 1))
        self.assertEqual(alpha.order, 3)
        self.assertEqual(alpha.factorial(), 2)
        with self.assertRaises(MalformedSpec):
            MultiIndex((1, -1))

    def test_zero_polynomial_degree(self):
        self.assertEqual(VPolynomial.zero(2, 1).degree, ZERO_DEGREE)

    def test_symbol_of_gradient(self):
        value = symbol(gradient(2), [2.0, 3j]).value
        np.testing.assert_allclose(value[:, 0], [2.0, 3j])
        with self.assertRaises(DimensionMismatch):
            symbol(gradient(2), [1.0])

    def test_rigid_motions_are_annihilated(self):
        # u(x, y) = (a − c·y, b + c·x)
        rigid = VPolynomial.build(2, 2, {(0, 0): (1, 2), (0, 1): (-3, 0), (1, 0): (0, 3)})
        self.assertTrue(apply_to_polynomial(sym_grad(2), rigid).is_zero)

    def test_ball_moments(self):
        self.assertEqual(ball_moment((0, 0), 1), sp.pi)
        self.assertEqual(ball_moment((1, 0), 1, 3), 0)
        self.assertEqual(ball_moment((0, 0), 2, 4, normalized=True), 1)
        # ⨍_B x² = r²/4 в ℝ²
        self.assertEqual(ball_moment((2, 0), 2, normalized=True), 1)

    def test_ball_average_of_shifted_linear(self):
        value = ball_average({(1, 0): 1, (0, 0): 2}, ("1/2", 0), 1, 4)
        self.assertEqual(value, sp.Rational(5, 2))

    def test_composition_order(self):
        op = compose(gradient(3, 1, components=5), builtin("eps_dev_3d"))
        self.assertEqual((op.k, op.dim_v, op.dim_w), (2, 3, 15))


class EllipticityTests(SimpleTestCase):
    def test_real_ellipticity(self):
        self.assertEqual(is_elliptic(gradient(2), seed=1).verdict, EllipticVerdict.ELLIPTIC)
        self.assertEqual(is_elliptic(builtin("partial1_2d"), seed=1).verdict, EllipticVerdict.NOT_ELLIPTIC)

    def test_low_degree_kernels_are_full(self):
        op = gradient(2, 2)
        self.assertEqual(len(kernel_homogeneous(op, 1)), 2)

    def test_symmetric_gradient_profile(self):
        profile = c_ellipticity(sym_grad(2), max_degree=6)
        self.assertEqual(profile.verdict, CVerdict.C_ELLIPTIC)
        self.assertEqual(profile.deg_p, 2)
        self.assertEqual(sum(profile.kernel_dims), 3)

    def test_gallery_verdicts(self):
        expected = {
            "grad_2d": (CVerdict.C_ELLIPTIC, 1),
            "hessian_2d": (CVerdict.C_ELLIPTIC, 2),
            "grad3_2d": (CVerdict.C_ELLIPTIC, 3),
            "sym_grad_3d": (CVerdict.C_ELLIPTIC, 2),
            "eps_dev_3d": (CVerdict.C_ELLIPTIC, 3),
        }
        for name, (verdict, deg_p) in expected.items():
            profile = c_ellipticity(builtin(name), max_degree=8)
            self.assertEqual(profile.verdict, verdict, name)
            self.assertEqual(profile.deg_p, deg_p, name)

    def test_monotone_vanishing(self):
        profile = c_ellipticity(builtin("eps_dev_3d"), max_degree=8)
        dims = profile.kernel_dims
        self.assertEqual(dims[-1], 0)
        self.assertTrue(all(d > 0 for d in dims[:-1]))

    def test_deviatoric_gradient_witness_in_plane(self):
        profile = c_ellipticity(builtin("eps_dev_2d"), max_degree=5, restarts=8, seed=3)
        self.assertEqual(profile.verdict, CVerdict.NOT_C_ELLIPTIC)
        self.assertLessEqual(profile.witness.residual, 1e-8)

    def test_laplacian_witness(self):
        profile = c_ellipticity(builtin("laplace_2d"), max_degree=6, restarts=8, seed=3)
        self.assertEqual(profile.verdict, CVerdict.NOT_C_ELLIPTIC)
        self.assertLessEqual(profile.witness.residual, 1e-8)
        self.assertTrue(all(d > 0 for d in profile.kernel_dims))

    def test_hessian_has_no_witness(self):
        from core.services.ellipticity import complex_symbol_infimum

        value, _ = complex_symbol_infimum(gradient(2, 2), restarts=8, seed=3)
        self.assertGreaterEqual(value, 0.1)

    def test_cancellation(self):
        self.assertEqual(cancellation_image_intersection(builtin("laplace_2d")).dimension, 1)
        self.assertEqual(cancellation_image_intersection(gradient(2)).dimension, 0)
        self.assertEqual(cancellation_image_intersection(sym_grad(2)).dimension, 0)
        with self.assertRaises(NotElliptic):
            cancellation_image_intersection(builtin("partial1_2d"))


class ProjectionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.op = sym_grad(2)
        cls.profile = c_ellipticity(cls.op, max_degree=6)
        cls.ball = BallSpec((0.5, 0.5), 0.25)
        cls.P = build_projection(cls.op, cls.ball, cls.profile)

    def test_structure_checks(self):
        self.assertTrue(check_dual_exactness(self.P))
        self.assertTrue(check_corrector_identity(self.P))
        self.assertTrue(check_idempotent(self.P))
        self.assertEqual(check_degree_preservation(self.P, self.profile.deg_p), [])
        self.assertEqual(self.P.kernel_size, 3)

    def test_kernel_is_fixed(self):
        rigid = VPolynomial.build(2, 2, {(0, 0): (1, 2), (0, 1): (-3, 0), (1, 0): (0, 3)})
        self.assertTrue(apply_projection(self.P, rigid).equals(rigid))

    def test_polynomial_idempotence(self):
        rng = np.random.default_rng(0)
        u = random_polynomial(rng, 2, 2, 3)
        once = apply_projection(self.P, u)
        self.assertTrue(apply_projection(self.P, once).equals(once))
        self.assertTrue(apply_to_polynomial(self.op, once).is_zero)

    def test_taylor_reproduces_polynomials(self):
        rng = np.random.default_rng(1)
        u = random_polynomial(rng, 2, 2, 2)
        self.assertTrue(averaged_taylor(u, 2, self.ball).equals(u))

    def test_taylor_of_order_zero_is_average(self):
        u = VPolynomial.build(2, 1, {(2, 0): (1,), (0, 1): (3,)})
        constant = averaged_taylor(u, 0, BallSpec((0.5, 0.0), 1.0, 2))
        expected = ball_average({(2, 0): 1, (0, 1): 3}, ("1/2", 0), 1, 2)
        self.assertEqual(constant.coeffs[(0, 0)][0], expected)

    def test_commutation_on_cubics(self):
        rng = np.random.default_rng(2)
        ball = self.ball.with_exponent(5)
        for _ in range(5):
            u = random_polynomial(rng, 2, 2, 3)
            left = apply_to_polynomial(self.op, averaged_taylor(u, 1, ball))
            right = averaged_taylor(apply_to_polynomial(self.op, u), 0, ball)
            self.assertTrue(left.equals(right))

    def test_gradient_projection_is_weighted_average(self):
        op = gradient(2)
        P = build_projection(op, BallSpec((0.0, 0.0), 1.0), c_ellipticity(op, max_degree=3))
        u = VPolynomial.build(2, 1, {(2, 0): (1,), (1, 1): (2,), (0, 0): (5,)})
        average = ball_average({(2, 0): 1, (1, 1): 2, (0, 0): 5}, (0, 0), 1, 4)
        self.assertEqual(apply_projection(P, u).coeffs[(0, 0)][0], average)

    def test_json_round_trip(self):
        from core.services.projection import ProjectionOperator

        restored = ProjectionOperator.from_json(self.P.to_json())
        self.assertEqual(restored.pi_matrix, self.P.pi_matrix)
        self.assertEqual(restored.kernel_size, self.P.kernel_size)

    def test_not_c_elliptic_is_rejected(self):
        op = builtin("laplace_2d")
        with self.assertRaises(NotCElliptic):
            build_projection(op, self.ball, c_ellipticity(op, max_degree=4, restarts=2))


class GridProjectionTests(SimpleTestCase):
    def setUp(self):
        self.domain = unit_square(32)
        self.op = sym_grad(2)
        self.P = build_projection(self.op, BallSpec((0.5, 0.5), 0.3), c_ellipticity(self.op, max_degree=6))

    def test_grid_taylor_reproduces_quadratics(self):
        u = VPolynomial.build(2, 2, {(2, 0): (1, 0), (1, 1): (0, -2), (0, 0): (1, 1)})
        taylor = averaged_taylor(GridFunction.from_polynomial(self.domain, u), 2, BallSpec((0.5, 0.5), 0.3, 5))
        np.testing.assert_allclose(
            taylor.evaluate(self.domain.points), u.evaluate(self.domain.points), atol=1e-9
        )

    def test_ball_outside_grid(self):
        u = GridFunction.zeros(self.domain, 2)
        with self.assertRaises(BallOutsideGrid):
            averaged_taylor(u, 1, BallSpec((0.9, 0.5), 0.3))

    def test_grid_constant_field(self):
        u = GridFunction.from_callable(self.domain, lambda x: np.tile([1.5, -2.0], (len(x), 1)))
        image = apply_projection(self.P, u)
        np.testing.assert_allclose(image.evaluate([[0.1, 0.7]])[0], [1.5, -2.0], atol=1e-10)

    def test_stability_ratio_is_finite(self):
        rng = np.random.default_rng(4)
        ratios = []
        for _ in range(10):
            coeffs = rng.normal(size=(2, 6))
            u = GridFunction.from_callable(
                self.domain,
                lambda x: np.stack([np.sin(coeffs[i, 0] * x[:, 0] + coeffs[i, 1] * x[:, 1]) + coeffs[i, 2]
                                    for i in range(2)], axis=1),
            )
            ratios.append(projection_stability(self.P, u))
        self.assertTrue(np.isfinite(ratios).all())

    def test_riesz_check_on_kernel(self):
        rigid = VPolynomial.build(2, 2, {(0, 0): (1, 0), (0, 1): (-1, 0), (1, 0): (0, 1)})
        u = GridFunction.from_polynomial(self.domain, rigid)
        self.assertEqual(riesz_bound_check(self.op, self.P, u, 0), 0.0)

    def test_riesz_check_on_quadratic(self):
        u = GridFunction.from_polynomial(self.domain, VPolynomial.build(2, 2, {(2, 0): (0, 1), (1, 1): (1, 0)}))
        value = riesz_bound_check(self.op, self.P, u, 0)
        self.assertTrue(0 < value < np.inf)

    def test_grid_derivatives_of_linear_field(self):
        u = GridFunction.from_polynomial(self.domain, VPolynomial.build(2, 2, {(1, 0): (1, 0), (0, 1): (0, 1)}))
        values, valid = apply_operator(self.op, u)
        np.testing.assert_allclose(values[:, valid].T, np.tile([1.0, 1.0, 0.0], (valid.sum(), 1)), atol=1e-12)
        tensor, _ = gradient_tensor(u, 1)
        self.assertEqual(tensor.shape[0], 4)


class MazyaKernelTests(SimpleTestCase):
    ball = BallSpec((0.0, 0.0), 1.0)

    def test_ray_missing_support(self):
        self.assertEqual(maz_kernel((1, 1), self.ball, (2.0, 0.0), (3.0, 0.0)), 0.0)

    def test_coincident_points(self):
        with self.assertRaises(CoincidentPoints):
            maz_kernel((1, 0), self.ball, (0.1, 0.1), (0.1, 0.1))

    def test_quadrature_forms_agree(self):
        x = np.array([0.2, -0.1])
        ys = np.array([[0.5, 0.4], [-0.3, 0.6], [0.9, -0.2]])
        batch = maz_kernel_batch((1, 1), self.ball, x, ys)
        single = [maz_kernel((1, 1), self.ball, x, y) for y in ys]
        np.testing.assert_allclose(batch, single, rtol=1e-9, atol=1e-13)

    def test_scaling_slope(self):
        slope = kernel_scaling((2, 0), self.ball, (0.1, 0.2), np.logspace(-4, -2, 9))
        self.assertAlmostEqual(slope, 0.0, delta=0.05)
        slope = kernel_scaling((1, 0), self.ball, (0.1, 0.2), np.logspace(-4, -2, 9))
        self.assertAlmostEqual(slope, -1.0, delta=0.05)

    def test_representation_formula(self):
        rng = np.random.default_rng(5)
        u = random_polynomial(rng, 2, 1, 2)
        for x in ([0.1, 0.2], [-0.3, 0.05]):
            self.assertLessEqual(representation_error(u, self.ball, x, m=2), 1e-6)


class OperatorAnalysisTests(TestCase):
    def test_profile_is_stored_and_reused(self):
        op = sym_grad(2)
        profile = cached_profile(op, max_degree=6, record=True)
        stored = OperatorAnalysis.objects.get(spec_hash=op.spec_hash)
        self.assertEqual(stored.deg_p, 2)
        self.assertEqual(stored.kernel_dimension(), 3)
        again = cached_profile(op, max_degree=6)
        self.assertEqual(again.kernel_dims, profile.kernel_dims)

    def test_projection_is_persisted(self):
        op = gradient(2)
        profile = c_ellipticity(op, max_degree=3)
        P = build_projection(op, BallSpec((0.0, 0.0), 1.0), profile)
        analysis = save_analysis(op, profile, 3, P)
        self.assertEqual(analysis.projection["kernel_size"], 1)
        self.assertIn("c_elliptic", str(analysis.verdict))

    def test_analysis_task_stores_projection(self):
        op = gradient(2)
        ball = {"center": [0.0, 0.0], "radius": 1.0}
        ident = analyze_operator_task.delay(op.to_spec(), max_degree=3, ball=ball).get()
        analysis = OperatorAnalysis.objects.get(pk=ident)
        self.assertEqual(analysis.deg_p, 1)
        self.assertEqual(analysis.projection["kernel_size"], 1)
