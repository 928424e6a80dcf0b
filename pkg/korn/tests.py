import numpy as np
from django.test import SimpleTestCase

from analysis.services.maximal import Weight
from core.exceptions import DomainTooThin, InvalidOrlicz, MalformedSpec, NotElliptic, ZeroDenominator
from core.services.ellipticity import c_ellipticity
from core.services.grid import GridDomain, GridFunction, apply_operator
from core.services.operators import dev_sym_grad, gradient, partial, sym_grad
from core.services.projection import build_projection
from geometry.services.domains import make_domain, periodic_box
from korn.services.bench import (
    EXACT,
    central_ball,
    eigensolver_agreement,
    field_family,
    holomorphic_witnesses,
    interpolation_check,
    korn_constant_p2,
    korn_constant_sampled,
    nested_monotonicity,
    poincare_and_bestapprox,
)
from korn.services.fd import assemble_fd
from korn.services.multiplier import multiplier_reconstruction
from korn.services.norms import NormSpec, OrliczFunction, lorentz_norm, weighted_lp
from korn.tasks import korn_sweep, parse_steps


def block(cells: int, h: float = None) -> GridDomain:
    h = h or 1.0 / cells
    return GridDomain(n=2, h=h, mask=np.ones((cells, cells), dtype=bool), origin=(0.0, 0.0), kind="block")


def bump_field(domain, center, radius, dim=1, aspect=1.0, factor=None):
    def sample(points):
        shifted = (points - np.asarray(center)) / radius
        shifted[:, 1] *= aspect
        s = np.clip(1 - (shifted ** 2).sum(axis=1), 0.0, None) ** 4
        if factor is not None:
            s = s * factor(points)
        return np.repeat(s[:, None], dim, axis=1)

    return GridFunction.from_callable(domain, sample)


class AssemblyTests(SimpleTestCase):
    def test_block_has_two_by_two_interior(self):
        domain = block(4)
        assembled = assemble_fd(gradient(2, 1), domain)
        self.assertEqual(int(assembled.rows.sum()), 4)
        u = GridFunction.from_callable(domain, lambda p: 3 * p[:, 0] - 2 * p[:, 1] + 1)
        image = assembled.image(assembled.to_vector(u))
        np.testing.assert_allclose(image[0][assembled.rows], 3.0, atol=1e-12)
        np.testing.assert_allclose(image[1][assembled.rows], -2.0, atol=1e-12)

    def test_rigid_fields_are_annihilated(self):
        domain = make_domain("square", h=1 / 32)
        assembled = assemble_fd(sym_grad(2), domain)
        rigid = GridFunction.from_callable(domain, lambda p: np.stack([0.3 - 1.5 * p[:, 1], -0.7 + 1.5 * p[:, 0]],
                                                                      axis=1))
        image = assembled.image(assembled.to_vector(rigid))
        self.assertLess(np.abs(image).max(), 1e-12)

    def test_hessian_of_quadratics(self):
        rng = np.random.default_rng(3)
        domain = make_domain("square", h=1 / 16)
        assembled = assemble_fd(gradient(2, 2), domain)
        for _ in range(5):
            c = rng.standard_normal(6)
            u = GridFunction.from_callable(domain, lambda p: c[0] + c[1] * p[:, 0] + c[2] * p[:, 1]
                                           + c[3] * p[:, 0] ** 2 + c[4] * p[:, 0] * p[:, 1] + c[5] * p[:, 1] ** 2)
            image = assembled.image(assembled.to_vector(u))[:, assembled.rows]
            expected = [2 * c[3], np.sqrt(2) * c[4], 2 * c[5]]
            for row, value in zip(image, expected):
                np.testing.assert_allclose(row, value, atol=1e-9)

    def test_matches_grid_application(self):
        domain = make_domain("lshape", h=1 / 16)
        rng = np.random.default_rng(0)
        values = np.zeros((2,) + domain.shape)
        values[:, domain.mask] = rng.standard_normal((2, int(domain.mask.sum())))
        u = GridFunction(domain, values)
        assembled = assemble_fd(sym_grad(2), domain)
        direct, valid = apply_operator(sym_grad(2), u)
        np.testing.assert_array_equal(valid, assembled.rows)
        np.testing.assert_allclose(assembled.image(assembled.to_vector(u)), direct, atol=1e-10)

    def test_domain_too_thin(self):
        with self.assertRaises(DomainTooThin):
            assemble_fd(gradient(2, 2), block(2))

    def test_dirichlet_mode_drops_boundary_layer(self):
        domain = block(8)
        full = assemble_fd(sym_grad(2), domain)
        zeroed = assemble_fd(sym_grad(2), domain, dirichlet=True)
        self.assertEqual(int(zeroed.dofs.sum()), 36)
        self.assertTrue(np.all(full.dofs[zeroed.dofs]))


class NormTests(SimpleTestCase):
    def setUp(self):
        self.density = np.abs(np.random.default_rng(1).standard_normal(400))
        self.volume = 1 / 400

    def test_lorentz_diagonal_equals_lebesgue(self):
        for p in (1.5, 2.0, 3.0):
            self.assertAlmostEqual(lorentz_norm(self.density, self.volume, p, p) /
                                   weighted_lp(self.density, self.volume, p), 1.0, delta=1e-8)

    def test_orlicz_power_reproduces_lebesgue(self):
        phi = OrliczFunction(p=3.0, beta=0.0)
        self.assertAlmostEqual(phi.modular(self.density, self.volume),
                               weighted_lp(self.density, self.volume, 3.0) ** 3, delta=1e-12)
        self.assertAlmostEqual(phi.luxemburg(self.density, self.volume) /
                               weighted_lp(self.density, self.volume, 3.0), 1.0, delta=1e-10)

    def test_logarithmic_orlicz_satisfies_doubling(self):
        checks = OrliczFunction(p=2.0, beta=1.0).check()
        self.assertLess(checks["delta2"], 8.0)
        self.assertGreater(checks["nabla2"], 1.0)

    def test_invalid_orlicz(self):
        with self.assertRaises(InvalidOrlicz):
            OrliczFunction(p=1.0, beta=0.5).check()
        with self.assertRaises(InvalidOrlicz):
            OrliczFunction(p=2.0, beta=2.0)
        with self.assertRaises(MalformedSpec):
            NormSpec.build(p=2.0, lorentz=2.0, orlicz_beta=0.5)


class KornConstantTests(SimpleTestCase):
    def test_gradient_constant_tends_to_one(self):
        result = korn_constant_p2(gradient(2, 1), block(16))
        self.assertGreater(result.C, 0.99)
        self.assertLessEqual(result.C, 1.0)

    def test_witness_achieves_quotient(self):
        result = korn_constant_p2(sym_grad(2), "square", h=1 / 8)
        self.assertAlmostEqual(result.witness_quotient / result.C, 1.0, delta=1e-6)
        self.assertGreaterEqual(result.C_unscaled, 0.0)

    def test_dense_and_iterative_agree(self):
        agreement = eigensolver_agreement(sym_grad(2), make_domain("square", h=1 / 8))
        self.assertLess(agreement["relative"], 1e-6)

    def test_symmetric_gradient_is_refinement_stable(self):
        rows = korn_sweep(sym_grad(2), "square", [1 / 8, 1 / 16, 1 / 32])
        values = [row["C"] for row in rows]
        self.assertLess(max(values) / min(values), 1.1)

    def test_deviatoric_gradient_blows_up(self):
        rows = korn_sweep(dev_sym_grad(2), "square", parse_steps("1/16,1/32,1/64"))
        for coarse, fine in zip(rows, rows[1:]):
            self.assertGreaterEqual(fine["growth"], 1.5)
            self.assertGreater(fine["C"], coarse["C"])

    def test_holomorphic_witnesses(self):
        rows = holomorphic_witnesses(dev_sym_grad(2), make_domain("square", h=1 / 32))
        self.assertTrue(all(row["op_exact_zero"] for row in rows))
        self.assertTrue(all(row["op_residual"] <= 1e-10 for row in rows))
        quotients = [row["quotient"] for row in rows]
        self.assertTrue(all(b > a for a, b in zip(quotients, quotients[1:])))

    def test_restricted_family_is_lower_bound(self):
        result = nested_monotonicity(sym_grad(2), make_domain("lshape", h=1 / 8))
        self.assertTrue(result["monotone"])

    def test_parse_steps(self):
        self.assertEqual(parse_steps("1/16, 1/32"), [0.0625, 0.03125])
        with self.assertRaises(MalformedSpec):
            parse_steps("1/0")


class SampledKornTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.op = sym_grad(2)
        cls.profile = c_ellipticity(cls.op, max_degree=4)
        cls.domain = make_domain("square", h=1 / 16)
        cls.P = build_projection(cls.op, central_ball(cls.domain), cls.profile)

    def test_kernel_noise_tracks_noise(self):
        family = field_family(self.op, self.domain, self.profile, count=3, seed=5)
        smooth = family[0][1]
        kernel = GridFunction.from_polynomial(self.domain, self.profile.kernel_basis[0])
        result = korn_constant_sampled(self.op, self.domain, self.profile, projection=self.P,
                                       family=[("smooth", smooth), ("kernel_noise", kernel + smooth.scale(1e-6))])
        first, second = (row["ratio"] for row in result["ratios"])
        self.assertAlmostEqual(second / first, 1.0, delta=1e-4)

    def test_lorentz_diagonal_matches_lebesgue(self):
        family = field_family(self.op, self.domain, self.profile, count=6, seed=1)
        plain = korn_constant_sampled(self.op, self.domain, self.profile, projection=self.P, family=family)
        lorentz = korn_constant_sampled(self.op, self.domain, self.profile, projection=self.P, family=family,
                                        norm=NormSpec.build(p=2.0, lorentz=2.0))
        self.assertAlmostEqual(lorentz["C"] / plain["C"], 1.0, delta=1e-8)

    def test_weighted_ratios_are_bounded(self):
        weight = Weight.power(0.5, (0.5, 0.5))
        result = korn_constant_sampled(self.op, self.domain, self.profile, projection=self.P, count=9, seed=2,
                                       norm=NormSpec.build(p=3.0), weight=weight)
        ratios = [row["ratio"] for row in result["ratios"] if row["ratio"] != EXACT]
        self.assertTrue(all(np.isfinite(ratios)))

    def test_orlicz_modular_with_power(self):
        family = field_family(self.op, self.domain, self.profile, count=3, seed=4)
        plain = korn_constant_sampled(self.op, self.domain, self.profile, projection=self.P, family=family,
                                      norm=NormSpec.build(p=2.0))
        orlicz = korn_constant_sampled(self.op, self.domain, self.profile, projection=self.P, family=family,
                                       norm=NormSpec(kind="orlicz", p=2.0, orlicz=OrliczFunction(p=2.0)))
        for a, b in zip(plain["ratios"], orlicz["ratios"]):
            self.assertAlmostEqual(b["modular_ratio"] / a["ratio"] ** 2, 1.0, delta=1e-10)

    def test_kernel_fields_are_exact(self):
        u = GridFunction.from_polynomial(self.domain, self.profile.kernel_basis[-1])
        result = poincare_and_bestapprox(self.op, self.P, self.domain, u, ell=1)
        self.assertEqual(result["poincare_ratio"], EXACT)
        self.assertEqual(result["bestapprox_ratio"], EXACT)

    def test_best_approximation_ratio_at_least_one(self):
        for _, u in field_family(self.op, self.domain, self.profile, count=6, seed=9):
            for ell in (0, 1):
                result = poincare_and_bestapprox(self.op, self.P, self.domain, u, ell=ell)
                self.assertGreaterEqual(result["bestapprox_ratio"], 1 - 1e-9)
                self.assertTrue(np.isfinite(result["poincare_ratio"]))


class InterpolationTests(SimpleTestCase):
    def setUp(self):
        self.op = gradient(2, 2)
        self.domain = make_domain("square", h=1 / 128)

    def test_scale_invariance(self):
        base = interpolation_check(self.op, bump_field(self.domain, (0.5, 0.5), 0.2), 1)["ratio"]
        for radius in (0.1, 0.4):
            ratio = interpolation_check(self.op, bump_field(self.domain, (0.5, 0.5), radius), 1)["ratio"]
            self.assertAlmostEqual(ratio / base, 1.0, delta=0.05)

    def test_bump_family_spread(self):
        ratios = []
        for index in range(20):
            radius = 0.12 + 0.01 * index
            aspect = 1.0 + 0.05 * (index % 5)
            u = bump_field(self.domain, (0.5, 0.5), radius, aspect=aspect,
                           factor=lambda p, a=index: 1 + 0.5 * np.sin(a) * (p[:, 0] - 0.5) / radius)
            ratios.append(interpolation_check(self.op, u, 1)["ratio"])
        self.assertLessEqual(max(ratios) / min(ratios), 3.0)

    def test_kernel_times_cutoff_is_finite(self):
        u = bump_field(self.domain, (0.5, 0.5), 0.3, factor=lambda p: 1 + 2 * p[:, 0] - p[:, 1])
        self.assertTrue(np.isfinite(interpolation_check(self.op, u, 1)["ratio"]))

    def test_zero_field(self):
        with self.assertRaises(ZeroDenominator):
            interpolation_check(self.op, GridFunction.zeros(self.domain, 1), 1)

    def test_field_touching_the_edge(self):
        with self.assertRaises(MalformedSpec):
            interpolation_check(self.op, GridFunction.from_callable(self.domain, lambda p: p[:, 0]), 1)


class MultiplierTests(SimpleTestCase):
    def setUp(self):
        self.box = periodic_box(2, 64)

    def test_gradient_riesz_identity(self):
        u = bump_field(self.box, (0.5, 0.5), 0.3)
        for alpha in ((1, 0), (0, 1)):
            self.assertLess(multiplier_reconstruction(gradient(2, 1), u, alpha)["relative"], 1e-8)

    def test_symmetric_gradient(self):
        u = bump_field(self.box, (0.4, 0.55), 0.3, dim=2, factor=lambda p: 1 + p[:, 0])
        self.assertLess(multiplier_reconstruction(sym_grad(2), u, (1, 0))["relative"], 1e-6)

    def test_hessian(self):
        u = bump_field(self.box, (0.5, 0.5), 0.3)
        self.assertLess(multiplier_reconstruction(gradient(2, 2), u, (2, 0))["relative"], 1e-6)

    def test_partial_is_not_elliptic(self):
        u = bump_field(self.box, (0.5, 0.5), 0.3)
        with self.assertRaises(NotElliptic):
            multiplier_reconstruction(partial(0, 2), u, (1, 0))
