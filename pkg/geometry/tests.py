import numpy as np
from django.test import SimpleTestCase
from scipy import ndimage

from analysis.services.maximal import Weight
from core.exceptions import DimensionMismatch, DisconnectedMask, EmptyMask, MalformedSpec, ScaleTooFine
from core.services.ellipticity import c_ellipticity
from core.services.grid import GridDomain, GridFunction
from core.services.operators import gradient, sym_grad
from core.services.poly import VPolynomial
from geometry.services.chains import check_chain_properties, emanating_chains, whitney_cover
from geometry.services.decomposition import (
    MomentSubspace,
    decompose,
    moment_projection,
    moment_stability,
    moments,
    remove_moments,
    verify_decomposition,
)
from geometry.services.domains import KINDS, _inside_polygon, _koch_polygon, make_domain, periodic_box
from geometry.services.replacement import ProjectionBuilder, replacement_sequence, smoothstep
from geometry.tasks import MIN_SIDE, decomposition_trials, moment_free_field


def chains_on(kind, params=None, h=1 / 32, sigma1=2.0):
    domain = make_domain(kind, params, h)
    return domain, emanating_chains(whitney_cover(domain, min_side=MIN_SIDE), domain, sigma1=sigma1)


class DomainTests(SimpleTestCase):
    def test_all_kinds_build(self):
        for kind in KINDS:
            domain = make_domain(kind, {}, 1 / 32)
            self.assertGreater(domain.mask.sum(), 0, kind)
            self.assertEqual(domain.kind, kind)

    def test_lshape_removes_a_quarter(self):
        domain = make_domain("lshape", {}, 1 / 32)
        self.assertEqual(int(domain.mask.sum()), 32 * 32 * 3 // 4)

    def test_strip_is_periodic_along_the_boundary(self):
        domain = make_domain("halfspace_strip", {"width": 1, "depth": 0.5}, 1 / 32)
        self.assertEqual(domain.periodic, (True, False))
        self.assertEqual(domain.shape, (32, 16))

    def test_periodic_box(self):
        box = periodic_box(2, 8)
        self.assertEqual(box.shape, (8, 8))
        self.assertEqual(box.periodic, (True, True))

    def test_snowflake_is_one_piece(self):
        for h in (1 / 32, 1 / 64, 1 / 128):
            domain = make_domain("snowflake", {}, h)
            self.assertEqual(domain.params["iter"], 3)
            x, y = domain.centers[..., 0], domain.centers[..., 1]
            polygon = _inside_polygon(x, y, _koch_polygon(3))
            self.assertEqual(ndimage.label(domain.mask)[1], 1, h)
            self.assertGreaterEqual(domain.mask.sum(), 0.9 * polygon.sum(), h)

    def test_invalid_domains(self):
        with self.assertRaises(MalformedSpec):
            make_domain("torus", {}, 1 / 32)
        with self.assertRaises(MalformedSpec):
            make_domain("square", {}, 0.0)
        with self.assertRaises(EmptyMask):
            make_domain("square", {"side": 0.1}, 0.5)
        with self.assertRaises(DisconnectedMask):
            make_domain("slit", {"length": 1.0}, 1 / 32)


class ChainCoverTests(SimpleTestCase):
    def test_whitney_cubes_keep_distance_from_boundary(self):
        for kind in ("disk", "lshape", "snowflake"):
            domain = make_domain(kind, {}, 1 / 32)
            cover = whitney_cover(domain, min_side=MIN_SIDE)
            self.assertGreater(len(cover), 1, kind)
            bounds = cover.whitney_bounds()
            self.assertGreaterEqual(min(bounds), 1, kind)
            self.assertLessEqual(max(bounds), 4, kind)
            self.assertFalse(np.any(cover.core_mask & ~domain.mask), kind)

    def test_conditions_hold_on_lshape_and_disk(self):
        for kind in ("lshape", "disk"):
            domain, cc = chains_on(kind)
            properties = check_chain_properties(cc, domain)
            for name in ("C1", "C2", "C3", "diam_ok"):
                self.assertTrue(properties[name], f"{kind}: {name}")
            self.assertEqual(properties["offending_cubes"], [])

    def test_conditions_hold_near_slit_and_fractal_boundary(self):
        for kind in ("slit", "snowflake"):
            domain, cc = chains_on(kind)
            properties = check_chain_properties(cc, domain)
            self.assertTrue(properties["C1"], kind)
            self.assertTrue(properties["C2"], kind)
            self.assertGreaterEqual(properties["sigma2"], 1.0)

    def test_chains_end_at_central_cube(self):
        _, cc = chains_on("lshape")
        for i, chain in enumerate(cc.chains):
            self.assertEqual(chain[0], i)
            self.assertEqual(chain[-1], cc.central)
        central = cc.cubes[cc.central]
        self.assertEqual(central.side, max(cube.side for cube in cc.cubes))

    def test_overlap_balls_between_neighbours(self):
        _, cc = chains_on("lshape")
        for chain in cc.chains:
            for a, b in zip(chain, chain[1:]):
                self.assertIn((a, b), cc.balls)

    def test_large_dilation_breaks_first_condition(self):
        domain, cc = chains_on("lshape", sigma1=10.0)
        properties = check_chain_properties(cc, domain)
        self.assertFalse(properties["C1"])
        self.assertTrue(properties["offending_cubes"])

    def test_single_block_is_one_chain(self):
        domain = GridDomain(n=2, h=1 / 8, mask=np.ones((8, 8), dtype=bool), origin=(0.0, 0.0), kind="block",
                            periodic=(True, True))
        cc = emanating_chains(whitney_cover(domain), domain)
        self.assertEqual(len(cc.cubes), 1)
        self.assertEqual(cc.chains, ((0,),))


class MomentTests(SimpleTestCase):
    def setUp(self):
        self.domain = make_domain("square", {}, 1 / 16)
        rng = np.random.default_rng(5)
        self.f = GridFunction(self.domain, rng.normal(size=(1,) + self.domain.shape))

    def test_remove_moments_of_affine_functions(self):
        x, y = (VPolynomial.monomial(2, 1, a, 0) for a in ((1, 0), (0, 1)))
        subspace = MomentSubspace.explicit([VPolynomial.monomial(2, 1, (0, 0), 0), x, y], tag="affine")
        self.assertEqual(len(subspace), 3)
        cleaned = remove_moments(self.f, subspace)
        self.assertLess(np.abs(moments(cleaned.values, self.domain, subspace)).max(), 1e-12)

    def test_explicit_drops_dependent_polynomials(self):
        one = VPolynomial.monomial(2, 1, (0, 0), 0)
        self.assertEqual(len(MomentSubspace.explicit([one, one])), 1)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            moment_projection(self.f, (8.0, 8.0), 4.0, MomentSubspace.constants(2, dim=2))

    def test_projection_is_linear(self):
        subspace = MomentSubspace.constants(2)
        single = moment_projection(self.f, (8.0, 8.0), 4.0, subspace, sigma2=1.5)
        doubled = GridFunction(self.domain, 2 * self.f.values)
        double = moment_projection(doubled, (8.0, 8.0), 4.0, subspace, sigma2=1.5)
        np.testing.assert_allclose(double.coeffs, 2 * single.coeffs, rtol=1e-12)

    def test_projection_is_stable(self):
        stability = moment_stability(self.f, (8.0, 8.0), 4.0, MomentSubspace.constants(2), sigma2=1.5)
        self.assertTrue(np.isfinite(stability))
        self.assertGreater(stability, 0)


class DecompositionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.domain, cls.cc = chains_on("lshape")
        cls.subspace = MomentSubspace.constants(2)
        f = moment_free_field(cls.domain, cls.subspace, cls.cc.cover.core_mask, seed=11, trial=0)
        cls.decomposition = decompose(f, cls.cc, cls.subspace)

    def test_pieces_sum_to_source(self):
        self.assertLessEqual(self.decomposition.reconstruction_error(), 1e-8)
        self.assertLessEqual(self.decomposition.order_spread(seed=1), 1e-10)

    def test_pieces_have_zero_moments_and_stay_in_cubes(self):
        self.assertLessEqual(max(self.decomposition.moment_errors()), 1e-9)
        self.assertEqual(self.decomposition.support_violations(), [])

    def test_norm_equivalence_is_finite(self):
        for weight in (Weight.unit(), Weight.parse("power:a=0.5", 2)):
            verified = verify_decomposition(self.decomposition, q=2.0, weight=weight)
            self.assertTrue(np.isfinite(verified["lower_ratio"]))
            self.assertTrue(np.isfinite(verified["upper_ratio"]))
            self.assertTrue(np.isfinite(verified["majorant_constant"]))

    def test_vector_valued_moments_of_rigid_motions(self):
        profile = c_ellipticity(sym_grad(2), max_degree=4)
        subspace = MomentSubspace.from_operator(sym_grad(2), profile, order=0)
        self.assertEqual(len(subspace), 3)
        f = moment_free_field(self.domain, subspace, self.cc.cover.core_mask, seed=2, trial=0)
        d = decompose(f, self.cc, subspace)
        self.assertLessEqual(d.reconstruction_error(), 1e-8)
        self.assertLessEqual(max(d.moment_errors()), 1e-9)

    def test_trials_through_celery(self):
        rows = decomposition_trials("lshape", {}, 1 / 32, self.subspace, trials=2, seed=3, weights=["unit"])
        self.assertEqual([row["trial"] for row in rows], [0, 1])
        for row in rows:
            self.assertLessEqual(row["reconstruction"], 1e-8)
            self.assertEqual(row["support_violations"], 0)
            self.assertIn("lower[unit]", row)


class ReplacementTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.op = gradient(2)
        cls.builder = ProjectionBuilder(cls.op, c_ellipticity(cls.op, max_degree=3))
        cls.strip = make_domain("halfspace_strip", {"width": 1, "depth": 1}, 1 / 32)

    def test_smoothstep_is_symmetric(self):
        t = np.linspace(-0.5, 1.5, 41)
        s = smoothstep(t, 2)
        np.testing.assert_allclose(s + smoothstep(1 - t, 2), 1.0, atol=1e-12)
        self.assertEqual(float(s[0]), 0.0)
        self.assertEqual(float(s[-1]), 1.0)

    def test_constants_are_left_in_place(self):
        u = GridFunction(self.strip, np.where(self.strip.mask, 2.0, 0.0)[None])
        result = replacement_sequence(u, self.op, self.builder, j=2)
        self.assertLessEqual(result.checks["telescope_error"], 1e-12)
        self.assertLessEqual(result.checks["sup_error"], 1e-9)
        self.assertLessEqual(result.checks["band_max"], 1e-9)

    def test_telescoping_for_a_bump(self):
        def bump(points):
            r2 = (points[:, 0] - 0.5) ** 2 + (points[:, 1] - 0.2) ** 2
            return np.clip(1 - r2 / 0.09, 0.0, None) ** 3

        u = GridFunction.from_callable(self.strip, bump)
        result = replacement_sequence(u, self.op, self.builder, j=2)
        self.assertLessEqual(result.checks["telescope_error"], 1e-12)
        self.assertTrue(np.isfinite(result.checks["second_ratio"]))
        self.assertGreater(result.checks["balls"], 0)

    def test_scale_limits(self):
        u = GridFunction.zeros(self.strip, 1)
        with self.assertRaises(ScaleTooFine):
            replacement_sequence(u, self.op, self.builder, j=5)
        with self.assertRaises(MalformedSpec):
            replacement_sequence(GridFunction.zeros(make_domain("square", {}, 1 / 32), 1), self.op, self.builder, j=2)
