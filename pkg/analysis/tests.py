import numpy as np
from django.test import SimpleTestCase

from analysis.services.besov import (
    BesovParams,
    besov_norm_lp,
    besov_norm_osc,
    oscillation,
    partition_defect,
    trace_besov_params,
)
from analysis.services.maximal import (
    Weight,
    cz_decomposition,
    cz_nested,
    cz_properties,
    fefferman_stein_check,
    maximal,
    muckenhoupt_constant,
)
from analysis.services.trace import (
    bump_family,
    halfspace_trace_experiment,
    harmonic_family,
    nonelliptic_blowup_family,
    ratio_spread,
    strip_domain,
    trace_ratio,
    translation_check,
)
from analysis.tasks import function_from_json, function_to_json, trace_ratio_task, trace_rows
from core.exceptions import (
    FileError,
    MalformedSpec,
    NonPowerOfTwoGrid,
    NotCElliptic,
    OrderTooLow,
    ThresholdTooSmall,
    WitnessInvalid,
)
from core.services.grid import GridFunction
from core.services.operators import builtin, gradient, laplacian
from geometry.services.decomposition import MomentSubspace
from geometry.services.domains import make_domain, periodic_box


def random_field(domain, seed=0, dim=1):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(dim,) + domain.shape) * domain.mask[None]
    return GridFunction(domain, values)


class WeightTests(SimpleTestCase):
    def test_parse(self):
        self.assertEqual(Weight.parse("unit"), Weight.unit())
        weight = Weight.parse("power:a=0.5,cx=0.25", 2)
        self.assertEqual(weight.describe(), {"kind": "power", "a": 0.5, "center": [0.25, 0.0]})

    def test_parse_errors(self):
        for text in ("power:b=1", "power:a=1,cz=2", "lorem"):
            with self.assertRaises(MalformedSpec, msg=text):
                Weight.parse(text, 2)
        with self.assertRaises(FileError):
            Weight.parse("file:/nonexistent/weight.npy")
        with self.assertRaises(MalformedSpec):
            Weight.custom(np.zeros((4, 4)))

    def test_power_weight_vanishes_at_vertex(self):
        domain = make_domain("square", {}, 1 / 8)
        values = Weight.power(1.0, (0.5, 0.5)).values(domain)
        self.assertAlmostEqual(float(values.min()), np.sqrt(2) / 16, places=12)


class MaximalTests(SimpleTestCase):
    def setUp(self):
        self.domain = make_domain("lshape", {}, 1 / 16)
        self.f = random_field(self.domain, seed=4)

    def test_hl_of_constant_on_full_box(self):
        box = make_domain("square", {}, 1 / 16)
        one = GridFunction(box, np.ones((1,) + box.shape))
        np.testing.assert_allclose(maximal(one).values, 1.0)

    def test_sharp_is_below_restricted(self):
        subspace = MomentSubspace.constants(2)
        restricted = maximal(self.f, "restricted", sigma=2.0)
        sharp = maximal(self.f, "sharp", sigma=2.0, subspace=subspace)
        self.assertTrue(np.all(sharp.values <= restricted.values + 1e-12))
        self.assertEqual(sharp.empty_points, restricted.empty_points)

    def test_sharp_vanishes_on_the_subspace(self):
        const = GridFunction(self.domain, np.where(self.domain.mask, 2.5, 0.0)[None])
        sharp = maximal(const, "sharp", sigma=1.0, subspace=MomentSubspace.constants(2))
        self.assertLess(float(sharp.values.max()), 1e-10)

    def test_invalid_variants(self):
        with self.assertRaises(MalformedSpec):
            maximal(self.f, "centered")
        with self.assertRaises(MalformedSpec):
            maximal(self.f, "restricted", sigma=0.5)
        with self.assertRaises(MalformedSpec):
            maximal(self.f, "sharp")


class MuckenhouptTests(SimpleTestCase):
    def test_unit_weight(self):
        self.assertEqual(muckenhoupt_constant(Weight.unit(), 2.0, depth=4), 1.0)

    def test_power_weight_is_stable_under_refinement(self):
        weight = Weight.power(0.5, (0.0, 0.0))
        coarse = muckenhoupt_constant(weight, 2.0, depth=5)
        fine = muckenhoupt_constant(weight, 2.0, depth=6)
        self.assertGreater(coarse, 1.0)
        self.assertLess(abs(fine - coarse) / coarse, 0.1)

    def test_exponent_outside_range_grows(self):
        weight = Weight.power(3.0, (0.0, 0.0))
        self.assertGreater(muckenhoupt_constant(weight, 2.0, depth=6), muckenhoupt_constant(weight, 2.0, depth=4))


class CalderonZygmundTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(9)
        self.density = rng.exponential(size=(32, 32)) ** 2

    def test_properties(self):
        alpha = 2 * self.density.mean()
        cubes = cz_decomposition(self.density, alpha)
        self.assertTrue(cubes)
        self.assertEqual(cz_properties(self.density, alpha, cubes), {"a": True, "b": True, "c": True, "d": True,
                                                                      "e": True})

    def test_higher_threshold_is_nested(self):
        mean = self.density.mean()
        coarse = cz_decomposition(self.density, 2 * mean)
        fine = cz_decomposition(self.density, 4 * mean)
        self.assertTrue(cz_nested(coarse, fine))

    def test_threshold_and_shape(self):
        with self.assertRaises(ThresholdTooSmall):
            cz_decomposition(self.density, 0.5 * self.density.mean())
        with self.assertRaises(MalformedSpec):
            cz_decomposition(np.ones((24, 24)), 2.0)


class FeffermanSteinTests(SimpleTestCase):
    def setUp(self):
        self.domain = make_domain("square", {}, 1 / 16)

    def test_constants_are_exact(self):
        const = GridFunction(self.domain, np.full((1,) + self.domain.shape, 1.5))
        result = fefferman_stein_check(const, MomentSubspace.constants(2))
        self.assertTrue(result["exact"])
        self.assertIsNone(result["ratio"])

    def test_ratio_is_bounded(self):
        result = fefferman_stein_check(random_field(self.domain, seed=1), MomentSubspace.constants(2),
                                       weight=Weight.parse("power:a=0.5,cx=0.5,cy=0.5"))
        self.assertFalse(result["exact"])
        self.assertGreater(result["ratio"], 0)
        self.assertTrue(np.isfinite(result["ratio"]))


class BesovTests(SimpleTestCase):
    def setUp(self):
        self.line = periodic_box(1, 64)
        x = self.line.centers[..., 0]
        self.f = GridFunction(self.line, np.sin(2 * np.pi * x)[None] + 0.3 * np.cos(6 * np.pi * x)[None])

    def test_params_validation(self):
        for kwargs in ({"s": 0}, {"s": 1, "p": 0.5}, {"s": 1.5, "M": 1}, {"s": 1, "ratio": 3}):
            with self.assertRaises(MalformedSpec, msg=str(kwargs)):
                BesovParams(**kwargs)
        self.assertEqual(BesovParams(s=1.5).M, 2)

    def test_oscillation_vanishes_on_polynomials(self):
        domain = make_domain("square", {}, 1 / 32)
        affine = GridFunction.from_callable(domain, lambda p: 1 + 2 * p[:, 0] - p[:, 1])
        self.assertLess(oscillation(affine, (0.5, 0.5), 0.2, M=2, p=2.0), 1e-10)

    def test_osc_norm_is_homogeneous(self):
        params = BesovParams(s=0.5, p=2.0, q=2.0)
        single = besov_norm_osc(self.f, params)
        triple = besov_norm_osc(GridFunction(self.line, 3 * self.f.values), params)
        self.assertAlmostEqual(triple.value / single.value, 3.0, places=8)
        self.assertTrue(single.scales)

    def test_littlewood_paley(self):
        self.assertLess(partition_defect(periodic_box(2, 32)), 1e-12)
        params = BesovParams(s=0.5, p=2.0, q=2.0)
        value = besov_norm_lp(self.f, params)["value"]
        self.assertGreater(value, 0)
        with self.assertRaises(NonPowerOfTwoGrid):
            partition_defect(periodic_box(1, 48))

    def test_trace_params(self):
        params = trace_besov_params(2, periodic_box(1, 64))
        self.assertEqual((params.s, params.p, params.q, params.M), (1, 1.0, 1.0, 2))
        with self.assertRaises(MalformedSpec):
            trace_besov_params(1, periodic_box(1, 64))


class TraceTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.op = gradient(2, 2)
        cls.bumps = bump_family(dim=1, count=4)
        cls.ratios = halfspace_trace_experiment(cls.op, cls.bumps, cells=128)

    def test_bump_ratios_are_bounded(self):
        for ratio in self.ratios:
            self.assertFalse(ratio.exact)
            self.assertTrue(np.isfinite(ratio.ratio))
        self.assertLessEqual(ratio_spread(self.ratios, "bumps"), 5.0)

    def test_translation_invariance(self):
        self.assertLessEqual(translation_check(self.op, self.bumps[0], 0.125, cells=128), 1e-8)

    def test_harmonic_family_is_finite(self):
        ratios = halfspace_trace_experiment(self.op, harmonic_family(degrees=(1, 2)), cells=128)
        self.assertTrue(all(np.isfinite(r.ratio) for r in ratios))

    def test_first_order_is_rejected(self):
        with self.assertRaises(OrderTooLow):
            halfspace_trace_experiment(gradient(2, 1), self.bumps, cells=64)

    def test_operator_must_be_c_elliptic(self):
        with self.assertRaises(NotCElliptic):
            halfspace_trace_experiment(laplacian(2), self.bumps, cells=64)

    def test_task_matches_direct_computation(self):
        u = self.bumps[1]
        self.assertEqual(function_from_json(function_to_json(u)).components, u.components)
        row = trace_ratio_task(self.op.to_spec(), function_to_json(u), 64)
        direct = trace_ratio(self.op, u, strip_domain(64))
        self.assertAlmostEqual(row["ratio"], direct.ratio, places=12)
        self.assertEqual(row["cells"], 64)
        self.assertEqual(len(trace_rows(self.op, self.bumps[:2], 64)), 2)


class BlowupTests(SimpleTestCase):
    def test_boundary_norm_grows_for_non_elliptic_operator(self):
        rows = nonelliptic_blowup_family(builtin("partial1_2d"), xi=(0.0, 1.0), v=(1.0,), js=range(2, 5))
        interiors = [row["interior"] for row in rows]
        self.assertLessEqual(max(interiors) / min(interiors), 1.1)
        for row in rows[1:]:
            self.assertGreaterEqual(row["growth"], 1.5)

    def test_operator_vanishes_on_the_family(self):
        rows = nonelliptic_blowup_family(builtin("partial1_2d"), xi=(0.0, 1.0), v=(1.0,), js=range(2, 5), p=2.0, q=4.0)
        for row in rows:
            self.assertLessEqual(row["operator_norm"], 1e-10)
            self.assertGreater(row["interior"], row["operator_norm"])

    def test_witness_must_be_in_kernel_of_symbol(self):
        with self.assertRaises(WitnessInvalid):
            nonelliptic_blowup_family(builtin("partial1_2d"), xi=(1.0, 0.0), v=(1.0,))

    def test_planar_only(self):
        with self.assertRaises(MalformedSpec):
            nonelliptic_blowup_family(builtin("sym_grad_3d"), xi=(1.0, 0.0, 0.0), v=(0.0, 0.0, 1.0))
