import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase, TestCase

from core.models import CVerdict
from core.services.operators import builtin
from core.services.poly import make_operator
from reports.models import ExperimentRun
from reports.services.gallery import GALLERY, write_gallery
from reports.services.report import Report, clean
from reports.services.runner import load_operator, parse_params, run


class ReportTests(SimpleTestCase):
    def test_clean_converts_numpy_and_non_finite(self):
        data = clean({"a": np.float64(1.5), "b": np.int64(3), "c": float("inf"), "d": [np.nan, (1, 2)],
                      "e": np.array([True, False])})
        self.assertEqual(data, {"a": 1.5, "b": 3, "c": "inf", "d": ["nan", [1, 2]], "e": [True, False]})

    def test_exit_codes(self):
        report = Report("analyze")
        report.check("ok", True)
        self.assertEqual(report.exit_code, 0)
        report.undecided = True
        self.assertEqual(report.exit_code, 2)
        report.check("broken", False, value=2.0, tolerance=1.0)
        self.assertEqual(report.exit_code, 1)

    def test_error_fails_report(self):
        report = Report("korn", error="FileError: нет файла")
        self.assertFalse(report.passed)
        self.assertEqual(report.to_json()["error"], "FileError: нет файла")

    def test_dumps_is_sorted_and_has_no_timestamps(self):
        report = Report("maximal", inputs={"seed": 3, "domain": "square"}, metrics={"z": 1, "a": 0.1})
        text = report.dumps()
        data = json.loads(text)
        self.assertEqual(list(data), sorted(data))
        self.assertEqual(data["metrics"], {"a": 0.1, "z": 1})
        self.assertNotIn("created", text)

    def test_csv_columns_are_union_of_keys(self):
        report = Report("trace", rows=[{"function_id": "b0", "ratio": 0.5}, {"function_id": "b1", "exact": True}])
        with tempfile.TemporaryDirectory() as tmp:
            path = report.write_csv(Path(tmp) / "rows.csv")
            lines = path.read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], "function_id,ratio,exact")
        self.assertEqual(lines[1], "b0,0.5,")


class GalleryTests(SimpleTestCase):
    def test_files_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_gallery(tmp)
            self.assertEqual(len(paths), 9)
            for path in paths:
                data = json.loads(path.read_text(encoding="utf-8"))
                op = make_operator(data)
                self.assertEqual(op.spec_hash, builtin(data["name"]).spec_hash, path.name)

    def test_expected_verdicts(self):
        expected = {filename: verdict for filename, _, verdict, _ in GALLERY}
        self.assertEqual(expected["grad_eps_dev_3d.json"], CVerdict.C_ELLIPTIC)
        self.assertEqual(expected["eps_dev_3d.json"], CVerdict.C_ELLIPTIC)
        self.assertEqual(expected["eps_dev_2d.json"], CVerdict.NOT_C_ELLIPTIC)
        self.assertEqual(expected["laplace_2d.json"], CVerdict.NOT_C_ELLIPTIC)

    def test_coefficients_are_exact_strings(self):
        with tempfile.TemporaryDirectory() as tmp:
            write_gallery(tmp)
            data = json.loads((Path(tmp) / "sym_grad_2d.json").read_text(encoding="utf-8"))
        entries = {entry for term in data["terms"] for row in term["matrix"] for entry in row}
        self.assertIn("sqrt(2)/2", entries)


class RunnerTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        write_gallery(self.dir / "gallery")

    def tearDown(self):
        self.tmp.cleanup()

    def op(self, name):
        return str(self.dir / "gallery" / f"{name}.json")

    def report(self, name):
        return json.loads((self.dir / name).read_text(encoding="utf-8"))

    def test_analyze_symmetric_gradient(self):
        code = run(["analyze", "--op", self.op("sym_grad_2d"), "--out", self.dir / "a.json"])
        self.assertEqual(code, 0)
        report = self.report("a.json")
        self.assertEqual(report["metrics"]["verdict"], "c_elliptic")
        self.assertEqual(report["metrics"]["deg_p"], 2)
        self.assertEqual(report["metrics"]["kernel_dimension"], 3)
        self.assertTrue(report["pass"])

    def test_analyze_deviatoric_gradient_has_witness(self):
        code = run(["analyze", "--op", self.op("eps_dev_2d"), "--out", self.dir / "w.json"])
        self.assertEqual(code, 0)
        report = self.report("w.json")
        self.assertEqual(report["metrics"]["verdict"], "not_c_elliptic")
        names = [check["name"] for check in report["checks"]]
        self.assertIn("ellipticity: witness soundness", names)

    def test_missing_operator_file(self):
        code = run(["analyze", "--op", self.dir / "missing.json", "--out", self.dir / "m.json"])
        self.assertEqual(code, 1)
        self.assertTrue(self.report("m.json")["error"].startswith("FileError"))

    def test_usage_errors(self):
        self.assertEqual(run(["integrate"]), 1)
        self.assertEqual(run([]), 1)
        self.assertEqual(run(["korn", "--p", "two"]), 1)

    def test_reports_are_byte_identical(self):
        argv = ["maximal", "--h", "1/16", "--trials", "3", "--seed", "7"]
        first_code = run(argv + ["--out", self.dir / "first.json"])
        self.assertEqual(run(argv + ["--out", self.dir / "second.json"]), first_code)
        first = (self.dir / "first.json").read_bytes()
        self.assertIn(b"maximal_weights: CZ (e)", first)
        self.assertEqual(first, (self.dir / "second.json").read_bytes())

    def test_korn_constants_increase_for_deviatoric_gradient(self):
        code = run(["korn", "--op", self.op("eps_dev_2d"), "--domain", "square", "--h", "1/16,1/32", "--p", "2",
                    "--out", self.dir / "k.json", "--csv", self.dir / "k.csv"])
        self.assertEqual(code, 0)
        constants = [row["C"] for row in self.report("k.json")["metrics"]["constants"]]
        self.assertGreater(constants[1], constants[0])
        dichotomy = next(check for check in self.report("k.json")["checks"] if "growing constants" in check["name"])
        self.assertTrue(dichotomy["pass"])
        self.assertEqual(dichotomy["tolerance"], 1.5)
        self.assertEqual(len((self.dir / "k.csv").read_text(encoding="utf-8").splitlines()), 3)

    def test_domains_on_lshape(self):
        code = run(["domains", "--domain", "lshape", "--h", "1/32", "--out", self.dir / "d.json"])
        self.assertEqual(code, 0)
        report = self.report("d.json")
        self.assertTrue(all(check["pass"] for check in report["checks"]))
        self.assertGreater(report["metrics"]["chains"]["cubes"], 1)

    def test_not_c_elliptic_projection_fails(self):
        code = run(["project", "--op", self.op("laplace_2d"), "--out", self.dir / "p.json"])
        self.assertEqual(code, 1)
        self.assertTrue(self.report("p.json")["error"].startswith("NotCElliptic"))

    def test_builtin_prefix_and_params(self):
        self.assertEqual(load_operator("builtin:grad_2d").k, 1)
        self.assertEqual(parse_params(["side=2,length=0.5", "iter=2"]), {"side": "2", "length": "0.5", "iter": "2"})

    def test_non_finite_metrics_are_strings(self):
        report = Report("korn", metrics={"growth": math.inf})
        self.assertEqual(json.loads(report.dumps())["metrics"]["growth"], "inf")


class ExperimentRunTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_recorded_run(self):
        code = run(["analyze", "--op", "builtin:grad_2d", "--record", "--out", self.dir / "r.json"])
        self.assertEqual(code, 0)
        record = ExperimentRun.objects.get()
        self.assertEqual(record.status, ExperimentRun.Status.DONE)
        self.assertEqual(record.exit_code, 0)
        self.assertEqual(record.progress_percent(), 100)
        self.assertEqual(record.report["metrics"]["verdict"], "c_elliptic")

    def test_failed_run_is_marked(self):
        code = run(["analyze", "--op", self.dir / "nope.json", "--record", "--out", self.dir / "f.json"])
        self.assertEqual(code, 1)
        record = ExperimentRun.objects.get()
        self.assertEqual(record.status, ExperimentRun.Status.FAILED)
        self.assertIn("FileError", record.error)

    def test_management_command(self):
        call_command("ellikorn", "gallery", "--out", str(self.dir / "g"))
        self.assertEqual(len(list((self.dir / "g").glob("*.json"))), 10)
