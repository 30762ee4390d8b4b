"""End-to-end checks of the noisecouple CLI. Usage: cli_test.py PATH_TO_CLI"""

import csv
import hashlib
import io
import json
import os
import subprocess
import sys
import tempfile
import unittest

import numpy as np

CLI = None


def pair_correlations(report):
    cross = next(r for r in report["reports"] if r["check"] == "cross_covariance")
    return [s["value"] for s in cross["statistics"] if s["name"].startswith("pair_correlation")]


def read(path, mode="r"):
    with open(path, mode) as f:
        return f.read()


def write(path, data):
    with open(path, "w") as f:
        f.write(data)


def run(*args, cwd=None):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, cwd=cwd)


class CliTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.dir, name)

    def test_repulsive_rows_sum_to_zero(self):
        out = self.path("n.npy")
        r = run("sample", "--coupling", "repulsive", "--k", 3, "--dim", 16, "--seed", 7, "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        x = np.load(out)
        self.assertEqual(x.shape, (3, 16))
        self.assertEqual(x.dtype, np.float32)
        self.assertLess(np.abs(x.astype(np.float64).sum(axis=0)).max(), 1e-5)
        side = json.loads(read(out + ".json"))
        self.assertEqual(side["format_version"], 1)
        self.assertEqual(side["seed"], 7)
        self.assertEqual(side["spec"]["kind"], "repulsive")
        self.assertEqual(side["checksum"], hashlib.sha256(read(out, "rb")).hexdigest())
        for key in ("family", "version", "gaussian_transform"):
            self.assertIn(key, side["rng"])

    def test_infeasible_equicorrelation(self):
        r = run("sample", "--coupling", "equicorr", "--k", 3, "--c", -0.6, "--dim", 4, "--seed", 1,
                "--out", self.path("x.npy"))
        self.assertEqual(r.returncode, 2)
        self.assertIn("[-0.5, 1]", r.stderr)
        err = json.loads(r.stderr.strip().splitlines()[-1])
        self.assertEqual(err["exit_code"], 2)
        self.assertFalse(os.path.exists(self.path("x.npy")))

    def test_identical_rows(self):
        out = self.path("i.npy")
        r = run("sample", "--coupling", "identical", "--k", 2, "--dim", 8, "--seed", 3, "--out", out,
                "--dtype", "f64")
        self.assertEqual(r.returncode, 0, r.stderr)
        x = np.load(out)
        self.assertEqual(x.dtype, np.float64)
        np.testing.assert_array_equal(x[0], x[1])

    def test_image_shape(self):
        out = self.path("img.npy")
        r = run("sample", "--coupling", "repulsive", "--k", 3, "--shape", "4x8x8", "--seed", 0, "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(np.load(out).shape, (3, 4, 8, 8))
        bad = run("sample", "--coupling", "repulsive", "--k", 3, "--dim", 100, "--shape", "4x8x8", "--seed", 0,
                  "--out", self.path("bad.npy"))
        self.assertEqual(bad.returncode, 2)

    def test_matrix_and_subspace_files(self):
        m = self.path("a.json")
        write(m, json.dumps([[1, 0, 0], [0.6, 0.8, 0]]))
        out = self.path("m.npy")
        r = run("sample", "--coupling", "matrix", "--matrix", m, "--dim", 5, "--seed", 2, "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(np.load(out).shape, (2, 5))

    def test_unwritable_output(self):
        r = run("sample", "--coupling", "independent", "--k", 2, "--dim", 4, "--seed", 1,
                "--out", "/nonexistent-dir/x.npy")
        self.assertEqual(r.returncode, 3)

    def test_validate_repulsive(self):
        r = run("validate", "--coupling", "repulsive", "--k", 4, "--dim", 16, "--n", 200000, "--seed", 1)
        self.assertEqual(r.returncode, 0, r.stderr)
        report = json.loads(r.stdout)
        self.assertTrue(report["pass"])
        for v in pair_correlations(report):
            self.assertAlmostEqual(v, -1.0 / 3.0, delta=0.01)

    def test_validate_independent(self):
        r = run("validate", "--coupling", "independent", "--k", 3, "--dim", 8, "--n", 20000, "--seed", 2)
        self.assertEqual(r.returncode, 0, r.stderr)
        report = json.loads(r.stdout)
        self.assertTrue(report["pass"])
        for v in pair_correlations(report):
            self.assertLess(abs(v), 0.02)

    def test_validate_container_and_corruption(self):
        out = self.path("v.npy")
        self.assertEqual(run("sample", "--coupling", "repulsive", "--k", 3, "--dim", 16, "--seed", 5,
                             "--out", out).returncode, 0)
        ok = run("validate", "--in", out, "--n", 2000)
        self.assertEqual(ok.returncode, 0, ok.stderr)
        with open(out, "rb") as f:
            data = bytearray(f.read())
        data[-3] ^= 0x40
        with open(out, "wb") as f:
            f.write(bytes(data))
        bad = run("validate", "--in", out)
        self.assertEqual(bad.returncode, 4)
        self.assertEqual(json.loads(bad.stderr.strip().splitlines()[-1])["exit_code"], 4)

    def test_feasibility(self):
        r = run("feasibility", "--k", 5, "--c", -0.25)
        self.assertEqual(r.returncode, 0)
        rep = json.loads(r.stdout)
        self.assertEqual(rep["status"], "feasible")
        self.assertAlmostEqual(rep["interval"][0], -0.25)
        r = run("feasibility", "--k", 5, "--c", -0.3)
        self.assertEqual(json.loads(r.stdout)["status"], "infeasible")

    def test_analyze_separation(self):
        r = run("analyze", "--task", "separation", "--coupling", "repulsive", "--k", 2, "--linear-J", "identity",
                "--m", 2, "--n", 20000, "--seed", 0)
        self.assertEqual(r.returncode, 0, r.stderr)
        rep = json.loads(r.stdout)
        self.assertAlmostEqual(rep["bound"], 8.0)
        self.assertLess(abs(rep["estimate"]["mean"] - 8.0), 4 * rep["estimate"]["stderr"])

    def test_analyze_sweep_csv(self):
        r = run("analyze", "--task", "sweep", "--k", 3, "--linear-J", "identity", "--m", 4, "--n", 20000,
                "--seed", 0)
        self.assertEqual(r.returncode, 0, r.stderr)
        rows = list(csv.DictReader(io.StringIO(r.stdout)))
        self.assertEqual([float(x["c"]) for x in rows], [0.0, -0.125, -0.25, -0.375, -0.5])
        for row in rows:
            expect = 2 * (1 - float(row["c"])) * 4
            self.assertLess(abs(float(row["estimate"]) - expect), 4 * float(row["stderr"]))

    def test_analyze_rbf_and_effect(self):
        r = run("analyze", "--task", "rbf", "--coupling", "repulsive", "--k", 3, "--linear-J", "identity", "--m", 2,
                "--tau", 1, "--n", 20000, "--seed", 1)
        self.assertEqual(r.returncode, 0, r.stderr)
        rep = json.loads(r.stdout)
        self.assertAlmostEqual(rep["exact"], 0.25, places=12)
        r = run("analyze", "--task", "effect", "--coupling", "repulsive", "--k", 3, "--dim", 4, "--n", 2000,
                "--seed", 1)
        self.assertEqual(r.returncode, 0, r.stderr)
        rep = json.loads(r.stdout)
        self.assertAlmostEqual(rep["first_order"]["mean"], 12.0, places=6)

    def test_optimize_amortized_preset(self):
        out = self.path("traj.jsonl")
        r = run("optimize", "--task", "amortized", "--config", "pairwise_k4.json", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        rep = json.loads(r.stdout)
        g = np.array(rep["final_gram"])
        off = g[~np.eye(4, dtype=bool)]
        self.assertLess(np.abs(off + 1 / 3).max(), 0.05)
        lines = read(out).splitlines()
        self.assertEqual(len(lines), 1501)
        last = json.loads(lines[-1])
        a = np.array(last["a"]).reshape(last["rows"], last["cols"])
        np.testing.assert_allclose(a @ a.T, g, atol=1e-12)

    def test_optimize_refine_preset(self):
        out = self.path("refined.npy")
        r = run("optimize", "--task", "refine", "--config", "refine_linear.json", "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        rep = json.loads(r.stdout)
        self.assertTrue(rep["frozen_unchanged"])
        self.assertLessEqual(rep["loss_final"], 1e-6)
        x = np.load(out)
        self.assertLess(np.abs(x[:, 4:].sum(axis=0)).max(), 1e-12)

    def test_bad_config(self):
        cfg = self.path("bad.json")
        write(cfg, "{not json")
        r = run("optimize", "--task", "amortized", "--config", cfg)
        self.assertEqual(r.returncode, 2)
        json.loads(r.stderr.strip().splitlines()[-1])
        r = run("optimize", "--task", "amortized", "--config", self.path("missing.json"))
        self.assertEqual(r.returncode, 3)

    def test_export_matrix(self):
        out = self.path("a.json")
        r = run("export-matrix", "--spec", '{"kind": "equicorr", "k": 4, "d": 1, "c": -0.2}', "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        doc = json.loads(read(out))
        a = np.array(doc["matrix"] if isinstance(doc, dict) else doc)
        r_mat = np.full((4, 4), -0.2) + 1.2 * np.eye(4)
        np.testing.assert_allclose(a @ a.T, r_mat, atol=1e-10)
        # The exported matrix feeds straight back into `sample --matrix`.
        s = run("sample", "--coupling", "matrix", "--matrix", out, "--dim", 3, "--seed", 1, "--out", self.path("s.npy"))
        self.assertEqual(s.returncode, 0, s.stderr)

    def test_stdout_is_machine_readable(self):
        r = run("sample", "--coupling", "independent", "--k", 2, "--dim", 2, "--seed", 1, "--out", self.path("o.npy"))
        self.assertEqual(r.returncode, 0)
        if r.stdout.strip():
            json.loads(r.stdout)


if __name__ == "__main__":
    CLI = os.path.abspath(sys.argv.pop(1))
    unittest.main(verbosity=2)
