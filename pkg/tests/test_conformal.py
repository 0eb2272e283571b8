"""
Tests for nonconformity scores, the conformal quantile, MCP and GCP.
"""

import unittest
import math
import os
import sys
import tempfile
import shutil
from fractions import Fraction

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from src.conformal import (
    build_group_calibration, calibrate_marginal, conformal_quantile, conformal_rank, gcp_threshold,
    load_calibration, mcp_interval, predict_intervals_gcp, predict_intervals_mcp, read_intervals,
    save_calibration, score, scores, write_intervals,
)
from src.core import InteractionTable
from src.errors import ConfigError, DomainError, ValidationError
from src.evalx import coverage, subgroup_coverage
from src.models import CalibrationArtifact, QuantileThreshold


def expected_quantile(values, alpha):
    """k-th smallest value with k = ceil((1 - alpha)(n + 1)), or inf."""
    ordered = sorted(values)
    k = math.ceil((1 - Fraction(str(alpha))) * (len(ordered) + 1))
    return math.inf if k > len(ordered) else ordered[k - 1]


def exchangeable_table(n, seed, prefix="R"):
    """Rows with iid residuals; every row its own drug and protein."""
    rng = np.random.Generator(np.random.PCG64(seed))
    predictions = rng.standard_normal(n)
    labels = predictions + rng.standard_normal(n)
    ids = [f"{prefix}{i}" for i in range(n)]
    return InteractionTable.from_arrays(ids, ids, labels, predictions)


QUIET_PROTEINS = ["Q0", "Q1"]
NOISY_PROTEINS = ["N0", "N1"]


def two_noise_groups(rows_per_protein, seed, prefix="R"):
    """
    Prediction 0 with noise scale 1 on proteins Q0, Q1 and 5 on N0, N1.
    Every row has its own drug, so GCP falls back to the protein's scores.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    proteins, labels = [], []
    for protein in QUIET_PROTEINS + NOISY_PROTEINS:
        sigma = 1.0 if protein in QUIET_PROTEINS else 5.0
        proteins += [protein] * rows_per_protein
        labels.append(sigma * rng.standard_normal(rows_per_protein))
    ids = [f"{prefix}{i}" for i in range(len(proteins))]
    return InteractionTable.from_arrays(ids, proteins, np.concatenate(labels), np.zeros(len(proteins)))


class TestScoresAndQuantile(unittest.TestCase):
    """Scores and the finite-sample quantile"""

    def test_absolute_and_normalized_scores(self):
        self.assertEqual(score(3.0, 1.0), 2.0)
        self.assertEqual(score(1.0, 3.0, "NormalizedResidual", sigma=4.0), 0.5)
        with self.assertRaises(DomainError):
            score(1.0, 3.0, "NormalizedResidual")
        np.testing.assert_array_equal(scores([1.0, 2.0], [2.0, 2.0]), [1.0, 0.0])

    def test_rank(self):
        self.assertEqual(conformal_rank(9, 0.1), 9)
        self.assertEqual(conformal_rank(19, 0.1), 18)
        self.assertEqual(conformal_rank(99, 0.05), 95)

    def test_quantile_small_sample(self):
        """n=9 at alpha=0.1 takes the maximum; n=8 is unbounded"""
        self.assertEqual(conformal_quantile(range(1, 10), 0.1).value, 9.0)
        self.assertTrue(math.isinf(conformal_quantile(range(1, 9), 0.1).value))
        self.assertTrue(math.isinf(conformal_quantile([], 0.1).value))

    def test_quantile_matches_order_statistic(self):
        rng = np.random.Generator(np.random.PCG64(7))
        for n in (1, 5, 19, 20, 101):
            values = rng.exponential(size=n).tolist()
            for alpha in (0.05, 0.1, 0.15, 0.2, 0.5):
                result = conformal_quantile(values, alpha)
                self.assertEqual(result.value, expected_quantile(values, alpha))
                self.assertEqual(result.n_cal, n)

    def test_quantile_matches_brute_force_on_random_multisets(self):
        """The smallest q with enough scores at or below it, over 1000 random multisets with ties"""
        rng = np.random.Generator(np.random.PCG64(11))
        for _ in range(1000):
            n = int(rng.integers(0, 201))
            values = (rng.integers(0, 40, size=n) / 8.0).tolist()
            alpha = float(rng.uniform(0.01, 0.5))
            needed = (1 - Fraction(repr(alpha))) * (n + 1)
            oracle = next((q for q in sorted(set(values)) if sum(v <= q for v in values) >= needed), math.inf)
            self.assertEqual(conformal_quantile(values, alpha).value, oracle, f"n={n}, alpha={alpha!r}")

    def test_ties_are_kept(self):
        self.assertEqual(conformal_quantile([1.0, 1.0, 1.0, 1.0], 0.5).value, 1.0)

    def test_alpha_domain(self):
        for alpha in (0.0, 1.0, -0.1, 1.5):
            with self.assertRaises(DomainError):
                conformal_quantile([1.0], alpha)


class TestMarginalIntervals(unittest.TestCase):
    """MCP intervals"""

    def test_width_is_twice_threshold(self):
        """Dyadic values keep y_hat +/- q exact"""
        rng = np.random.Generator(np.random.PCG64(0))
        labels = rng.integers(-256, 256, size=40) / 64.0
        predictions = rng.integers(-256, 256, size=40) / 64.0
        cal = InteractionTable.from_arrays([f"D{i}" for i in range(40)], ["P"] * 40, labels, predictions)
        q = calibrate_marginal(cal, 0.1)
        test = InteractionTable.from_arrays(["T1", "T2"], ["P", "P"], [0.0, 0.0], [0.5, -1.25])
        batch = predict_intervals_mcp(test, q)
        np.testing.assert_array_equal(batch.upper - batch.lower, [2 * q.value, 2 * q.value])
        np.testing.assert_array_equal((batch.upper + batch.lower) / 2, [0.5, -1.25])

    def test_unbounded_threshold_gives_whole_line(self):
        interval = mcp_interval(1.0, QuantileThreshold(value=math.inf, n_cal=3, alpha=0.1))
        self.assertEqual((interval.lower, interval.upper), (-math.inf, math.inf))

    def test_sigma_must_match_kind(self):
        q = QuantileThreshold(value=1.0, n_cal=10, alpha=0.1)
        with self.assertRaises(ConfigError):
            mcp_interval(0.0, q, sigma=2.0)
        with self.assertRaises(ConfigError):
            mcp_interval(0.0, q, kind="NormalizedResidual")
        interval = mcp_interval(0.0, q, sigma=2.0, kind="NormalizedResidual")
        self.assertEqual((interval.lower, interval.upper), (-2.0, 2.0))

    def test_calibration_needs_predictions(self):
        cal = InteractionTable.from_arrays(["D1"], ["P1"], [1.0])
        with self.assertRaises(ValidationError):
            calibrate_marginal(cal, 0.1)

    def test_marginal_validity(self):
        """Observed coverage lands in the binomial window at 0.9 and 0.95 for at least 19 of 20 seeds"""
        windows = {0.1: (0.88, 0.92), 0.05: (0.935, 0.965)}
        for alpha, (low, high) in windows.items():
            inside = 0
            for seed in range(20):
                cal = exchangeable_table(2000, seed, "C")
                test = exchangeable_table(2000, 1000 + seed, "T")
                batch = predict_intervals_mcp(test.without_labels(), calibrate_marginal(cal, alpha))
                if low <= coverage(batch, test.labels) <= high:
                    inside += 1
            self.assertGreaterEqual(inside, 19, f"alpha={alpha}")

    def test_intervals_nest_as_alpha_decreases(self):
        cal = exchangeable_table(300, 5, "C")
        test = exchangeable_table(100, 6, "T").without_labels()
        previous = None
        for alpha in (0.5, 0.2, 0.1, 0.05, 0.01):
            batch = predict_intervals_mcp(test, calibrate_marginal(cal, alpha))
            if previous is not None:
                self.assertTrue((batch.lower <= previous.lower).all())
                self.assertTrue((batch.upper >= previous.upper).all())
            previous = batch


class TestGroupConditioned(unittest.TestCase):
    """GCP selection and fallbacks"""

    def setUp(self):
        # drug A: rows 0-2, protein X: rows 2-4; row 2 is (A, X)
        self.cal = InteractionTable.from_arrays(
            ["A", "A", "A", "B", "C", "D"],
            ["Y", "Z", "X", "X", "X", "W"],
            [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        )
        self.calib = build_group_calibration(self.cal, 0.5)

    def test_both_seen_uses_union_once(self):
        """Rows sharing the drug or the protein, the shared row counted once"""
        result = gcp_threshold(self.calib, "A", "X")
        self.assertEqual(result.n_cal, 5)
        self.assertEqual(result.value, expected_quantile([1.0, 2.0, 3.0, 4.0, 5.0], 0.5))

    def test_fallbacks(self):
        self.assertEqual(gcp_threshold(self.calib, "A", "new").n_cal, 3)
        self.assertEqual(gcp_threshold(self.calib, "new", "X").n_cal, 3)
        self.assertEqual(gcp_threshold(self.calib, "new", "new").n_cal, 6)
        self.assertEqual(gcp_threshold(self.calib, "new", "new").value, expected_quantile(range(1, 7), 0.5))

    def test_batch_matches_single_pair(self):
        test = InteractionTable.from_arrays(["A", "B", "Q", "D"], ["X", "new", "new", "W"],
                                            [0.0] * 4, [1.0, 2.0, 3.0, 4.0]).without_labels()
        batch = predict_intervals_gcp(test, self.calib)
        for i, (drug, protein) in enumerate(zip(test.drug_ids, test.protein_ids)):
            self.assertEqual(batch.threshold[i], gcp_threshold(self.calib, drug, protein).value)

    def test_small_group_is_unbounded(self):
        """A single score cannot certify 90% coverage"""
        calib = build_group_calibration(self.cal, 0.1)
        self.assertTrue(math.isinf(gcp_threshold(calib, "D", "W").value))

    def test_intervals_nest_as_alpha_decreases(self):
        cal = two_noise_groups(400, seed=3, prefix="C")
        test = two_noise_groups(50, seed=4, prefix="T").without_labels()
        previous = None
        for alpha in (0.5, 0.2, 0.1, 0.05):
            batch = predict_intervals_gcp(test, build_group_calibration(cal, alpha))
            if previous is not None:
                self.assertTrue((batch.lower <= previous.lower).all())
                self.assertTrue((batch.upper >= previous.upper).all())
            previous = batch

    def test_repairs_per_group_coverage(self):
        """
        Two protein groups with noise scales 1 and 5: GCP holds 0.9 within
        each group while the marginal threshold undercovers the noisy one.
        """
        gcp_ok, mcp_shortfall = 0, []
        for seed in range(20):
            cal = two_noise_groups(500, seed, "C")
            test = two_noise_groups(1000, 100 + seed, "T")
            masked = test.without_labels()
            group = np.where(np.isin(test.protein_ids, QUIET_PROTEINS), "quiet", "noisy")
            gcp = subgroup_coverage(predict_intervals_gcp(masked, build_group_calibration(cal, 0.1)),
                                    test.labels, group)
            mcp = subgroup_coverage(predict_intervals_mcp(masked, calibrate_marginal(cal, 0.1)),
                                    test.labels, group)
            if gcp["quiet"][1] >= 0.87 and gcp["noisy"][1] >= 0.87:
                gcp_ok += 1
            mcp_shortfall.append(0.9 - mcp["noisy"][1])
        self.assertGreaterEqual(gcp_ok, 18)
        self.assertGreaterEqual(float(np.mean(mcp_shortfall)), 0.02)


class TestConformalArtifacts(unittest.TestCase):
    """Interval CSVs and calibration JSON"""

    def setUp(self):
        """Create temporary directory for test files"""
        self.test_dir = tempfile.mkdtemp()
        self.original_dir = os.getcwd()
        os.chdir(self.test_dir)

    def tearDown(self):
        """Clean up temporary directory"""
        os.chdir(self.original_dir)
        shutil.rmtree(self.test_dir)

    def test_intervals_csv_keeps_infinity(self):
        cal = InteractionTable.from_arrays(["A", "B"], ["X", "Y"], [1.0, 2.0], [0.0, 0.0])
        test = InteractionTable.from_arrays(["A", "N"], ["X", "N"], [0.0, 0.0], [1.0, 2.0]).without_labels()
        batch = predict_intervals_gcp(test, build_group_calibration(cal, 0.1))
        write_intervals(batch, test, "GCP", 0.1, "intervals.csv")
        frame, loaded = read_intervals("intervals.csv")
        self.assertEqual(frame["method"].tolist(), ["GCP", "GCP"])
        np.testing.assert_array_equal(loaded.lower, batch.lower)
        self.assertTrue(np.isinf(loaded.upper).all())

    def test_calibration_file(self):
        cal = exchangeable_table(30, 0)
        artifact = CalibrationArtifact(method="GCP", alpha=0.2, group=build_group_calibration(cal, 0.2))
        save_calibration(artifact, "calib/gcp.json")
        loaded = load_calibration("calib/gcp.json")
        self.assertEqual(loaded.method, "GCP")
        np.testing.assert_array_equal(loaded.group.global_scores, artifact.group.global_scores)


def run_tests():
    """Run all conformal tests"""
    print("\n" + "=" * 60)
    print("Running Conformal Tests")
    print("=" * 60 + "\n")

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    suite.addTests(loader.loadTestsFromTestCase(TestScoresAndQuantile))
    suite.addTests(loader.loadTestsFromTestCase(TestMarginalIntervals))
    suite.addTests(loader.loadTestsFromTestCase(TestGroupConditioned))
    suite.addTests(loader.loadTestsFromTestCase(TestConformalArtifacts))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    print("\n" + "=" * 60)
    print(f"Results: {result.testsRun} tests, {len(result.failures)} failures, {len(result.errors)} errors")
    print("=" * 60 + "\n")

    return 0 if result.wasSuccessful() else 1


if __name__ == "__main__":
    sys.exit(run_tests())
