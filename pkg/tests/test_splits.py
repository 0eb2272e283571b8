"""
Tests for the four splitting strategies and split artifacts.
"""

import unittest
import json
import os
import subprocess
import sys
import tempfile
import shutil

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from src.core import InteractionTable
from src.errors import ArtifactIOError, DegenerateInputError, InfeasibleSplitError
from src.models import SplitStrategy
from src.splits import (
    double_cold_partition, read_split, split_cold_entity, split_double_cold, split_random, split_table, write_split,
)

MAIN = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "main.py")


def make_table(n_drugs=12, n_proteins=10, density=0.7, seed=0) -> InteractionTable:
    rng = np.random.Generator(np.random.PCG64(seed))
    mask = rng.random((n_drugs, n_proteins)) < density
    d, p = np.nonzero(mask)
    return InteractionTable.from_arrays([f"D{i}" for i in d], [f"P{j}" for j in p], rng.standard_normal(len(d)))


def entities(table, rows, side):
    ids = table.drug_ids if side == "Drug" else table.protein_ids
    return set(ids[rows].tolist())


class TestRandomSplit(unittest.TestCase):
    """Interaction-level split"""

    def test_sizes_and_disjointness(self):
        """|train| = floor(n/2), cal and test differ by at most one, all rows used"""
        for seed in range(50):
            table = make_table(seed=seed)
            n = len(table)
            result = split_random(table, seed)
            sizes = result.sizes()
            self.assertEqual(sizes["train"], n // 2)
            self.assertLessEqual(abs(sizes["cal"] - sizes["test"]), 1)
            rows = result.train_rows + result.cal_rows + result.test_rows
            self.assertEqual(sorted(rows), list(range(n)))

    def test_rows_sorted(self):
        result = split_random(make_table(), 4)
        for rows in (result.train_rows, result.cal_rows, result.test_rows):
            self.assertEqual(rows, sorted(rows))

    def test_same_seed_same_split(self):
        table = make_table()
        self.assertEqual(split_random(table, 11), split_random(table, 11))
        self.assertNotEqual(split_random(table, 11).train_rows, split_random(table, 12).train_rows)

    def test_too_few_rows(self):
        table = InteractionTable.from_arrays(["D1", "D2", "D3"], ["P1", "P1", "P1"], [1.0, 2.0, 3.0])
        with self.assertRaises(DegenerateInputError):
            split_random(table, 0)


class TestColdSplits(unittest.TestCase):
    """Entity-level splits"""

    def test_cold_drug_entities_exclusive(self):
        """No drug appears in two subsets; every row is used"""
        for seed in range(50):
            table = make_table(seed=seed)
            result = split_cold_entity(table, "Drug", seed)
            train = entities(table, result.train_rows, "Drug")
            cal = entities(table, result.cal_rows, "Drug")
            test = entities(table, result.test_rows, "Drug")
            self.assertFalse(train & cal or train & test or cal & test)
            self.assertEqual(len(train), len(table.unique_drugs()) // 2)
            self.assertEqual(sum(result.sizes().values()), len(table))

    def test_cold_protein_entities_exclusive(self):
        for seed in range(50):
            table = make_table(seed=seed)
            result = split_cold_entity(table, "Protein", seed)
            train = entities(table, result.train_rows, "Protein")
            held_out = entities(table, result.cal_rows + result.test_rows, "Protein")
            self.assertFalse(train & held_out)
            self.assertEqual(result.strategy.kind, "ColdProtein")

    def test_protein_split_mirrors_drug_split_on_transposed_table(self):
        """Swapping the drug and protein columns swaps the two cold strategies"""
        for seed in range(20):
            table = make_table(seed=seed)
            transposed = InteractionTable.from_arrays(table.protein_ids, table.drug_ids, table.labels)
            by_drug = split_cold_entity(table, "Drug", seed)
            by_protein = split_cold_entity(transposed, "Protein", seed)
            self.assertEqual(by_drug.train_rows, by_protein.train_rows)
            self.assertEqual(by_drug.cal_rows, by_protein.cal_rows)
            self.assertEqual(by_drug.test_rows, by_protein.test_rows)

    def test_too_few_entities(self):
        table = InteractionTable.from_arrays(["D1", "D2", "D3", "D1"], ["P1", "P2", "P3", "P4"], [1.0] * 4)
        with self.assertRaises(DegenerateInputError):
            split_cold_entity(table, "Drug", 0)


class TestDoubleColdSplit(unittest.TestCase):
    """New drug-protein pairs"""

    def test_conservation_and_exclusivity(self):
        """kept + discarded = n; cal/test share no drug or protein with train"""
        for seed in range(50):
            table = make_table(seed=seed)
            try:
                result = split_double_cold(table, seed)
            except InfeasibleSplitError:
                continue
            kept = sum(result.sizes().values())
            self.assertEqual(kept + result.discarded, len(table))
            held_out = result.cal_rows + result.test_rows
            self.assertFalse(entities(table, result.train_rows, "Drug") & entities(table, held_out, "Drug"))
            self.assertFalse(entities(table, result.train_rows, "Protein") & entities(table, held_out, "Protein"))

    def test_infeasible_split_reported(self):
        """A one-to-one pairing leaves empty subsets for most seeds"""
        ids = [f"E{i}" for i in range(4)]
        table = InteractionTable.from_arrays(ids, ids, [1.0, 2.0, 3.0, 4.0])
        raised = 0
        for seed in range(20):
            try:
                split_double_cold(table, seed)
            except InfeasibleSplitError as e:
                raised += 1
                self.assertEqual(e.exit_code, 3)
        self.assertGreater(raised, 0)

    def test_two_by_two_partition(self):
        """Drugs {a, b} x proteins {p, q} with training pools {a} and {p}"""
        table = InteractionTable.from_arrays(["a", "a", "b", "b"], ["p", "q", "p", "q"], [1.0, 2.0, 3.0, 4.0])
        train, held_out, discarded = double_cold_partition(table, {"a"}, {"p"})
        self.assertEqual(train.tolist(), [0])
        self.assertEqual(held_out.tolist(), [3])
        self.assertEqual(discarded, 2)
        mixed = sorted(set(range(4)) - set(train.tolist()) - set(held_out.tolist()))
        self.assertEqual([(table.drug_ids[i], table.protein_ids[i]) for i in mixed], [("a", "q"), ("b", "p")])

    def test_dispatch(self):
        table = make_table()
        for kind in ("Random", "ColdDrug", "ColdProtein"):
            self.assertEqual(split_table(table, SplitStrategy(kind=kind, seed=3)).strategy.kind, kind)


class TestSplitArtifacts(unittest.TestCase):
    """Row-index files"""

    def setUp(self):
        """Create temporary directory for test files"""
        self.test_dir = tempfile.mkdtemp()
        self.original_dir = os.getcwd()
        os.chdir(self.test_dir)

    def tearDown(self):
        """Clean up temporary directory"""
        os.chdir(self.original_dir)
        shutil.rmtree(self.test_dir)

    def test_write_and_read(self):
        result = split_cold_entity(make_table(), "Drug", 5)
        write_split(result, "split")
        for name in ("train_rows.txt", "cal_rows.txt", "test_rows.txt", "split.json"):
            self.assertTrue(os.path.exists(os.path.join("split", name)))
        self.assertEqual(read_split("split"), result)

    def test_malformed_provenance(self):
        result = split_random(make_table(), 0)
        write_split(result, "split")
        with open(os.path.join("split", "split.json"), "w") as f:
            json.dump({"strategy": "Random"}, f)
        with self.assertRaises(ArtifactIOError):
            read_split("split")
        with open(os.path.join("split", "split.json"), "w") as f:
            json.dump({"strategy": "Sideways", "seed": 0}, f)
        with self.assertRaises(ArtifactIOError):
            read_split("split")
        with open(os.path.join("split", "split.json"), "w") as f:
            json.dump([1, 2], f)
        with self.assertRaises(ArtifactIOError):
            read_split("split")

    def test_identical_across_processes(self):
        """Two separate interpreters with the same seed write the same bytes"""
        for run in ("first", "second"):
            for argv in (["synth", "--out", f"{run}/data"],
                         ["split", "--interactions", f"{run}/data/interactions.csv", "--strategy", "DoubleCold",
                          "--seed", "4", "--out", f"{run}/split"]):
                completed = subprocess.run([sys.executable, MAIN] + argv, capture_output=True, text=True)
                self.assertEqual(completed.returncode, 0, completed.stdout + completed.stderr)
        names = ["data/interactions.csv", "data/drug_features.csv", "data/protein_features.csv",
                 "split/train_rows.txt", "split/cal_rows.txt", "split/test_rows.txt", "split/split.json"]
        for name in names:
            with open(os.path.join("first", name), "rb") as a, open(os.path.join("second", name), "rb") as b:
                self.assertEqual(a.read(), b.read(), name)


def run_tests():
    """Run all split tests"""
    print("\n" + "=" * 60)
    print("Running Split Tests")
    print("=" * 60 + "\n")

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    suite.addTests(loader.loadTestsFromTestCase(TestRandomSplit))
    suite.addTests(loader.loadTestsFromTestCase(TestColdSplits))
    suite.addTests(loader.loadTestsFromTestCase(TestDoubleColdSplit))
    suite.addTests(loader.loadTestsFromTestCase(TestSplitArtifacts))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    print("\n" + "=" * 60)
    print(f"Results: {result.testsRun} tests, {len(result.failures)} failures, {len(result.errors)} errors")
    print("=" * 60 + "\n")

    return 0 if result.wasSuccessful() else 1


if __name__ == "__main__":
    sys.exit(run_tests())
