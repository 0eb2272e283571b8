"""
Defensive tests for the command-line surface.

Every failure must end in a documented exit code with a readable message:
- 2: invalid input, arguments or configuration
- 3: a split strategy left an empty subset
- 4: an artifact could not be read or written
"""

import unittest
import json
import os
import sys
import tempfile
import shutil
from io import StringIO
from unittest.mock import patch

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import settings
from src.core import InteractionTable, write_table
from src.errors import InfeasibleSplitError
from src.logger import set_log_file
from src.models import SplitStrategy
from src.splits import split_table


def run_main(argv):
    """Invoke main.py; returns (exit code, captured stdout)."""
    from main import main

    with patch('sys.argv', ['main.py'] + argv):
        with patch('sys.stdout', new=StringIO()) as output:
            with patch('sys.stderr', new=StringIO()):
                try:
                    main()
                    code = 0
                except SystemExit as e:
                    code = e.code
    return code, output.getvalue()


class DefensiveCase(unittest.TestCase):

    def setUp(self):
        """Create temporary directory"""
        self.test_dir = tempfile.mkdtemp()
        self.original_dir = os.getcwd()
        os.chdir(self.test_dir)

    def tearDown(self):
        """Clean up"""
        set_log_file(settings.LOG_FILE)
        os.chdir(self.original_dir)
        shutil.rmtree(self.test_dir)

    def write_config(self, data, name="experiment.json"):
        with open(name, 'w') as f:
            json.dump(data, f)
        return name


class TestArtifactErrors(DefensiveCase):
    """Exit code 4"""

    def test_missing_interactions_file(self):
        code, output = run_main(["split", "--interactions", "nonexistent.csv", "--strategy", "Random",
                                 "--seed", "0", "--out", "split"])
        self.assertEqual(code, 4)
        self.assertIn("nonexistent.csv", output)

    def test_missing_config_file(self):
        code, output = run_main(["run", "--config", "nonexistent.json", "--seed", "0"])
        self.assertEqual(code, 4)
        self.assertIn("cannot read config", output)

    def test_report_on_missing_run(self):
        code, output = run_main(["report", "runs/none"])
        self.assertEqual(code, 4)
        self.assertIn("Run the pipeline first", output)

    def test_malformed_split_provenance(self):
        table = InteractionTable.from_arrays([f"D{i}" for i in range(12)], [f"P{i % 4}" for i in range(12)],
                                             [float(i) for i in range(12)], [0.0] * 12)
        write_table(table, "interactions.csv")
        self.assertEqual(run_main(["split", "--interactions", "interactions.csv", "--strategy", "Random",
                                   "--seed", "0", "--out", "split"])[0], 0)
        with open("split/split.json", "w") as f:
            json.dump({"seed": 0}, f)
        code, output = run_main(["calibrate", "--interactions", "interactions.csv", "--split", "split",
                                 "--method", "MCP", "--alpha", "0.1", "--out", "mcp.json"])
        self.assertEqual(code, 4)
        self.assertIn("malformed", output)


class TestValidationErrors(DefensiveCase):
    """Exit code 2"""

    def test_invalid_json_config(self):
        with open('invalid.json', 'w') as f:
            f.write("not valid json {")
        code, output = run_main(["run", "--config", "invalid.json", "--seed", "0"])
        self.assertEqual(code, 2)
        self.assertIn("invalid JSON", output)

    def test_config_must_be_object(self):
        self.write_config([1, 2, 3])
        code, output = run_main(["run", "--config", "experiment.json", "--seed", "0"])
        self.assertEqual(code, 2)
        self.assertIn("JSON object", output)

    def test_unknown_override_key(self):
        self.write_config({})
        code, output = run_main(["run", "--config", "experiment.json", "--seed", "0", "--no-such-key", "1"])
        self.assertEqual(code, 2)
        self.assertIn("unknown config key", output)

    def test_alpha_out_of_range(self):
        self.write_config({})
        code, output = run_main(["run", "--config", "experiment.json", "--seed", "0", "--alphas", "[1.5]"])
        self.assertEqual(code, 2)
        self.assertIn("invalid configuration", output)

    def test_seed_is_mandatory(self):
        self.write_config({})
        code, _ = run_main(["run", "--config", "experiment.json"])
        self.assertEqual(code, 2)

    def test_overrides_only_for_run(self):
        code, _ = run_main(["report", "runs/latest", "--alphas", "[0.1]"])
        self.assertEqual(code, 2)

    def test_calibrate_without_predictions(self):
        """Calibration scores need a prediction column"""
        table = InteractionTable.from_arrays([f"D{i}" for i in range(12)], [f"P{i % 4}" for i in range(12)],
                                             [float(i) for i in range(12)])
        write_table(table, "interactions.csv")
        self.assertEqual(run_main(["split", "--interactions", "interactions.csv", "--strategy", "Random",
                                   "--seed", "0", "--out", "split"])[0], 0)
        code, output = run_main(["calibrate", "--interactions", "interactions.csv", "--split", "split",
                                 "--method", "GCP", "--alpha", "0.1", "--out", "gcp.json"])
        self.assertEqual(code, 2)
        self.assertIn("prediction", output)
        self.assertFalse(os.path.exists("gcp.json"))

    def test_attach_preds_missing_pair(self):
        table = InteractionTable.from_arrays(["D1", "D2"], ["P1", "P2"], [1.0, 2.0])
        write_table(table, "interactions.csv")
        with open("preds.csv", "w") as f:
            f.write("drug_id,protein_id,prediction\nD1,P1,0.5\n")
        code, output = run_main(["attach-preds", "--interactions", "interactions.csv",
                                 "--predictions", "preds.csv", "--out", "scored.csv"])
        self.assertEqual(code, 2)
        self.assertIn("no prediction for 1 pairs", output)
        self.assertFalse(os.path.exists("scored.csv"))

    def test_attach_preds_non_numeric(self):
        table = InteractionTable.from_arrays(["D1", "D2"], ["P1", "P2"], [1.0, 2.0])
        write_table(table, "interactions.csv")
        with open("preds.csv", "w") as f:
            f.write("drug_id,protein_id,prediction\nD1,P1,0.5\nD2,P2,n/a\n")
        code, output = run_main(["attach-preds", "--interactions", "interactions.csv",
                                 "--predictions", "preds.csv", "--out", "scored.csv"])
        self.assertEqual(code, 2)
        self.assertIn("numeric", output)
        self.assertFalse(os.path.exists("scored.csv"))

    def test_unknown_method(self):
        code, _ = run_main(["calibrate", "--interactions", "x.csv", "--split", "s", "--method", "CCP-XX",
                            "--alpha", "0.1", "--out", "c.json"])
        self.assertEqual(code, 2)


class TestInfeasibleSplit(DefensiveCase):
    """Exit code 3"""

    def test_double_cold_on_one_to_one_pairs(self):
        ids = [f"E{i}" for i in range(4)]
        table = InteractionTable.from_arrays(ids, ids, [1.0, 2.0, 3.0, 4.0])
        write_table(table, "interactions.csv")

        seed = None
        for candidate in range(20):
            try:
                split_table(table, SplitStrategy(kind="DoubleCold", seed=candidate))
            except InfeasibleSplitError:
                seed = candidate
                break
        self.assertIsNotNone(seed)

        code, output = run_main(["split", "--interactions", "interactions.csv", "--strategy", "DoubleCold",
                                 "--seed", str(seed), "--out", "split"])
        self.assertEqual(code, 3)
        self.assertIn("new seed", output)


class TestLogging(DefensiveCase):
    """The log file never takes the process down"""

    def test_unwritable_log_file_only_warns(self):
        from src.logger import log

        os.mkdir("logs")
        set_log_file("logs")
        with patch('sys.stdout', new=StringIO()) as output:
            with patch('sys.stderr', new=StringIO()) as errors:
                log("still printed")
        self.assertIn("still printed", output.getvalue())
        self.assertIn("Failed to write to log file", errors.getvalue())

    def test_session_block_in_file(self):
        from src.logger import log_session_end, log_session_start

        set_log_file("session.log")
        with patch('sys.stdout', new=StringIO()):
            log_session_start("synth")
            log_session_end("synth")
        with open("session.log") as f:
            text = f.read()
        self.assertIn("CoverageLens synth started", text)
        self.assertIn("CoverageLens synth finished (", text)
        self.assertTrue(text.endswith("\n\n"))


def run_tests():
    """Run all defensive tests"""
    print("\n" + "=" * 60)
    print("Running Defensive Tests")
    print("=" * 60 + "\n")

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    suite.addTests(loader.loadTestsFromTestCase(TestArtifactErrors))
    suite.addTests(loader.loadTestsFromTestCase(TestValidationErrors))
    suite.addTests(loader.loadTestsFromTestCase(TestInfeasibleSplit))
    suite.addTests(loader.loadTestsFromTestCase(TestLogging))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    print("\n" + "=" * 60)
    print(f"Results: {result.testsRun} tests, {len(result.failures)} failures, {len(result.errors)} errors")
    print("=" * 60 + "\n")

    return 0 if result.wasSuccessful() else 1


if __name__ == "__main__":
    sys.exit(run_tests())
