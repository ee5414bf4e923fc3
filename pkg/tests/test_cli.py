import json
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import yaml
from typer.testing import CliRunner

from langcl.core.checkpoint import atomic_write_text
from langcl.main import app
from tests.fixtures import fast_yaml


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.runner = CliRunner()
        self.temp_dir = tempfile.mkdtemp()
        self.temp_path = Path(self.temp_dir)
        self.config_path = self.temp_path / "langcl.yaml"
        self.config_path.write_text(fast_yaml(self.temp_path / "cache"), encoding="utf-8")

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def invoke(self, *args):
        return self.runner.invoke(app, [str(a) for a in args])


class TestConfigCommands(CliTestCase):
    def test_init_writes_commented_config(self):
        """config init writes a commented YAML that loads back to the preset."""
        target = self.temp_path / "new.yaml"
        result = self.invoke("config", "init", target, "--preset", "toy")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(target.read_text().startswith("# langcl"))
        self.assertEqual(yaml.safe_load(target.read_text())["data"]["n_new"], 3)

    def test_init_refuses_to_overwrite(self):
        """An existing file is kept unless --force is given."""
        result = self.invoke("config", "init", self.config_path)
        self.assertEqual(result.exit_code, 1)
        self.assertIn("already exists", result.output)
        result = self.invoke("config", "init", self.config_path, "--force")
        self.assertEqual(result.exit_code, 0)

    def test_show_prints_hashes(self):
        """config show echoes the override and the derived hashes."""
        result = self.invoke("config", "show", "--config", self.config_path, "--strategy", "EWC")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("kind: EWC", result.output)
        self.assertIn("reference hash", result.output)

    def test_invalid_override(self):
        """An unknown strategy on the command line exits with an error."""
        result = self.invoke("config", "show", "--strategy", "SGD")
        self.assertEqual(result.exit_code, 1)
        self.assertIn("Error:", result.output)

    def test_missing_config_file(self):
        """A --config path that does not exist is reported."""
        result = self.invoke("config", "show", "--config", self.temp_path / "nope.yaml")
        self.assertEqual(result.exit_code, 1)
        self.assertIn("does not exist", result.output)


class TestDataCommands(CliTestCase):
    def test_generate_then_inspect(self):
        """A generated suite can be inspected from disk."""
        out = self.temp_path / "suite"
        result = self.invoke("data", "generate", "--out", out, "--config", self.config_path)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue((out / "languages.json").exists())
        self.assertTrue((out / "n00" / "train.jsonl").exists())

        result = self.invoke("data", "inspect", out)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("n01", result.output)

    def test_inspect_missing_suite(self):
        """Inspecting an empty directory exits with status 1."""
        result = self.invoke("data", "inspect", self.temp_path / "nothing")
        self.assertEqual(result.exit_code, 1)


class TestExperimentAndResults(CliTestCase):
    def test_run_verify_and_list(self):
        """run writes a record that results metrics verifies and results list shows."""
        out = self.temp_path / "results" / "er"
        result = self.invoke(
            "experiment", "run", "--config", self.config_path, "--strategy", "ER", "--out", out
        )
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("AWER", result.output)
        self.assertTrue((out / "record.json").exists())

        result = self.invoke("results", "metrics", out)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("match", result.output)

        result = self.invoke("results", "metrics", out / "wer_matrix.csv")
        self.assertEqual(result.exit_code, 0, result.output)

        result = self.invoke("results", "plot-data", out, "--out", self.temp_path / "plots")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue((self.temp_path / "plots" / "im.csv").exists())

        result = self.invoke("results", "list", self.temp_path / "results")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("ER", result.output)

    def test_top_level_short_forms(self):
        """run, metrics and plot-data also work without their group name."""
        out = self.temp_path / "ft"
        result = self.invoke("run", "--config", self.config_path, "--max-new", "1", "--out", out)
        self.assertEqual(result.exit_code, 0, result.output)
        result = self.invoke("metrics", out)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("match", result.output)
        result = self.invoke("plot-data", out)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue((out / "plot" / "awer.csv").exists())
        self.assertNotIn("plot-data", self.invoke("--help").output)

    def test_tampered_metrics_csv_is_reported(self):
        """A metrics.csv that disagrees with the WER matrix is flagged."""
        out = self.temp_path / "ft"
        self.invoke("experiment", "run", "--config", self.config_path, "--max-new", "1", "--out", out)
        csv_path = out / "metrics.csv"
        lines = csv_path.read_text().splitlines()
        stage, metric, _ = lines[1].split(",")
        lines[1] = f"{stage},{metric},99.0"
        csv_path.write_text("\n".join(lines) + "\n")
        result = self.invoke("results", "metrics", out)
        self.assertEqual(result.exit_code, 1)
        self.assertIn("disagrees", result.output)

    def test_bad_order(self):
        """An order naming a language outside the suite is rejected."""
        result = self.invoke(
            "experiment", "run", "--config", self.config_path, "--order", "n09",
            "--out", self.temp_path / "x",
        )
        self.assertEqual(result.exit_code, 1)
        self.assertIn("unknown new language", result.output)

    def test_refs_writes_json(self):
        """References land atomically in a directory that did not exist yet."""
        out = self.temp_path / "refs"
        with mock.patch(
            "langcl.commands.experiment.atomic_write_text", wraps=atomic_write_text
        ) as writer:
            result = self.invoke("experiment", "refs", "--config", self.config_path, "--out", out)
        self.assertEqual(result.exit_code, 0, result.output)
        writer.assert_called_once()
        self.assertEqual(writer.call_args.args[0], out / "references.json")
        self.assertEqual([p.name for p in out.iterdir()], ["references.json"])
        refs = json.loads((out / "references.json").read_text())
        self.assertEqual(set(refs["solo"]), {"n00", "n01"})

    def test_list_without_reports(self):
        """Listing a directory with no reports says so and succeeds."""
        result = self.invoke("results", "list", self.temp_path)
        self.assertEqual(result.exit_code, 0)
        self.assertIn("No experiment reports", result.output)


class TestStudyCommands(CliTestCase):
    def test_ordering_with_explicit_orders(self):
        """Repeated --order options run exactly those orders."""
        out = self.temp_path / "ordering"
        result = self.invoke(
            "study", "ordering", "--config", self.config_path,
            "--order", "n00,n01", "--order", "n01,n00", "--out", out,
        )
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("over 2 orders", result.output)
        self.assertTrue((out / "summary.json").exists())

    def test_workers_must_be_positive(self):
        """Zero workers is a usage error."""
        result = self.invoke("study", "ordering", "--config", self.config_path, "--workers", "0")
        self.assertEqual(result.exit_code, 1)


if __name__ == "__main__":
    unittest.main()
