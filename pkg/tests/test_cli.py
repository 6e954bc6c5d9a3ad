import csv
import io
import json
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

from cli import EXIT_CONFIG, EXIT_INTEGRITY, EXIT_IO, EXIT_OK, EXIT_SCHEMA, EXIT_USAGE, dispatch
from models.budgets import HeadBudgetTable
from runtime import clear_frozen_budget_table
from tests.fixtures import reference_budget_table, write_config


class CliTestCase(unittest.TestCase):
    def setUp(self):
        clear_frozen_budget_table()
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)
        self.config = str(write_config(self._tmp.name))

    def tearDown(self):
        clear_frozen_budget_table()
        self._tmp.cleanup()

    def run_cli(self, *argv):
        out = io.StringIO()
        with redirect_stdout(out), redirect_stderr(io.StringIO()):
            code = dispatch([str(a) for a in argv])
        return code, out.getvalue()

    def path(self, name):
        return str(self.dir / name)

    def estimate(self):
        budgets = self.path("budgets.json")
        code, _ = self.run_cli("estimate-heads", "--config", self.config, "--out", budgets, "--prompts", "a", "b")
        self.assertEqual(code, EXIT_OK)
        return budgets

    @staticmethod
    def read_csv(path):
        with open(path, encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))


class CostCommandTests(CliTestCase):
    def test_reference_cost_report(self):
        budgets = self.path("reference.json")
        reference_budget_table().save(budgets)
        out_json = self.path("cost.json")
        code, out = self.run_cli("cost", "--budgets", budgets, "--out", out_json)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("c_pack=5874", out)
        self.assertIn("ratio=0.259", out)
        self.assertIn("153.10 / 162.86 / 178.24", out)
        self.assertEqual(json.loads(Path(out_json).read_text(encoding="utf-8"))["c_dense"], 22680)

    def test_shape_from_config_must_match(self):
        budgets = self.path("reference.json")
        reference_budget_table().save(budgets)
        code, out = self.run_cli("cost", "--budgets", budgets, "--shape", self.config)
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("✗ configuration error", out)


class ErrorMappingTests(CliTestCase):
    def test_usage_errors(self):
        self.assertEqual(self.run_cli("transmogrify")[0], EXIT_USAGE)
        self.assertEqual(self.run_cli("cost")[0], EXIT_USAGE)
        self.assertEqual(self.run_cli("--help")[0], EXIT_OK)

    def test_missing_file_is_io_error(self):
        code, out = self.run_cli("cost", "--budgets", self.path("nope.json"))
        self.assertEqual(code, EXIT_IO)
        self.assertIn("✗ I/O error", out)

    def test_malformed_json_is_schema_error(self):
        broken = self.dir / "broken.json"
        broken.write_text("{budgets: ", encoding="utf-8")
        self.assertEqual(self.run_cli("cost", "--budgets", broken)[0], EXIT_SCHEMA)

    def test_unknown_config_key_is_schema_error(self):
        config = write_config(self._tmp.name, flavour="vanilla")
        code, _ = self.run_cli("rollout", "--config", config, "--policy", "dense_window", "--trace", self.path("t.csv"))
        self.assertEqual(code, EXIT_SCHEMA)

    def test_wrongly_typed_nested_config_values_are_schema_errors(self):
        for overrides in (
            {"rope": {"base": "fast"}},
            {"redundancy": {"mode": "duplicate", "period": "x"}},
            {"score_model": {"perturbation": "big"}},
            {"score_on_rotated": "false"},
        ):
            config = write_config(self._tmp.name, **overrides)
            code, out = self.run_cli(
                "rollout", "--config", config, "--policy", "dense_window", "--trace", self.path("t.csv")
            )
            self.assertEqual(code, EXIT_SCHEMA, overrides)
            self.assertIn("✗ schema error", out)

    def test_wrongly_typed_budget_table_values_are_schema_errors(self):
        raw = reference_budget_table().to_dict()
        for key, value in (("gamma", "steep"), ("b_min", "low"), ("b_max", 12.5), ("seeds", ["x"])):
            broken = self.dir / f"broken_{key}.json"
            broken.write_text(json.dumps(dict(raw, **{key: value})), encoding="utf-8")
            code, out = self.run_cli("cost", "--budgets", broken)
            self.assertEqual(code, EXIT_SCHEMA, key)
            self.assertIn("✗ schema error", out)

    def test_report_without_inputs_is_configuration_error(self):
        self.assertEqual(self.run_cli("report")[0], EXIT_CONFIG)


class VerifyCommandTests(CliTestCase):
    def test_all_suites_pass(self):
        code, out = self.run_cli("verify", "--seed", 1, "--instances", 50)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("max relative error", out)
        self.assertIn("✓ All 4 suites passed", out)

    def test_single_suite(self):
        code, out = self.run_cli("verify", "--instances", 20, "--suite", "budgets")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("✓ All 1 suites passed", out)


class PipelineTests(CliTestCase):
    def test_estimate_heads_writes_a_valid_table(self):
        hist = self.path("hist.csv")
        budgets = self.path("budgets.json")
        code, out = self.run_cli("estimate-heads", "--config", self.config, "--out", budgets, "--hist", hist)
        self.assertEqual(code, EXIT_OK)
        table = HeadBudgetTable.load(budgets)
        self.assertEqual((table.num_layers, table.heads, table.b_min, table.b_max), (2, 2, 1, 3))
        self.assertIsNotNone(table.normalized)
        self.assertEqual(table.prompts, ("synthetic",))
        self.assertEqual(sum(int(r["count"]) for r in self.read_csv(hist)), 4)
        self.assertIn("median,", out)

    def test_rollout_trace_and_mask_check(self):
        budgets = self.estimate()
        trace = self.path("trace.csv")
        masks = self.path("masks.json")
        code, out = self.run_cli(
            "rollout", "--config", self.config, "--budgets", budgets, "--chunks", 3, "--trace", trace, "--dump-masks", masks
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("✓ Budget table frozen", out)
        rows = self.read_csv(trace)
        self.assertEqual(list(rows[0]), ["chunk", "policy", "frame_cost", "cache_frames", "mean_budget_utilization", "divergence_vs_dense"])
        self.assertEqual([r["chunk"] for r in rows], ["0", "1", "2"])
        self.assertTrue(all(r["policy"] == "focused" for r in rows))

        code, out = self.run_cli("report", "--masks", masks, "--trace", trace)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("✓ Trace frame cost matches the masks", out)

    def test_tampered_trace_is_integrity_error(self):
        budgets = self.estimate()
        trace = self.path("trace.csv")
        masks = self.path("masks.json")
        self.run_cli("rollout", "--config", self.config, "--budgets", budgets, "--trace", trace, "--dump-masks", masks)
        rows = self.read_csv(trace)
        rows[-1]["frame_cost"] = str(int(rows[-1]["frame_cost"]) + 1)
        with open(trace, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        clear_frozen_budget_table()
        self.assertEqual(self.run_cli("report", "--masks", masks, "--trace", trace)[0], EXIT_INTEGRITY)

    def test_compare_writes_every_policy(self):
        budgets = self.estimate()
        trace = self.path("compare.csv")
        code, out = self.run_cli(
            "rollout", "--config", self.config, "--budgets", budgets, "--chunks", 2,
            "--trace", trace, "--compare", "dense_window", "uniform_budget",
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("Policy comparison", out)
        self.assertEqual({r["policy"] for r in self.read_csv(trace)}, {"focused", "dense_window", "uniform_budget"})

    def test_compare_applies_overrides_and_dumps_every_policy(self):
        budgets = self.estimate()
        trace = self.path("compare.csv")
        masks = self.path("compare_masks.json")
        code, out = self.run_cli(
            "rollout", "--config", self.config, "--budgets", budgets, "--chunks", 3, "--policy", "dense_window",
            "--window", 2, "--lambda", 0, "--trace", trace, "--dump-masks", masks,
            "--compare", "attention_sink", "focused", "dense_window",
        )
        self.assertEqual(code, EXIT_OK)
        self.assertIn("💾 Masks written", out)
        rows = self.read_csv(trace)
        for policy in ("dense_window", "attention_sink"):
            self.assertEqual([r["cache_frames"] for r in rows if r["policy"] == policy], ["2", "4", "4"], policy)
        records = json.loads(Path(masks).read_text(encoding="utf-8"))
        self.assertEqual({r["policy"] for r in records}, {"dense_window", "attention_sink", "focused"})

        single = self.path("single.csv")
        clear_frozen_budget_table()
        code, _ = self.run_cli(
            "rollout", "--config", self.config, "--budgets", budgets, "--chunks", 3, "--lambda", 0, "--trace", single
        )
        self.assertEqual(code, EXIT_OK)
        compared = [r for r in rows if r["policy"] == "focused"]
        self.assertEqual(compared, self.read_csv(single))

        clear_frozen_budget_table()
        code, out = self.run_cli("report", "--masks", masks, "--trace", trace)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("✓ Trace frame cost matches the masks", out)

    def test_allocation_ablation(self):
        budgets = self.estimate()
        out_csv = self.path("allocation.csv")
        code, out = self.run_cli(
            "ablate", "--config", self.config, "--kind", "allocation", "--budgets", budgets,
            "--chunks", 2, "--shuffle-seed", 4, "--out", out_csv,
        )
        self.assertEqual(code, EXIT_OK)
        rows = self.read_csv(out_csv)
        self.assertEqual(
            [r["allocation"] for r in rows], ["focused", "reverse_budget", "random_budget", "uniform_budget"]
        )
        self.assertTrue(all(r["kind"] == "allocation" for r in rows))
        self.assertIn("reverse_budget", out)

    def test_budgeted_rollout_without_budgets(self):
        code, _ = self.run_cli("rollout", "--config", self.config, "--trace", self.path("t.csv"))
        self.assertEqual(code, EXIT_CONFIG)

    def test_histogram_report(self):
        budgets = self.estimate()
        out_csv = self.path("hist.csv")
        code, out = self.run_cli("report", "--hist", budgets, "--bins", 5, "--out", out_csv)
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(out.startswith("bin_low,bin_high,count"))
        self.assertEqual(sum(int(r["count"]) for r in self.read_csv(out_csv)), 4)

    def test_histogram_needs_importance(self):
        budgets = self.path("fixed.json")
        HeadBudgetTable.uniform(2, 2, 2).save(budgets)
        self.assertEqual(self.run_cli("report", "--hist", budgets)[0], EXIT_SCHEMA)

    def test_lambda_ablation(self):
        budgets = self.estimate()
        out_csv = self.path("sweep.csv")
        code, _ = self.run_cli(
            "ablate", "--config", self.config, "--kind", "lambda", "--budgets", budgets,
            "--chunks", 2, "--lambdas", 0, 1, "--out", out_csv,
        )
        self.assertEqual(code, EXIT_OK)
        rows = self.read_csv(out_csv)
        self.assertEqual([float(r["lambda"]) for r in rows], [0.0, 1.0])
        self.assertTrue(all(r["kind"] == "lambda" for r in rows))

    def test_budget_ablation_needs_normalized_importance(self):
        budgets = self.path("fixed.json")
        HeadBudgetTable.uniform(2, 2, 2).save(budgets)
        code, _ = self.run_cli(
            "ablate", "--config", self.config, "--kind", "budget", "--budgets", budgets, "--out", self.path("s.csv")
        )
        self.assertEqual(code, EXIT_CONFIG)


class RopeProbeCommandTests(CliTestCase):
    def test_writes_the_profile(self):
        out_csv = self.path("rope.csv")
        code, out = self.run_cli("rope-probe", "--out", out_csv, "--max-delta", 20)
        self.assertEqual(code, EXIT_OK)
        rows = self.read_csv(out_csv)
        self.assertEqual(len(rows), 41)
        self.assertEqual((rows[0]["delta_t"], rows[-1]["delta_t"]), ("-20", "20"))
        self.assertIn("💾 Probe written", out)

    def test_invalid_head_dim(self):
        self.assertEqual(self.run_cli("rope-probe", "--out", self.path("r.csv"), "--head-dim", 5)[0], EXIT_CONFIG)


if __name__ == "__main__":
    unittest.main()
