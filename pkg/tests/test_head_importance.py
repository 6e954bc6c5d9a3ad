import unittest

import torch

from models.budgets import HeadBudgetTable, ImportanceTable, budget_curve
from models.errors import ConfigurationError, ShapeError
from models.frames import LatentWindow
from runtime import clear_frozen_budget_table, rollout_guard
from services.head_importance import (
    DmLossConfig,
    apply_cfg,
    dm_loss,
    estimate_importance,
    importance_histogram,
    map_budgets,
    masked_rollout,
    normalize_importance,
    window_starts,
)
from services.synthetic_model import SyntheticAttentionModel
from services.verification import budget_suite
from tests.fixtures import small_config

SIGNAL = (1, 0)


class DmLossTests(unittest.TestCase):
    def setUp(self):
        self.window = LatentWindow(frames=torch.randn(3, 8, dtype=torch.float64), prompt_id="p", window_index=0)

    def test_zero_when_fake_matches_real(self):
        pred = torch.randn(3, 8, dtype=torch.float64)
        self.assertEqual(dm_loss(self.window, pred, pred, pred, DmLossConfig()), 0.0)

    def test_unnormalized_loss_is_half_squared_gap(self):
        fake = torch.ones(3, 8, dtype=torch.float64)
        real = torch.zeros(3, 8, dtype=torch.float64)
        config = DmLossConfig(normalize_gradient=False)
        self.assertAlmostEqual(dm_loss(self.window, fake, real, real, config), 12.0)

    def test_classifier_free_guidance(self):
        cond = torch.tensor([2.0])
        uncond = torch.tensor([1.0])
        self.assertEqual(apply_cfg(cond, uncond, 3.0).tolist(), [5.0])
        self.assertEqual(apply_cfg(cond, uncond, 0.0).tolist(), [2.0])

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            dm_loss(self.window, torch.zeros(2, 8), torch.zeros(3, 8), torch.zeros(3, 8), DmLossConfig())

    def test_invalid_harness_parameters(self):
        with self.assertRaises(ConfigurationError):
            DmLossConfig(num_windows=0)
        with self.assertRaises(ConfigurationError):
            DmLossConfig(timesteps=())


class WindowTests(unittest.TestCase):
    def test_windows_are_spread_over_the_trajectory(self):
        self.assertEqual(window_starts(12, 3, 2), [0, 6])
        self.assertEqual(window_starts(6, 3, 2), [0, 3])

    def test_trajectory_too_short(self):
        with self.assertRaises(ConfigurationError):
            window_starts(5, 3, 2)


class BudgetMappingTests(unittest.TestCase):
    def test_worked_example(self):
        self.assertEqual(budget_curve(0.5, 4, 12, 2.0), 6)

    def test_endpoints_and_bounds(self):
        normalized = torch.tensor([[0.0, 0.25, 0.5, 0.999999]], dtype=torch.float64)
        table = map_budgets(normalized, 4, 12, 2.0)
        self.assertEqual(table.budgets.tolist(), [[4, 5, 6, 12]])
        self.assertEqual(table.layer_sums(), [27])

    def test_invalid_parameters(self):
        with self.assertRaises(ConfigurationError):
            map_budgets(torch.zeros(1, 1), 5, 4, 2.0)
        with self.assertRaises(ConfigurationError):
            map_budgets(torch.zeros(1, 1), 1, 4, 0.0)

    def test_frozen_during_rollout(self):
        with rollout_guard():
            with self.assertRaises(ConfigurationError):
                map_budgets(torch.zeros(1, 1), 4, 12, 2.0)
        map_budgets(torch.zeros(1, 1), 4, 12, 2.0)

    def test_normalized_range(self):
        table = ImportanceTable(scores=torch.tensor([[0.0, 2.0], [1.0, 4.0]], dtype=torch.float64))
        normalized = normalize_importance(table, 1e-6)
        self.assertEqual(float(normalized.min()), 0.0)
        self.assertLess(float(normalized.max()), 1.0)
        self.assertGreater(float(normalized.max()), 0.999)

    def test_table_must_match_its_mapping(self):
        with self.assertRaises(ConfigurationError):
            HeadBudgetTable(
                budgets=torch.tensor([[4, 4]]),
                b_min=4,
                b_max=12,
                gamma=2.0,
                normalized=torch.tensor([[0.0, 1.0]], dtype=torch.float64),
            )

    def test_suite_passes(self):
        result = budget_suite(seed=2, instances=200)
        self.assertTrue(result.passed, result.detail)


class AllocationTests(unittest.TestCase):
    def setUp(self):
        self.table = map_budgets(torch.tensor([[0.0, 0.9], [0.4, 0.6]], dtype=torch.float64), 1, 3, 2.0)

    def test_reverse_gives_the_extremes_to_the_opposite_heads(self):
        self.assertEqual(self.table.budgets.tolist()[0], [1, 3])
        reverse = self.table.reversed()
        self.assertEqual((reverse.budget(0, 0), reverse.budget(0, 1)), (3, 1))
        self.assertEqual((reverse.b_min, reverse.b_max, reverse.gamma), (1, 3, 2.0))
        self.assertEqual(reverse.reversed().budgets.tolist(), self.table.budgets.tolist())

    def test_reverse_needs_normalized_importance(self):
        with self.assertRaises(ConfigurationError):
            HeadBudgetTable.fixed([[1, 3], [2, 2]]).reversed()

    def test_shuffle_moves_budgets_between_heads(self):
        shuffled = self.table.shuffled(5)
        self.assertEqual(sorted(shuffled.budgets.flatten().tolist()), sorted(self.table.budgets.flatten().tolist()))
        self.assertEqual(shuffled.budgets.tolist(), self.table.shuffled(5).budgets.tolist())
        moved = shuffled.normalized.flatten().sort().values
        self.assertTrue(torch.equal(moved, self.table.normalized.flatten().sort().values))

    def test_shuffle_without_normalized_importance(self):
        fixed = HeadBudgetTable.fixed([[1, 3], [2, 2]])
        shuffled = fixed.shuffled(0)
        self.assertEqual(sorted(shuffled.budgets.flatten().tolist()), [1, 2, 2, 3])
        self.assertIsNone(shuffled.normalized)


class ImportanceEstimationTests(unittest.TestCase):
    def setUp(self):
        clear_frozen_budget_table()
        self.config = small_config()
        self.model = SyntheticAttentionModel.one_signal_head(self.config.shape, SIGNAL, seed=self.config.seed)

    def test_masking_a_dead_head_changes_nothing(self):
        baseline = masked_rollout(self.config, None, 2, self.model)
        masked = masked_rollout(self.config, (0, 1), 2, self.model)
        self.assertTrue(torch.equal(baseline, masked))

    def test_masking_the_signal_head_moves_the_trajectory(self):
        baseline = masked_rollout(self.config, None, 2, self.model)
        masked = masked_rollout(self.config, SIGNAL, 2, self.model)
        self.assertFalse(torch.equal(baseline, masked))

    def test_signal_head_ranks_first_and_gets_the_largest_budget(self):
        importance = estimate_importance(["a cat", "a dog"], self.config, model=self.model)
        scores = importance.scores
        self.assertEqual(tuple(scores.shape), (2, 2))
        self.assertGreater(float(scores[SIGNAL]), 0.0)
        others = [float(scores[l, h]) for l in range(2) for h in range(2) if (l, h) != SIGNAL]
        self.assertEqual(others, [0.0, 0.0, 0.0])
        self.assertEqual(importance.prompts, ("a cat", "a dog"))

        table = map_budgets(
            normalize_importance(importance, self.config.epsilon),
            self.config.b_min,
            self.config.b_max,
            self.config.gamma,
            importance=importance,
        )
        self.assertEqual(table.budget(*SIGNAL), self.config.b_max)
        for layer, head in [(0, 0), (0, 1), (1, 1)]:
            self.assertEqual(table.budget(layer, head), self.config.b_min)

    def test_threaded_estimation_matches_serial(self):
        serial = estimate_importance(["x"], self.config, model=self.model)
        threaded = estimate_importance(["x"], self.config, model=self.model, workers=3)
        self.assertTrue(torch.equal(serial.scores, threaded.scores))

    def test_prompt_order_does_not_matter(self):
        a = estimate_importance(["p", "q"], self.config, model=self.model)
        b = estimate_importance(["q", "p"], self.config, model=self.model)
        self.assertTrue(torch.equal(a.scores, b.scores))

    def test_repeated_prompts_count_per_occurrence(self):
        p = estimate_importance(["p"], self.config, model=self.model).scores
        q = estimate_importance(["q"], self.config, model=self.model).scores
        weighted = estimate_importance(["p", "q", "p"], self.config, model=self.model)
        self.assertEqual(weighted.prompts, ("p", "p", "q"))
        self.assertEqual(len(weighted.seeds), 3)
        self.assertTrue(torch.allclose(weighted.scores, (2 * p + q) / 3, rtol=1e-12, atol=1e-15))

    def test_needs_prompts_and_long_enough_rollouts(self):
        with self.assertRaises(ConfigurationError):
            estimate_importance([], self.config, model=self.model)
        with self.assertRaises(ConfigurationError):
            estimate_importance(["p"], self.config, model=self.model, num_chunks=1)


class HistogramTests(unittest.TestCase):
    def test_counts_cover_every_head(self):
        scores = torch.rand(30, 12, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        histogram = importance_histogram(scores, bins=20)
        self.assertEqual(sum(histogram.counts), 360)
        self.assertEqual(len(histogram.bins()), 20)
        self.assertEqual(histogram.minimum, float(scores.min()))
        self.assertEqual(histogram.maximum, float(scores.max()))
        self.assertLessEqual(histogram.minimum, histogram.median)
        self.assertLessEqual(histogram.median, histogram.maximum)

    def test_constant_table_gives_one_bin(self):
        histogram = importance_histogram(torch.full((2, 3), 0.5), bins=10)
        self.assertEqual(histogram.counts, (6,))
        self.assertEqual(histogram.edges, (0.5, 0.5))

    def test_invalid_bins(self):
        with self.assertRaises(ConfigurationError):
            importance_histogram(torch.ones(2, 2), bins=0)


if __name__ == "__main__":
    unittest.main()
