import unittest

import torch

from models.budgets import HeadBudgetTable
from models.errors import ConfigurationError
from runtime import clear_frozen_budget_table, freeze_budget_table, rollout_active
from services.cache_policies import (
    ATTENTION_ONLY,
    ATTENTION_SINK,
    CHUNK_SHARED,
    DENSE_WINDOW,
    DIVERSITY_ONLY,
    FOCUSED,
    RANDOM_BUDGET,
    REVERSE_BUDGET,
    UNIFORM_BUDGET,
    make_policy,
)
from services.cost_model import mask_frame_cost
from services.rollout_sim import compare_policies, dense_policy, dense_trajectory, run_rollout
from services.head_importance import map_budgets
from services.synthetic_model import SyntheticAttentionModel
from tests.fixtures import small_config

UNEVEN = [[1, 3], [2, 2]]


class RolloutTestCase(unittest.TestCase):
    def setUp(self):
        clear_frozen_budget_table()
        self.config = small_config()
        self.model = SyntheticAttentionModel(self.config.shape, seed=self.config.seed)
        self.table = HeadBudgetTable.fixed(UNEVEN)

    def tearDown(self):
        clear_frozen_budget_table()

    def rollout(self, policy, num_chunks=3, **kwargs):
        return run_rollout(self.config, policy, num_chunks, model=self.model, log=False, **kwargs)


class RolloutBehaviourTests(RolloutTestCase):
    def test_full_budgets_reduce_to_a_full_window(self):
        focused, _ = self.rollout(make_policy(FOCUSED, budgets=HeadBudgetTable.uniform(2, 2, 100)), num_chunks=4)
        window, _ = self.rollout(make_policy(DENSE_WINDOW, window=100), num_chunks=4)
        self.assertTrue(torch.equal(focused, window))

    def test_deterministic(self):
        policy = make_policy(FOCUSED, budgets=self.table)
        a, trace_a = self.rollout(policy)
        b, trace_b = self.rollout(policy)
        self.assertTrue(torch.equal(a, b))
        self.assertEqual(trace_a.rows, trace_b.rows)

    def test_earlier_chunks_do_not_see_later_ones(self):
        for policy in (dense_policy(self.config), make_policy(FOCUSED, budgets=self.table)):
            short, _ = self.rollout(policy, num_chunks=2)
            long, _ = self.rollout(policy, num_chunks=3)
            self.assertEqual(long.shape[0], 6)
            self.assertTrue(torch.equal(short, long[:4]), policy.name)

    def test_trace_cost_matches_recorded_masks(self):
        trajectory, trace = self.rollout(make_policy(FOCUSED, budgets=self.table), record_masks=True)
        self.assertEqual(len(trace.rows), 3)
        self.assertEqual(len(trace.masks), 3)
        for row, masks in zip(trace.rows, trace.masks):
            self.assertEqual(row.frame_cost, mask_frame_cost(masks))
            for mask in masks:
                mask.check(self.table)
        self.assertEqual(trace.rows[0].frame_cost, 0)
        self.assertEqual(tuple(trajectory.shape), (6, *self.config.shape.frame_shape))
        self.assertEqual(len({r["chunk"] for r in trace.mask_records()}), 3)

    def test_guard_is_released(self):
        self.rollout(dense_policy(self.config), num_chunks=1)
        self.assertFalse(rollout_active())

    def test_divergence_against_itself_is_zero(self):
        baseline = dense_trajectory(self.config, 3, self.model)
        _, trace = self.rollout(dense_policy(self.config), baseline=baseline)
        self.assertEqual([row.divergence_vs_dense for row in trace.rows], [0.0, 0.0, 0.0])


class PolicyTests(RolloutTestCase):
    def test_dense_window_bounds_the_cache(self):
        _, trace = self.rollout(make_policy(DENSE_WINDOW, window=2), num_chunks=5)
        self.assertEqual([row.cache_frames for row in trace.rows], [2, 4, 4, 4, 4])
        self.assertEqual(max(row.history_frames for row in trace.rows), 2)

    def test_attention_sink_keeps_the_sink(self):
        _, trace = self.rollout(make_policy(ATTENTION_SINK, window=2), num_chunks=4, record_masks=True)
        for mask in trace.masks[-1]:
            for entry in mask.entries:
                self.assertEqual(mask.historical(entry), (0, 5))

    def test_attention_sink_counts_the_sink_inside_the_window(self):
        _, trace = self.rollout(make_policy(ATTENTION_SINK, window=3), num_chunks=4, record_masks=True)
        self.assertEqual(max(row.history_frames for row in trace.rows), 3)
        for mask in trace.masks[-1]:
            for entry in mask.entries:
                self.assertEqual(mask.historical(entry), (0, 4, 5))

    def test_budgeted_policy_needs_a_table(self):
        with self.assertRaises(ConfigurationError):
            self.rollout(make_policy(FOCUSED))
        with self.assertRaises(ConfigurationError):
            self.rollout(make_policy(FOCUSED, budgets=HeadBudgetTable.uniform(3, 2, 2)))

    def test_frozen_table_is_used_by_default(self):
        freeze_budget_table(self.table)
        implicit, _ = self.rollout(make_policy(FOCUSED))
        explicit, _ = self.rollout(make_policy(FOCUSED, budgets=self.table))
        self.assertTrue(torch.equal(implicit, explicit))

    def test_uniform_budget_uses_the_rounded_mean(self):
        _, trace = self.rollout(make_policy(UNIFORM_BUDGET, budgets=self.table), num_chunks=4, record_masks=True)
        for mask in trace.masks[-1]:
            for entry in mask.entries:
                self.assertEqual(len(set(entry.retained) - set(entry.reserved)), 2)

    def test_reverse_and_random_budgets_derive_from_the_table(self):
        table = map_budgets(torch.tensor([[0.0, 0.9], [0.4, 0.6]], dtype=torch.float64), 1, 3, 2.0)
        reverse = make_policy(REVERSE_BUDGET, budgets=table).resolve_budgets(self.config)
        self.assertEqual(reverse.budgets.tolist(), table.reversed().budgets.tolist())
        shuffled = make_policy(RANDOM_BUDGET, budgets=table).resolve_budgets(self.config)
        self.assertEqual(shuffled.budgets.tolist(), table.shuffled(self.config.seed).budgets.tolist())
        seeded = make_policy(RANDOM_BUDGET, budgets=table, seed=11).resolve_budgets(self.config)
        self.assertEqual(seeded.budgets.tolist(), table.shuffled(11).budgets.tolist())
        for variant in (REVERSE_BUDGET, RANDOM_BUDGET):
            _, trace = self.rollout(make_policy(variant, budgets=table), record_masks=True)
            self.assertEqual(trace.policy, variant)
            for masks in trace.masks:
                for mask in masks:
                    mask.check(table.reversed() if variant == REVERSE_BUDGET else table.shuffled(self.config.seed))

    def test_chunk_shared_selects_once_per_head(self):
        _, trace = self.rollout(make_policy(CHUNK_SHARED, budgets=self.table), num_chunks=4, record_masks=True)
        for mask in trace.masks[-1]:
            for head in range(2):
                first = mask.lookup(0, 0, head).retained
                self.assertEqual(mask.lookup(0, 1, head).retained, first)

    def test_single_score_variants_run(self):
        for variant in (ATTENTION_ONLY, DIVERSITY_ONLY):
            _, trace = self.rollout(make_policy(variant, budgets=self.table))
            self.assertEqual(trace.policy, variant)

    def test_invalid_policies(self):
        with self.assertRaises(ConfigurationError):
            make_policy("random")
        with self.assertRaises(ConfigurationError):
            make_policy(FOCUSED, lam=2.0)
        with self.assertRaises(ConfigurationError):
            make_policy(ATTENTION_SINK, window=1, sinks=(0, 1))


class ComparePoliciesTests(RolloutTestCase):
    def test_needs_two_policies(self):
        with self.assertRaises(ConfigurationError):
            compare_policies(self.config, [dense_policy(self.config)], 2, self.model)

    def test_dense_window_matches_the_baseline(self):
        summaries = compare_policies(
            self.config, [dense_policy(self.config), make_policy(FOCUSED, budgets=self.table)], 3, self.model
        )
        self.assertEqual([s.policy for s in summaries], [DENSE_WINDOW, FOCUSED])
        self.assertEqual(summaries[0].divergence, 0.0)
        self.assertGreaterEqual(summaries[1].divergence, 0.0)
        self.assertLessEqual(summaries[1].total_frame_cost, summaries[0].total_frame_cost)


if __name__ == "__main__":
    unittest.main()
