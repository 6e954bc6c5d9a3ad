import unittest
from dataclasses import replace
from decimal import Decimal
from fractions import Fraction

from models.budgets import HeadBudgetTable
from models.errors import ConfigurationError
from models.frames import ModelShape
from models.scores import FrameSelection, SelectionMask
from services.cost_model import (
    cost_report,
    format_cost_table,
    frame_cost,
    mask_frame_cost,
    memory_overhead,
    round_decimal,
    to_mib,
)
from tests.fixtures import reference_budget_table, small_shape


class RoundingTests(unittest.TestCase):
    def test_half_up(self):
        self.assertEqual(round_decimal(Fraction(1, 8), 2), Decimal("0.13"))
        self.assertEqual(round_decimal(Fraction(1958, 30), 2), Decimal("65.27"))
        self.assertEqual(to_mib(1048576), Decimal("1.00"))


class ReferenceCostTests(unittest.TestCase):
    def setUp(self):
        self.shape = ModelShape.reference()
        self.table = reference_budget_table()

    def test_fixture_layer_sums(self):
        sums = self.table.layer_sums()
        self.assertEqual((min(sums), sum(sums), max(sums)), (61, 1958, 72))

    def test_frame_cost(self):
        cost = frame_cost(self.table, self.shape)
        self.assertEqual(cost.c_pack, 5874)
        self.assertEqual(cost.c_dense, 22680)
        self.assertAlmostEqual(cost.ratio, 0.259, places=3)
        self.assertAlmostEqual(cost.speedup, 3.86, places=2)

    def test_memory_overhead(self):
        memory = memory_overhead(self.table, self.shape)
        self.assertEqual(memory.m_q_bytes, 14376960)
        self.assertEqual(memory.block_bytes, 399360)
        self.assertEqual(memory.m_pack_mib(61), Decimal("153.10"))
        self.assertEqual(memory.m_pack_mib(72), Decimal("178.24"))

    def test_report_figures(self):
        data = cost_report(self.table, self.shape).to_dict()
        self.assertEqual(data["ratio"], 0.259)
        self.assertEqual(data["theoretical_speedup"], 3.86)
        self.assertEqual(data["m_q_mib"], 13.71)
        self.assertEqual(data["block_mib"], 0.381)
        self.assertEqual(data["s_avg"], 65.27)
        self.assertEqual(data["m_pack_mib"], {"min": 153.10, "avg": 162.86, "max": 178.24})
        self.assertEqual(data["token_flops_pack"], 5874 * 1560 * 1560 * 128)

    def test_table_lines(self):
        lines = format_cost_table(cost_report(self.table, self.shape))
        self.assertIn("   c_pack=5874  c_dense=22680", lines)
        self.assertIn("   M_pack min/avg/max = 153.10 / 162.86 / 178.24 MiB", lines)

    def test_fp32_doubles_memory(self):
        half = memory_overhead(self.table, self.shape)
        full = memory_overhead(self.table, self.shape, bytes_per_element=4)
        self.assertEqual(full.m_pack_max, 2 * half.m_pack_max)

    def test_memory_is_linear_in_tokens_head_dim_and_chunk_frames(self):
        base = memory_overhead(self.table, self.shape)
        for field, factor in (("tokens_per_frame", 2), ("head_dim", 2), ("chunk_frames", 3)):
            shape = replace(self.shape, **{field: getattr(self.shape, field) * factor})
            scaled = memory_overhead(self.table, shape)
            self.assertEqual(scaled.m_q_bytes, factor * base.m_q_bytes, field)
            self.assertEqual(scaled.m_kv_bytes, tuple(factor * kv for kv in base.m_kv_bytes), field)
            self.assertEqual(scaled.m_pack_max, factor * base.m_pack_max, field)
            self.assertEqual(scaled.m_pack_avg, factor * base.m_pack_avg, field)
        self.assertEqual(memory_overhead(self.table, replace(self.shape, chunk_frames=1)).m_q_bytes, 12 * 399360)

    def test_table_must_match_the_model(self):
        with self.assertRaises(ConfigurationError):
            frame_cost(HeadBudgetTable.uniform(30, 8, 4), self.shape)
        with self.assertRaises(ConfigurationError):
            memory_overhead(self.table, self.shape, bytes_per_element=0)


class MaskCostTests(unittest.TestCase):
    def test_counts_history_but_not_the_current_chunk(self):
        entries = (
            FrameSelection(batch=0, query_frame=0, head=0, retained=(0, 3, 6, 7), reserved=(0, 6, 7)),
            FrameSelection(batch=0, query_frame=0, head=1, retained=(0, 6, 7), reserved=(0, 6, 7)),
        )
        mask = SelectionMask(layer=0, entries=entries, generated=(6, 7))
        self.assertEqual(mask_frame_cost([mask]), 3)

    def test_uniform_table_on_small_shape(self):
        shape = small_shape()
        cost = frame_cost(HeadBudgetTable.uniform(2, 2, 3), shape)
        self.assertEqual((cost.c_pack, cost.c_dense), (24, 48))


if __name__ == "__main__":
    unittest.main()
