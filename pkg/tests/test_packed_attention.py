import unittest

import torch

from models.errors import IntegrityError, ShapeError
from models.frames import FrameTensor
from models.kv_cache import KvCache
from models.packed import SegmentMeta
from models.scores import FrameSelection, SelectionMask
from services.packed_attention import (
    build_cu,
    dense_oracle,
    pack,
    packed_forward,
    relative_error,
    repack,
    scatter,
    varlen_attention,
)
from services.verification import equivalence_suite, random_instance


def _cache(frames, tokens=2, heads=2, dim=4, seed=0):
    generator = torch.Generator().manual_seed(seed)
    cache = KvCache(1)
    for f in frames:
        k = torch.randn((tokens, heads, dim), generator=generator)
        v = torch.randn((tokens, heads, dim), generator=generator)
        cache.append(0, FrameTensor(f, k), FrameTensor(f, v))
    return cache


def _mask(retained_by_head, query_frames=1):
    entries = [
        FrameSelection(batch=0, query_frame=qf, head=h, retained=tuple(retained), reserved=())
        for qf in range(query_frames)
        for h, retained in enumerate(retained_by_head)
    ]
    return SelectionMask(layer=0, entries=tuple(entries))


class BuildCuTests(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(build_cu([3, 2]).tolist(), [0, 3, 5])
        self.assertEqual(build_cu([]).tolist(), [0])
        self.assertEqual(build_cu([0, 4]).tolist(), [0, 0, 4])

    def test_negative_length(self):
        with self.assertRaises(IntegrityError):
            build_cu([2, -1])


class PackTests(unittest.TestCase):
    def test_segment_layout(self):
        cache = _cache([0, 1, 2])
        q = torch.randn(1, 2, 2, 2, 4)
        batch = pack(_mask([[0, 2], [1]], query_frames=2), q, cache)
        self.assertEqual(batch.num_segments, 4)
        self.assertEqual(batch.cu_q.tolist(), [0, 2, 4, 6, 8])
        self.assertEqual(batch.cu_k.tolist(), [0, 4, 6, 10, 12])
        self.assertEqual([m.head for m in batch.segment_meta], [0, 1, 0, 1])
        self.assertEqual(batch.segment_meta[0].retained, (0, 2))
        self.assertTrue(torch.equal(batch.k_pack[2:4], cache.rotated_key(0, 2)[:, 0, :]))

    def test_missing_frame(self):
        cache = _cache([0, 1])
        with self.assertRaises(IntegrityError):
            pack(_mask([[0, 5], [1]]), torch.randn(1, 1, 2, 2, 4), cache)

    def test_single_sequence_only(self):
        cache = _cache([0])
        with self.assertRaises(ShapeError):
            pack(_mask([[0], [0]]), torch.randn(2, 1, 2, 2, 4), cache)
        with self.assertRaises(ShapeError):
            pack(_mask([[0], [0]]), torch.randn(1, 2, 2, 4), cache)


class AttentionTests(unittest.TestCase):
    def test_single_key_returns_its_value(self):
        cache = _cache([0, 1], tokens=1)
        out = packed_forward(_mask([[1], [0]]), torch.randn(1, 1, 1, 2, 4), cache)
        self.assertTrue(torch.allclose(out[0, 0, 0, 0], cache.value(0, 1).data[0, 0]))
        self.assertTrue(torch.allclose(out[0, 0, 0, 1], cache.value(0, 0).data[0, 1]))

    def test_empty_retained_set_gives_zeros(self):
        cache = _cache([0, 1])
        q = torch.randn(1, 1, 2, 2, 4)
        out = packed_forward(_mask([[], [0, 1]]), q, cache)
        self.assertFalse(bool(out[0, 0, :, 0].any()))
        self.assertTrue(bool(out[0, 0, :, 1].any()))
        self.assertFalse(bool(dense_oracle(q, cache, _mask([[], [0, 1]]))[0, 0, :, 0].any()))

    def test_matches_dense_oracle_on_random_instances(self):
        generator = torch.Generator().manual_seed(21)
        for _ in range(200):
            q, cache, mask = random_instance(generator)
            packed = packed_forward(mask, q, cache)
            self.assertEqual(packed.shape, q.shape)
            self.assertLessEqual(relative_error(packed, dense_oracle(q, cache, mask)), 1e-5)

    def test_attention_weights_sum_to_one(self):
        generator = torch.Generator().manual_seed(8)
        cache = KvCache(1)
        for f in range(4):
            k = 40.0 * torch.randn((3, 2, 4), generator=generator, dtype=torch.float64)
            cache.append(0, FrameTensor(f, k), FrameTensor(f, torch.ones((3, 2, 4), dtype=torch.float64)))
        q = 40.0 * torch.randn((1, 2, 3, 2, 4), generator=generator, dtype=torch.float64)
        mask = _mask([[0, 2, 3], [1]], query_frames=2)
        for out in (dense_oracle(q, cache, mask), packed_forward(mask, q, cache)):
            self.assertTrue(bool(torch.isfinite(out).all()))
            self.assertLessEqual(float((out - 1.0).abs().max()), 1e-6)

    def test_segments_do_not_attend_across_boundaries(self):
        cache = _cache([0, 1, 2])
        q = torch.randn(1, 1, 2, 2, 4)
        alone = packed_forward(_mask([[0], [1]]), q, cache)
        together = packed_forward(_mask([[0], [1, 2]]), q, cache)
        self.assertTrue(torch.equal(alone[..., 0, :], together[..., 0, :]))

    def test_empty_batch(self):
        batch = pack(SelectionMask(layer=0, entries=()), torch.randn(1, 1, 2, 2, 4), _cache([0]))
        self.assertEqual(batch.num_segments, 0)
        self.assertEqual(varlen_attention(batch, head_dim=4).shape[0], 0)

    def test_suite_passes(self):
        result = equivalence_suite(seed=0, instances=100)
        self.assertTrue(result.passed, result.detail)
        self.assertLessEqual(result.worst_error, 1e-5)


class ScatterTests(unittest.TestCase):
    def test_scatter_then_repack_is_identity(self):
        cache = _cache([0, 1, 2])
        q = torch.randn(1, 2, 2, 2, 4)
        batch = pack(_mask([[0, 2], [1]], query_frames=2), q, cache)
        o_pack = varlen_attention(batch)
        self.assertTrue(torch.equal(repack(scatter(o_pack, batch.segment_meta, batch.cu_q), batch.segment_meta), o_pack))

    def test_order_of_segments_does_not_matter(self):
        metas = [SegmentMeta(0, 0, 0, 1, (0,)), SegmentMeta(0, 0, 0, 0, (0,))]
        o_pack = torch.arange(8, dtype=torch.float32).view(4, 2)
        out = scatter(o_pack, metas, build_cu([2, 2]))
        self.assertTrue(torch.equal(out[0, 0, :, 1], o_pack[0:2]))
        self.assertTrue(torch.equal(out[0, 0, :, 0], o_pack[2:4]))

    def test_overlapping_segments(self):
        metas = [SegmentMeta(0, 0, 0, 1, (0,)), SegmentMeta(0, 0, 0, 1, (1,))]
        with self.assertRaises(IntegrityError):
            scatter(torch.zeros(4, 2), metas, build_cu([2, 2]))

    def test_boundaries_must_match(self):
        metas = [SegmentMeta(0, 0, 0, 0, (0,))]
        with self.assertRaises(IntegrityError):
            scatter(torch.zeros(3, 2), metas, build_cu([2]))

    def test_unwritten_slot(self):
        metas = [SegmentMeta(0, 1, 0, 0, (0,))]
        with self.assertRaises(IntegrityError):
            scatter(torch.zeros(2, 2), metas, build_cu([2]))


if __name__ == "__main__":
    unittest.main()
