import numpy as np
from django.test import SimpleTestCase

from x3d.autodiff import ParamBuilder, Tape, mlp_forward
from x3d.blocks import BlockConfig, LocalRegions
from x3d.blocks.ncp import OverlapSet, center_pool, declare_ncp, fuse_spec, overlap_context, propagate
from x3d.geometry import NeighborhoodIndex, ball_query, farthest_point_sample, knn_query


def brute_force_context(updated, nbr, target):
    rows = [
        updated[i, j]
        for i in range(nbr.m)
        for j in range(nbr.k)
        if j < nbr.valid_counts[i] and nbr.neighbors[i, j] == target
    ]
    if not rows:
        return np.zeros(updated.shape[-1]), 0
    return np.mean(rows, axis=0), len(rows)


class OverlapContextTestCase(SimpleTestCase):

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(8, 30))
            coords = rng.normal(size=(n, 3))
            centers = farthest_point_sample(coords, int(rng.integers(2, n // 2)))
            if rng.uniform() < 0.5:
                nbr = knn_query(coords, centers, int(rng.integers(2, 6)))
            else:
                nbr = ball_query(coords, centers, radius=1.0, k_max=int(rng.integers(2, 6)))
            updated = rng.normal(size=(nbr.m, nbr.k, 4))
            context, counts = overlap_context(Tape(), updated, nbr, n_points=n)
            for row, target in enumerate(nbr.centers):
                expected, count = brute_force_context(updated, nbr, target)
                self.assertEqual(counts[row], count)
                np.testing.assert_allclose(context.value[row], expected, atol=1e-12)

    def test_centers_count_their_own_region(self):
        coords = np.random.default_rng(1).normal(size=(20, 3))
        nbr = knn_query(coords, farthest_point_sample(coords, 5), 4)
        _, counts = overlap_context(Tape(), np.zeros((5, 4, 2)), nbr, n_points=20)
        self.assertTrue(np.all(counts >= 1))

    def test_only_overlapping_regions_contribute(self):
        nbr = NeighborhoodIndex(
            centers=[0, 3, 6],
            neighbors=[[0, 1, 2], [3, 1, 4], [6, 7, 8]],
            valid_counts=[3, 3, 3],
        )
        rng = np.random.default_rng(2)
        updated = rng.normal(size=(3, 3, 2))
        base, _ = overlap_context(Tape(), updated, nbr, targets=[1], n_points=9)
        changed = updated.copy()
        changed[2] += 100.0
        moved, _ = overlap_context(Tape(), changed, nbr, targets=[1], n_points=9)
        np.testing.assert_array_equal(moved.value, base.value)
        np.testing.assert_allclose(base.value[0], (updated[0, 1] + updated[1, 1]) / 2)

    def test_padded_slots_do_not_count(self):
        nbr = NeighborhoodIndex(centers=[0, 2], neighbors=[[0, 0, 0], [2, 0, 2]], valid_counts=[1, 2])
        updated = np.arange(18, dtype=float).reshape(2, 3, 3)
        context, counts = overlap_context(Tape(), updated, nbr, targets=[0], n_points=3)
        self.assertEqual(counts.tolist(), [2])
        np.testing.assert_allclose(context.value[0], (updated[0, 0] + updated[1, 1]) / 2)

    def test_point_outside_every_region_gets_zero(self):
        nbr = NeighborhoodIndex(centers=[0], neighbors=[[0, 1]], valid_counts=[2])
        context, counts = overlap_context(Tape(), np.ones((1, 2, 3)), nbr, targets=[4], n_points=5)
        self.assertEqual(counts.tolist(), [0])
        np.testing.assert_array_equal(context.value, 0.0)


class OverlapSetTestCase(SimpleTestCase):

    def test_members_agree_with_counts(self):
        coords = np.random.default_rng(3).normal(size=(25, 3))
        nbr = knn_query(coords, farthest_point_sample(coords, 8), 5)
        overlap = OverlapSet.build(nbr, 25)
        _, counts = overlap_context(Tape(), np.zeros((8, 5, 1)), nbr, targets=np.arange(25), n_points=25)
        np.testing.assert_array_equal(overlap.counts, counts)
        for point, regions in enumerate(overlap.members):
            for region in regions:
                self.assertIn(point, nbr.neighbors[region, :nbr.valid_counts[region]].tolist())


class PropagateTestCase(SimpleTestCase):

    def test_fuses_context_with_pooled_feature(self):
        coords = np.random.default_rng(4).normal(size=(18, 3))
        nbr = knn_query(coords, farthest_point_sample(coords, 6), 4)
        regions = LocalRegions.build(coords, nbr)
        cfg = BlockConfig(in_channels=3, channels=5, hidden=7, k=4)
        builder = ParamBuilder(0)
        declare_ncp(builder, 'block', cfg.channels, cfg.hidden)
        store = builder.build()
        updated = np.random.default_rng(5).normal(size=(6, 4, 5))

        trace = {}
        out = propagate(Tape(store), updated, regions, cfg, 'block', trace)
        np.testing.assert_array_equal(trace['pooled'], updated.max(axis=1))
        joined = np.concatenate([trace['context'], trace['pooled']], axis=1)
        expected = mlp_forward(fuse_spec(5, 7), store, joined, prefix='block.context_fuse').value
        np.testing.assert_allclose(out.value, expected, atol=1e-12)
        self.assertEqual(out.value.shape, (6, 5))

    def test_pool_and_context_do_not_depend_on_order(self):
        coords = np.random.default_rng(6).normal(size=(22, 3))
        nbr = ball_query(coords, farthest_point_sample(coords, 7), radius=0.9, k_max=5)
        regions = LocalRegions.build(coords, nbr)
        updated = np.random.default_rng(7).normal(size=(7, 5, 3))

        tape = Tape()
        pooled_first = center_pool(tape, updated, regions.mask)
        context_second, counts_second = overlap_context(tape, updated, nbr, n_points=22)
        tape = Tape()
        context_first, counts_first = overlap_context(tape, updated, nbr, n_points=22)
        pooled_second = center_pool(tape, updated, regions.mask)

        np.testing.assert_array_equal(pooled_first.value, pooled_second.value)
        np.testing.assert_array_equal(context_first.value, context_second.value)
        np.testing.assert_array_equal(counts_first, counts_second)
