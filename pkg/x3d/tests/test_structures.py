import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from x3d.exceptions import ConfigError
from x3d.structures import (
    PCA_DIM, PH_DIM, compute_structure, lle_descriptor, lle_objective, lle_weights,
    octant_assign, pca_descriptor, pointhop_descriptor, shape_ratios, structure_dim,
)


def jacobi_eigenvalues(matrix, sweeps=50):
    a = np.array(matrix, dtype=float)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(a ** 2) - np.sum(np.diag(a) ** 2))
        if off < 1e-15:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta ** 2 + 1)) if theta != 0 else 1.0
                c = 1 / np.sqrt(t ** 2 + 1)
                s = t * c
                rot = np.eye(3)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))[::-1]


def constrained_lstsq(offsets, ridge):
    # KKT system of min w'Gw + ridge w'w s.t. sum w = 1
    n = offsets.shape[0]
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = 2 * (offsets @ offsets.T + ridge * np.eye(n))
    system[:n, n] = 1
    system[n, :n] = 1
    rhs = np.zeros(n + 1)
    rhs[n] = 1
    return np.linalg.solve(system, rhs)[:n]


class PointHopTestCase(SimpleTestCase):

    def setUp(self):
        self.offsets = np.random.default_rng(0).normal(size=(1000, 16, 3))

    def test_dimension(self):
        self.assertEqual(pointhop_descriptor(self.offsets).data.shape, (1000, PH_DIM))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        perm = np.stack([rng.permutation(16) for _ in range(1000)])
        shuffled = np.take_along_axis(self.offsets, perm[..., None], axis=1)
        np.testing.assert_allclose(
            pointhop_descriptor(shuffled).data, pointhop_descriptor(self.offsets).data, atol=1e-9,
        )

    def test_scale_equivariance(self):
        base = pointhop_descriptor(self.offsets).data
        scaled = pointhop_descriptor(self.offsets * 2.5).data
        np.testing.assert_allclose(scaled, 2.5 * base, rtol=1e-12, atol=1e-14)

    def test_axis_reflection_permutes_octants(self):
        flip = np.array([-1.0, 1.0, 1.0])
        base = pointhop_descriptor(self.offsets).data.reshape(-1, 8, 3)
        reflected = pointhop_descriptor(self.offsets * flip).data.reshape(-1, 8, 3)
        for octant in range(8):
            np.testing.assert_array_equal(reflected[:, octant ^ 4], base[:, octant] * flip)

    def test_empty_octants_are_zero(self):
        offsets = np.array([[0.5, 0.5, 0.5], [1.0, 1.0, 1.0]])
        data = pointhop_descriptor(offsets).data.reshape(8, 3)
        np.testing.assert_allclose(data[7], [0.75, 0.75, 0.75])
        np.testing.assert_array_equal(data[:7], 0.0)

    def test_zero_offsets_go_to_octant_zero(self):
        self.assertEqual(octant_assign(np.zeros(3)), 0)

    def test_padded_slots_ignored(self):
        offsets = np.array([[[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0], [-1.0, -1.0, -1.0]]])
        data = pointhop_descriptor(offsets, valid_counts=[1]).data.reshape(8, 3)
        np.testing.assert_array_equal(data[0], 0.0)


class PcaDescriptorTestCase(SimpleTestCase):

    def test_line_is_linear(self):
        t = np.linspace(-1, 1, 16)
        offsets = np.stack([t, 2 * t, -t], axis=1)
        np.testing.assert_allclose(shape_ratios(pca_descriptor(offsets)), [1, 0, 0], atol=1e-6)

    def test_isotropic_plane_is_planar(self):
        grid = np.array([[x, y, 0.0] for x in range(-2, 3) for y in range(-2, 3)])
        np.testing.assert_allclose(shape_ratios(pca_descriptor(grid)), [0, 1, 0], atol=1e-6)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(2)
        offsets = rng.normal(size=(16, 3)) * [3.0, 1.0, 0.2]
        base = shape_ratios(pca_descriptor(offsets))
        for matrix in Rotation.random(200, random_state=3).as_matrix():
            rotated = offsets @ matrix.T
            np.testing.assert_allclose(shape_ratios(pca_descriptor(rotated)), base, atol=1e-8)

    def test_eigenvalues_match_jacobi(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            offsets = rng.normal(size=(16, 3))
            centered = offsets - offsets.mean(axis=0)
            expected = jacobi_eigenvalues(centered.T @ centered / 16)
            np.testing.assert_allclose(pca_descriptor(offsets).data[:3], expected, atol=1e-9)

    def test_layout_and_sign_convention(self):
        data = pca_descriptor(np.random.default_rng(5).normal(size=(4, 16, 3))).data
        self.assertEqual(data.shape, (4, PCA_DIM))
        vectors = data[:, 3:12].reshape(4, 3, 3)
        for region in vectors:
            for v in region:
                self.assertGreater(v[np.argmax(np.abs(v))], 0)
                self.assertAlmostEqual(np.linalg.norm(v), 1.0, places=12)

    def test_degenerate_region(self):
        result = pca_descriptor(np.zeros((5, 3)))
        self.assertTrue(result.degenerate[0])
        np.testing.assert_array_equal(shape_ratios(result), 0.0)

    def test_about_center(self):
        offsets = np.ones((8, 3))
        self.assertTrue(pca_descriptor(offsets).degenerate[0])
        self.assertFalse(pca_descriptor(offsets, about='center').degenerate[0])
        with self.assertRaises(ConfigError):
            pca_descriptor(offsets, about='origin')


class LleWeightsTestCase(SimpleTestCase):

    def test_weights_sum_to_one(self):
        offsets = np.random.default_rng(6).normal(size=(16, 3))
        self.assertAlmostEqual(lle_weights(offsets).data.sum(), 1.0, places=12)

    def test_matches_constrained_least_squares(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            offsets = rng.normal(size=(16, 3))
            ridge = 1e-3 * np.sum(offsets ** 2) / 16
            oracle = constrained_lstsq(offsets, ridge)
            weights = lle_weights(offsets).data
            self.assertLessEqual(
                lle_objective(weights, offsets), lle_objective(oracle, offsets) + 1e-10,
            )

    def test_feasible_perturbations_do_not_improve(self):
        rng = np.random.default_rng(8)
        offsets = rng.normal(size=(10, 3))
        weights = lle_weights(offsets).data
        best = lle_objective(weights, offsets)
        for _ in range(50):
            step = rng.normal(size=10)
            step -= step.mean()
            self.assertGreaterEqual(lle_objective(weights + 1e-3 * step, offsets), best - 1e-12)

    def test_weights_follow_neighbor_order(self):
        offsets = np.random.default_rng(9).normal(size=(8, 3))
        perm = np.array([3, 1, 7, 0, 2, 6, 5, 4])
        base = lle_weights(offsets).data
        shuffled = lle_weights(offsets[perm]).data
        np.testing.assert_allclose(shuffled, base[perm], atol=1e-10)
        self.assertFalse(np.allclose(shuffled, base))

    def test_padded_slots_zero(self):
        offsets = np.random.default_rng(10).normal(size=(1, 6, 3))
        data = lle_descriptor(offsets, valid_counts=[4]).data
        np.testing.assert_array_equal(data[0, 4:], 0.0)
        self.assertAlmostEqual(data[0, :4].sum(), 1.0, places=12)

    def test_all_zero_offsets(self):
        weights = lle_weights(np.zeros((4, 3))).data
        np.testing.assert_allclose(weights, 0.25)


class DispatchTestCase(SimpleTestCase):

    def test_structure_dims(self):
        self.assertEqual(structure_dim('ph', 16), 24)
        self.assertEqual(structure_dim('pca', 16), 15)
        self.assertEqual(structure_dim('lr', 16), 16)

    def test_unknown_kind(self):
        with self.assertRaises(ConfigError):
            structure_dim('fpfh', 16)
        with self.assertRaises(ConfigError):
            compute_structure('fpfh', np.zeros((2, 3)))
