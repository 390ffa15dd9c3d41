import numpy as np
from django.test import SimpleTestCase
from scipy.stats import chisquare

from x3d.config import DatasetConfig
from x3d.datasets import (
    ROBUSTNESS_TRANSFORMS, ShapeDataset, Transform, augment, axis_rotation, canonical_class,
    gen_shapes, make_shape, sample_cylinder, sample_sphere, sample_torus,
)
from x3d.exceptions import ConfigError
from x3d.geometry import PointCloud
from x3d.structures import octant_assign


class SamplerTestCase(SimpleTestCase):

    def test_sphere_radius_and_normals(self):
        points, normals = sample_sphere(np.random.default_rng(0), 500)
        np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0)
        np.testing.assert_allclose(normals, points)

    def test_sphere_octants_are_uniform(self):
        points, _ = sample_sphere(np.random.default_rng(1), 8000)
        counts = np.bincount(octant_assign(points), minlength=8)
        self.assertGreater(chisquare(counts).pvalue, 1e-3)

    def test_torus_on_surface(self):
        points, normals = sample_torus(np.random.default_rng(2), 400)
        ring = np.sqrt(points[:, 0] ** 2 + points[:, 1] ** 2)
        np.testing.assert_allclose((ring - 1.0) ** 2 + points[:, 2] ** 2, 0.35 ** 2, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)

    def test_cylinder_normals_are_radial(self):
        points, normals = sample_cylinder(np.random.default_rng(3), 100)
        np.testing.assert_allclose(points[:, :2], 0.5 * normals[:, :2])
        np.testing.assert_array_equal(normals[:, 2], 0.0)

    def test_shapes_fit_unit_ball(self):
        for name in ('sphere', 'plane', 'line', 'cube', 'torus', 'cylinder'):
            with self.subTest(name=name):
                points, _ = make_shape(name, 200, np.random.default_rng(4), noise=0.01)
                self.assertAlmostEqual(np.max(np.linalg.norm(points, axis=1)), 1.0, places=12)

    def test_shapes_are_centered(self):
        for name in ('plane', 'line', 'torus'):
            with self.subTest(name=name):
                points, _ = make_shape(name, 300, np.random.default_rng(6), noise=0.02)
                np.testing.assert_allclose(points.mean(axis=0), 0.0, atol=1e-12)

    def test_aliases(self):
        self.assertEqual(canonical_class('Line-Segment'), 'line')
        self.assertEqual(canonical_class('cube-surface'), 'cube')
        with self.assertRaises(ConfigError):
            canonical_class('teapot')


class GenShapesTestCase(SimpleTestCase):

    def setUp(self):
        self.cfg = DatasetConfig(classes=('sphere', 'line', 'plane'), points=64, count=7, test_count=4, seed=9)

    def test_labels_cycle_through_classes(self):
        data = gen_shapes(self.cfg)
        self.assertEqual(data.labels.tolist(), [0, 1, 2, 0, 1, 2, 0])
        self.assertEqual(data.class_names, ('sphere', 'line', 'plane'))
        self.assertEqual(data.clouds[3].n_points, 64)

    def test_reproducible(self):
        first, second = gen_shapes(self.cfg), gen_shapes(self.cfg)
        for a, b in zip(first.clouds, second.clouds):
            np.testing.assert_array_equal(a.coords, b.coords)

    def test_splits_differ(self):
        train, test = gen_shapes(self.cfg, 'train'), gen_shapes(self.cfg, 'test')
        self.assertEqual(len(test), 4)
        self.assertFalse(np.allclose(train.clouds[0].coords, test.clouds[0].coords))

    def test_prefix_stable_when_count_grows(self):
        more = DatasetConfig(classes=self.cfg.classes, points=64, count=12, test_count=4, seed=9)
        np.testing.assert_array_equal(gen_shapes(more).clouds[5].coords, gen_shapes(self.cfg).clouds[5].coords)

    def test_line_is_collinear_after_rotation(self):
        cloud = gen_shapes(self.cfg).clouds[1]
        centered = cloud.coords - cloud.coords.mean(axis=0)
        singular = np.linalg.svd(centered, compute_uv=False)
        self.assertLess(singular[1], 1e-9)

    def test_needs_two_classes(self):
        with self.assertRaises(ConfigError):
            gen_shapes(DatasetConfig(classes=('sphere',)))

    def test_unknown_split(self):
        with self.assertRaises(ConfigError):
            gen_shapes(self.cfg, 'validation')


class TransformTestCase(SimpleTestCase):

    def setUp(self):
        points, normals = sample_sphere(np.random.default_rng(5), 50)
        self.cloud = PointCloud(coords=points * [1.0, 0.5, 0.2], normals=normals)

    def test_zero_rotation_is_identity(self):
        moved = augment(self.cloud, Transform('rotate', degrees=0.0))
        np.testing.assert_allclose(moved.coords, self.cloud.coords, atol=1e-15)

    def test_unit_scale_is_identity(self):
        np.testing.assert_array_equal(augment(self.cloud, Transform('scale', factor=1.0)).coords, self.cloud.coords)

    def test_zero_jitter_is_identity(self):
        np.testing.assert_array_equal(augment(self.cloud, Transform('jitter', sigma=0.0)).coords, self.cloud.coords)

    def test_rotation_preserves_norms_and_turns_normals(self):
        moved = augment(self.cloud, Transform('rotate', axis='x', degrees=90.0))
        np.testing.assert_allclose(
            np.linalg.norm(moved.coords, axis=1), np.linalg.norm(self.cloud.coords, axis=1),
        )
        np.testing.assert_allclose(moved.normals[:, 1], -self.cloud.normals[:, 2], atol=1e-12)
        np.testing.assert_allclose(moved.coords[:, 0], self.cloud.coords[:, 0])

    def test_quarter_turn_is_exact(self):
        moved = augment(self.cloud, Transform('rotate', axis='z', degrees=90.0))
        np.testing.assert_array_equal(moved.coords[:, 0], -self.cloud.coords[:, 1])
        np.testing.assert_array_equal(moved.coords[:, 1], self.cloud.coords[:, 0])
        np.testing.assert_array_equal(moved.coords[:, 2], self.cloud.coords[:, 2])
        self.assertNotEqual(axis_rotation('z', 30.0)[0, 0], 1.0)

    def test_jitter_is_independent_per_cloud(self):
        data = ShapeDataset([self.cloud, self.cloud], np.array([0, 0]), ('sphere',))
        transform = Transform('jitter', sigma=0.01, seed=3)
        moved = data.transformed(transform)
        first = moved.clouds[0].coords - self.cloud.coords
        second = moved.clouds[1].coords - self.cloud.coords
        self.assertFalse(np.allclose(first, second))
        np.testing.assert_array_equal(data.transformed(transform).clouds[1].coords, moved.clouds[1].coords)

    def test_parse_and_label(self):
        self.assertEqual(Transform.parse('rotate:z:30').label, 'rotate:z:30')
        self.assertEqual(Transform.parse('rotate:45').axis, 'z')
        self.assertEqual(Transform.parse('scale:0.9').factor, 0.9)
        self.assertEqual(Transform.parse('jitter:0.01:4').seed, 4)
        for text in ('shear:2', 'scale', 'rotate:q:10', 'scale:big'):
            with self.subTest(text=text), self.assertRaises(ConfigError):
                Transform.parse(text)

    def test_default_robustness_set(self):
        labels = [t.label for t in ROBUSTNESS_TRANSFORMS]
        self.assertEqual(labels, ['rotate:z:30', 'rotate:z:60', 'rotate:z:90', 'scale:0.9', 'scale:1.1'])
