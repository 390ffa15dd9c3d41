import shutil
import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from x3d.autodiff import ParamBuilder
from x3d.exceptions import FormatError
from x3d.fileio import (
    read_checkpoint, read_cloud, read_embeddings_csv, read_ply, read_x3pc,
    write_checkpoint, write_descriptors_csv, write_embeddings_csv, write_ply, write_x3pc,
)
from x3d.geometry import PointCloud


class FileTestCase(SimpleTestCase):

    def setUp(self):
        self.dir = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.dir)
        rng = np.random.default_rng(0)
        self.cloud = PointCloud(
            coords=rng.normal(size=(12, 3)),
            features=rng.normal(size=(12, 2)),
            labels=np.arange(12) % 3,
        )


class PlyTestCase(FileTestCase):

    def test_write_then_read(self):
        cloud = PointCloud(coords=self.cloud.coords, labels=self.cloud.labels, normals=np.eye(3)[np.arange(12) % 3])
        write_ply(self.dir / 'a.ply', cloud)
        back = read_ply(self.dir / 'a.ply')
        np.testing.assert_array_equal(back.coords, cloud.coords)
        np.testing.assert_array_equal(back.normals, cloud.normals)
        np.testing.assert_array_equal(back.labels, cloud.labels)
        self.assertIsNone(back.features)

    def test_extra_properties_become_features(self):
        text = (
            "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
            "property float x\nproperty float intensity\nproperty float y\nproperty float z\n"
            "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
            "1 0.5 2 3\n4 0.25 5 6\n"
        )
        (self.dir / 'b.ply').write_text(text, encoding='ascii')
        cloud = read_ply(self.dir / 'b.ply')
        np.testing.assert_array_equal(cloud.coords, [[1, 2, 3], [4, 5, 6]])
        np.testing.assert_array_equal(cloud.features[:, 0], [0.5, 0.25])

    def test_rejects_malformed(self):
        cases = {
            'binary.ply': "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n",
            'noz.ply': "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n",
            'short.ply': "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                         "property float z\nend_header\n1 2 3\n",
            'text.ply': "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                        "property float z\nend_header\n1 two 3\n",
            'other.ply': "solid cube\n",
        }
        for name, text in cases.items():
            (self.dir / name).write_text(text, encoding='ascii')
            with self.subTest(name=name), self.assertRaises(FormatError):
                read_ply(self.dir / name)


class X3pcTestCase(FileTestCase):

    def test_write_then_read(self):
        write_x3pc(self.dir / 'a.x3pc', self.cloud)
        back = read_x3pc(self.dir / 'a.x3pc')
        np.testing.assert_array_equal(back.coords, self.cloud.coords)
        np.testing.assert_array_equal(back.features, self.cloud.features)
        np.testing.assert_array_equal(back.labels, self.cloud.labels)

    def test_layout(self):
        cloud = PointCloud(coords=[[1.0, 2.0, 3.0]])
        write_x3pc(self.dir / 'one.x3pc', cloud)
        data = (self.dir / 'one.x3pc').read_bytes()
        self.assertEqual(data[:4], b'X3PC')
        self.assertEqual(struct.unpack_from('<II', data, 4), (1, 0))
        self.assertEqual(struct.unpack_from('<3d', data, 12), (1.0, 2.0, 3.0))
        self.assertEqual(len(data), 12 + 24)

    def test_rejects_truncated_and_trailing(self):
        write_x3pc(self.dir / 'a.x3pc', self.cloud)
        data = (self.dir / 'a.x3pc').read_bytes()
        (self.dir / 'cut.x3pc').write_bytes(data[:40])
        (self.dir / 'long.x3pc').write_bytes(data + b'\x00' * 3)
        (self.dir / 'magic.x3pc').write_bytes(b'NOPE' + data[4:])
        for name in ('cut.x3pc', 'long.x3pc', 'magic.x3pc'):
            with self.subTest(name=name), self.assertRaises(FormatError):
                read_x3pc(self.dir / name)

    def test_read_cloud_dispatch(self):
        write_x3pc(self.dir / 'a.x3pc', self.cloud)
        self.assertEqual(read_cloud(self.dir / 'a.x3pc').n_points, 12)
        with self.assertRaises(FormatError):
            read_cloud(self.dir / 'a.obj')


class CheckpointTestCase(FileTestCase):

    def store(self):
        builder = ParamBuilder(4)
        builder.declare('block0.es_mlp.0.weight', (24, 8))
        builder.declare('block0.es_mlp.0.bias', (8,), init='zeros')
        builder.declare('head.0.weight', (8, 3))
        store = builder.build()
        store.stats['block0.es_mlp.0'] = (np.arange(8.0), np.ones(8))
        return store

    def test_write_then_read(self):
        store = self.store()
        write_checkpoint(self.dir / 'a.x3ck', store)
        back = read_checkpoint(self.dir / 'a.x3ck')
        np.testing.assert_array_equal(back.values, store.values)
        self.assertEqual(back.layout, store.layout)
        mean, var = back.stats['block0.es_mlp.0']
        np.testing.assert_array_equal(mean, np.arange(8.0))
        np.testing.assert_array_equal(var, np.ones(8))

    def test_rejects_corrupt(self):
        write_checkpoint(self.dir / 'a.x3ck', self.store())
        data = (self.dir / 'a.x3ck').read_bytes()
        (self.dir / 'magic.x3ck').write_bytes(b'X3PC' + data[4:])
        (self.dir / 'ragged.x3ck').write_bytes(data[:-3])
        (self.dir / 'table.x3ck').write_bytes(data[:20])
        for name in ('magic.x3ck', 'ragged.x3ck', 'table.x3ck'):
            with self.subTest(name=name), self.assertRaises(FormatError):
                read_checkpoint(self.dir / name)

    def test_missing_file(self):
        with self.assertRaises(FormatError):
            read_checkpoint(self.dir / 'absent.x3ck')


class CsvTestCase(FileTestCase):

    def test_embeddings(self):
        embeddings = np.random.default_rng(1).normal(size=(12, 5))
        write_embeddings_csv(self.dir / 'e.csv', self.cloud.coords, embeddings, points=np.arange(12) * 2)
        points, coords, back = read_embeddings_csv(self.dir / 'e.csv')
        np.testing.assert_array_equal(points, np.arange(12) * 2)
        np.testing.assert_array_equal(coords, self.cloud.coords)
        np.testing.assert_array_equal(back, embeddings)

    def test_descriptors_header(self):
        write_descriptors_csv(self.dir / 'd.csv', [4, 9], 'ph', np.zeros((2, 24)))
        lines = (self.dir / 'd.csv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(lines[0].split(',')[:3], ['center', 'kind', 'v0'])
        self.assertEqual(len(lines[0].split(',')), 26)
        self.assertTrue(lines[2].startswith('9,ph,'))

    def test_rejects_other_csv(self):
        (self.dir / 'x.csv').write_text("a,b\n1,2\n", encoding='utf-8')
        with self.assertRaises(FormatError):
            read_embeddings_csv(self.dir / 'x.csv')
