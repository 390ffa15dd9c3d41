import csv
import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from x3d.fileio import read_checkpoint, read_embeddings_csv, read_x3pc, write_ply
from x3d.geometry import PointCloud
from x3d.models import ExperimentRun

TINY_CONFIG = """
[dataset]
classes = sphere, line
points = 48
count = 4
test_count = 2
seed = 3

[model]
channels = 6
hidden = 8
structure_dim = 4
k = 6
centers = 12

[training]
epochs = 1
batch_size = 2

[eval]
gap_k = 4
graph_k = 4
probe_epochs = 5
"""


class CommandTestCase(TestCase):

    def setUp(self):
        self.dir = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.dir)
        self.config = self.dir / 'tiny.cfg'
        self.config.write_text(TINY_CONFIG, encoding='utf-8')

    def call(self, *args, **options):
        out = StringIO()
        call_command(*args, stdout=out, **options)
        return json.loads(out.getvalue())


class GenCommandTestCase(CommandTestCase):

    def test_writes_clouds(self):
        index = self.call('gen', '--config', str(self.config), '--format', 'x3pc', '--dir', str(self.dir / 'clouds'))
        self.assertEqual(index['classes'], ['sphere', 'line'])
        self.assertEqual([row['label'] for row in index['clouds']], [0, 1, 0, 1])
        cloud = read_x3pc(self.dir / 'clouds' / index['clouds'][1]['file'])
        self.assertEqual(cloud.n_points, 48)

    def test_seed_flag(self):
        index = self.call('gen', '--config', str(self.config), '--seed', '9', '--dir', str(self.dir / 'ply'))
        self.assertEqual(index['seed'], 9)
        self.assertTrue((self.dir / 'ply' / 'cloud_0000.ply').exists())

    def test_bad_config_exits_with_two(self):
        self.config.write_text("[model]\nblock = pointnet\n", encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            call_command('gen', '--config', str(self.config), '--dir', str(self.dir), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)


class TrainEvalCommandTestCase(CommandTestCase):

    def test_train_then_eval(self):
        checkpoint = self.dir / 'model.x3ck'
        workbook = self.dir / 'report.xlsx'
        report = self.call(
            'train', '--config', str(self.config), '--checkpoint', str(checkpoint),
            '--xlsx', str(workbook), '--record', '--name', 'tiny',
        )
        self.assertEqual(len(report['epochs']), 1)
        self.assertTrue(workbook.exists())
        self.assertGreater(read_checkpoint(checkpoint).size, 0)
        run = ExperimentRun.objects.get(name='tiny')
        self.assertEqual(run.status, 'completed')
        self.assertEqual(run.command, 'train')

        evaluated = self.call(
            'eval', '--config', str(self.config), '--checkpoint', str(checkpoint), '--record',
        )
        self.assertEqual(evaluated['accuracy'], report['accuracy'])
        self.assertEqual(ExperimentRun.objects.filter(command='eval', status='completed').count(), 1)

    def test_ablate_flag(self):
        report = self.call('train', '--config', str(self.config), '--ablate', 'ncp')
        row = report['ablation']['disabled']['ncp']
        self.assertEqual(row['delta'], report['accuracy'] - row['accuracy'])

    def test_ablate_unknown_flag_exits_with_two(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('train', '--config', str(self.config), '--ablate', 'agg', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_eval_missing_checkpoint(self):
        with self.assertRaises(CommandError) as ctx:
            call_command(
                'eval', '--config', str(self.config), '--checkpoint', str(self.dir / 'absent.x3ck'),
                stdout=StringIO(),
            )
        self.assertEqual(ctx.exception.returncode, 2)

    def test_out_file(self):
        out = self.dir / 'report.json'
        call_command('train', '--config', str(self.config), '--out', str(out), stdout=StringIO())
        report = json.loads(out.read_text(encoding='utf-8'))
        self.assertEqual(report['config']['dataset']['seed'], 3)
        self.assertEqual(report['seed'], 0)


class AnalysisCommandTestCase(CommandTestCase):

    def test_dump_then_gap_and_probe(self):
        files = self.call('dump', '--config', str(self.config), '--dir', str(self.dir / 'dump'))
        self.assertIn('layer0_embeddings.csv', files['files'])
        self.assertIn('layer0_descriptors.csv', files['files'])
        self.assertEqual(len(files['logits']), 2)
        points, coords, embeddings = read_embeddings_csv(self.dir / 'dump' / 'layer0_embeddings.csv')
        self.assertEqual(embeddings.shape, (12, 6))

        layers = [str(self.dir / 'dump' / f'layer{i}_embeddings.csv') for i in range(2)]
        gap = self.call('gap', *layers, '--k', '4')
        self.assertEqual([row['layer'] for row in gap['per_layer']], [0, 1])

        probe = self.call('probe', layers[0], '--k', '4', '--bins', '2', '--epochs', '5')
        self.assertEqual(probe['metric'], 'accuracy')
        self.assertEqual(probe['train_size'] + probe['test_size'], 48)

    def test_dump_writes_overlap_sets(self):
        files = self.call('dump', '--config', str(self.config), '--dir', str(self.dir / 'dump'))
        self.assertIn('layer0_overlap.csv', files['files'])
        with open(self.dir / 'dump' / 'layer0_overlap.csv', newline='', encoding='utf-8') as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual([int(row['point']) for row in rows], list(range(48)))
        for row in rows:
            regions = row['regions'].split()
            self.assertEqual(int(row['count']), len(regions))
            self.assertTrue(all(0 <= int(r) < 12 for r in regions))
        self.assertEqual(sum(int(row['count']) for row in rows), 12 * 6)

        self.config.write_text(TINY_CONFIG.replace('k = 6', 'k = 6\nncp = false'), encoding='utf-8')
        files = self.call('dump', '--config', str(self.config), '--dir', str(self.dir / 'plain'))
        self.assertNotIn('layer0_overlap.csv', files['files'])

    def test_dump_index_out_of_range(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('dump', '--config', str(self.config), '--index', '7', '--dir', str(self.dir), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_geodesic(self):
        theta = 2 * np.pi * np.arange(90) / 90
        path = self.dir / 'circle.ply'
        write_ply(path, PointCloud(coords=np.column_stack([np.cos(theta), np.sin(theta), np.zeros(90)])))
        result = self.call('geodesic', str(path), '--graph-k', '4', '--source', '0',
                           '--matrix', str(self.dir / 'd.csv'))
        self.assertTrue(result['connected'])
        self.assertAlmostEqual(result['distances'][45], np.pi, delta=0.02 * np.pi)
        self.assertEqual(np.loadtxt(self.dir / 'd.csv', delimiter=',').shape, (90, 90))

    def test_flops(self):
        result = self.call('flops', '--N', '3', '--C', '4', '--K', '3', '--methods', 'x3d,kpconv', '--instrumented')
        for row in result['estimates']:
            self.assertEqual(row['instrumented'], row['flops'])

    def test_flops_unknown_method(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('flops', '--methods', 'pointconv', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)
