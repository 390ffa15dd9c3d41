import numpy as np

from ...analytics import PROBE_TASKS, ProbeAnalytics, ProbeData
from ...fileio import read_cloud, read_embeddings_csv
from ...geometry import knn_query
from ..base import X3DCommand


class Command(X3DCommand):
    help = 'Train a geometry probe on dumped embeddings'
    uses_config = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('embeddings', nargs='+', help='embedding CSVs written by dump (pooled)')
        parser.add_argument('--task', choices=PROBE_TASKS, default='relative_coordinate_bins')
        parser.add_argument('--cloud', action='append', default=[],
                            help='source cloud per CSV (PLY with normals, for normal_regression)')
        parser.add_argument('--k', type=int, default=8)
        parser.add_argument('--graph-k', type=int, default=8)
        parser.add_argument('--bins', type=int, default=8)
        parser.add_argument('--epochs', type=int, default=200)
        parser.add_argument('--seed', type=int, default=0)

    def run(self, **options):
        clouds = [read_cloud(path) for path in options['cloud']]
        inputs, targets = [], []
        for i, path in enumerate(options['embeddings']):
            points, coords, embeddings = read_embeddings_csv(path)
            normals = None
            if i < len(clouds) and clouds[i].normals is not None:
                normals = clouds[i].normals[points]
            nbr = knn_query(coords, np.arange(coords.shape[0]), min(options['k'], coords.shape[0]))
            data = ProbeAnalytics.probe_pairs(
                embeddings, coords, nbr, options['task'], normals=normals, graph_k=options['graph_k'],
            )
            inputs.append(data.inputs)
            targets.append(data.targets)
        data = ProbeData(inputs=np.concatenate(inputs), targets=np.concatenate(targets))
        result = ProbeAnalytics.fit_probe(
            data, options['task'], bins=options['bins'], epochs=options['epochs'], seed=options['seed'],
        )
        self.emit(result, options.get('out'))
