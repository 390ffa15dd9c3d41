from pathlib import Path

import numpy as np

from ...autodiff import Tape
from ...blocks.ncp import OverlapSet
from ...blocks.network import PointNetwork
from ...datasets import gen_shapes
from ...exceptions import SizeError
from ...fileio import read_checkpoint, read_cloud, write_descriptors_csv, write_embeddings_csv, write_overlap_csv
from ..base import X3DCommand


class Command(X3DCommand):
    help = 'Dump per-layer embeddings and explicit-structure descriptors of one cloud'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='X3CK parameters (untrained seeded init when omitted)')
        parser.add_argument('--cloud', help='.ply or .x3pc input; otherwise a generated cloud')
        parser.add_argument('--split', choices=('train', 'test'), default='test')
        parser.add_argument('--index', type=int, default=0, help='cloud index within the split')
        parser.add_argument('--dir', required=True, help='output directory for the CSV files')

    def run(self, **options):
        config = self.load_config(options)
        if options.get('cloud'):
            cloud = read_cloud(options['cloud'])
            n_classes = len(config.dataset.classes)
        else:
            dataset = gen_shapes(config.dataset, options['split'])
            if not 0 <= options['index'] < len(dataset):
                raise SizeError(f"--index {options['index']} is outside a split of {len(dataset)} clouds")
            cloud = dataset.clouds[options['index']]
            n_classes = dataset.n_classes
        network = PointNetwork(config.network_config(n_classes))
        if options.get('checkpoint'):
            params = read_checkpoint(options['checkpoint'])
        else:
            params = network.init_params(config.training.seed)

        geometry = network.prepare_cloud(cloud.coords)
        traces = []
        logits = network.forward(Tape(params), network.stack([geometry]), traces)

        target = Path(options['dir'])
        target.mkdir(parents=True, exist_ok=True)
        files = []
        inputs = [np.arange(cloud.n_points)] + geometry.sources[:-1]
        for trace, regions, input_source in zip(traces, geometry.levels, inputs):
            layer = trace['level']
            path = target / f"layer{layer}_embeddings.csv"
            write_embeddings_csv(path, trace['coords'], trace['features'], points=trace['source'])
            files.append(path.name)
            if regions.es is not None:
                path = target / f"layer{layer}_descriptors.csv"
                write_descriptors_csv(path, trace['source'], config.model.es_kind, regions.es)
                files.append(path.name)
            if 'overlap_counts' in trace:
                path = target / f"layer{layer}_overlap.csv"
                write_overlap_csv(path, OverlapSet.build(regions.nbr, regions.n_points), points=input_source)
                files.append(path.name)
        self.emit({
            'files': files,
            'logits': logits.value[0].tolist(),
            'predicted': int(logits.value[0].argmax()),
        }, options.get('out'))
