from pathlib import Path

from ...datasets import gen_shapes
from ...fileio import write_ply, write_x3pc
from ..base import X3DCommand


class Command(X3DCommand):
    help = 'Generate the synthetic shape dataset as PLY or X3PC files'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--split', choices=('train', 'test'), default='train')
        parser.add_argument('--format', choices=('ply', 'x3pc'), default='ply')
        parser.add_argument('--dir', required=True, help='output directory for the clouds')

    def run(self, **options):
        config = self.load_config(options)
        dataset = gen_shapes(config.dataset, options['split'])
        target = Path(options['dir'])
        target.mkdir(parents=True, exist_ok=True)
        writer = write_ply if options['format'] == 'ply' else write_x3pc

        files = []
        for i, cloud in enumerate(dataset.clouds):
            path = target / f"cloud_{i:04d}.{options['format']}"
            writer(path, cloud)
            files.append({'file': path.name, 'label': int(dataset.labels[i]),
                          'class': dataset.class_names[dataset.labels[i]]})
        self.emit({
            'split': options['split'],
            'classes': list(dataset.class_names),
            'seed': config.dataset.seed,
            'clouds': files,
        }, options.get('out'))
