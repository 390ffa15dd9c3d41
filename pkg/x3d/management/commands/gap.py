from ...analytics import GAP_MODES, GapAnalytics, GapReport
from ...fileio import read_embeddings_csv
from ..base import X3DCommand


class Command(X3DCommand):
    help = 'GAP of dumped embeddings over kNN regions centered at every point'
    uses_config = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('embeddings', nargs='+', help='embedding CSVs written by dump, one per layer')
        parser.add_argument('--k', type=int, default=8)
        parser.add_argument('--mode', choices=GAP_MODES, default='euclidean')
        parser.add_argument('--graph-k', type=int, default=8)

    def run(self, **options):
        report = GapReport(mode=options['mode'])
        for layer, path in enumerate(options['embeddings']):
            _, coords, embeddings = read_embeddings_csv(path)
            gaps, skipped = GapAnalytics.layer_gap(
                coords, embeddings, options['k'], options['mode'], options['graph_k'],
            )
            report.per_layer.append({
                'layer': layer,
                'gap': float(gaps.mean()) if gaps.size else float('nan'),
                'regions': int(gaps.size),
                'skipped': skipped,
            })
        self.emit(report.to_dict(), options.get('out'))
