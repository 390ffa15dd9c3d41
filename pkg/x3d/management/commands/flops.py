from ...analytics import COST_METHODS, CostAnalytics
from ..base import X3DCommand


class Command(X3DCommand):
    help = 'Closed-form FLOPs per block method (optionally checked against the tape counter)'
    uses_config = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--N', type=int, default=1, help='number of regions')
        parser.add_argument('--C', type=int, default=256, help='channels')
        parser.add_argument('--K', type=int, default=16, help='neighbors per region')
        parser.add_argument('--methods', default='x3d,scalar_attention,vector_attention')
        parser.add_argument('--instrumented', action='store_true',
                            help='also run each block once and report the counted FLOPs')

    def run(self, **options):
        methods = [m.strip() for m in options['methods'].split(',') if m.strip()]
        rows = CostAnalytics.compare_methods(options['N'], options['C'], options['K'], methods)
        if options['instrumented']:
            for row in rows:
                row['instrumented'] = CostAnalytics.instrumented_flops(
                    row['method'], options['N'], options['C'], options['K'],
                )
        self.emit({'metric': 'flops', 'methods': list(COST_METHODS), 'estimates': rows}, options.get('out'))
