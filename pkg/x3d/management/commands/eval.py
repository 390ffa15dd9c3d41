from ...datasets import gen_shapes
from ...excel_generator import ReportWorkbook
from ...fileio import read_checkpoint
from ...models import ExperimentRun
from ...training import evaluate
from ..base import X3DCommand


class Command(X3DCommand):
    help = 'Evaluate a checkpoint on a generated split (accuracy, GAP, probes, robustness)'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True, help='X3CK parameters written by train')
        parser.add_argument('--split', choices=('train', 'test'), default='test')
        parser.add_argument('--xlsx', help='also export the report as an Excel workbook')
        parser.add_argument('--jobs', type=int, help='parallel workers')
        parser.add_argument('--record', action='store_true', help='store the run in the database')
        parser.add_argument('--name', default='', help='run name when recording')

    def run(self, **options):
        config = self.load_config(options)
        params = read_checkpoint(options['checkpoint'])
        dataset = gen_shapes(config.dataset, options['split'])
        run = None
        if options['record']:
            run = ExperimentRun.objects.create(
                name=options['name'], command='eval', seed=config.training.seed, config=config.to_dict(),
            )
            run.start()
        try:
            report = evaluate(params, dataset, config, jobs=options.get('jobs'))
        except Exception as exc:
            if run is not None:
                run.fail(str(exc))
            raise

        if options.get('xlsx'):
            ReportWorkbook.save(report, options['xlsx'])
        if run is not None:
            run.complete(report.to_dict())
        self.emit(report.to_dict(), options.get('out'))
