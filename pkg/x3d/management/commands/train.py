from ...excel_generator import ReportWorkbook
from ...fileio import write_checkpoint
from ...models import ExperimentRun
from ...training import ablation_study, run_experiment
from ..base import X3DCommand


class Command(X3DCommand):
    help = 'Train a classifier on the synthetic train split and evaluate it on the test split'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', help='write the trained parameters (X3CK) here')
        parser.add_argument('--xlsx', help='also export the report as an Excel workbook')
        parser.add_argument('--jobs', type=int, help='parallel workers for evaluation')
        parser.add_argument('--record', action='store_true', help='store the run in the database')
        parser.add_argument('--name', default='', help='run name when recording')
        parser.add_argument(
            '--ablate', help='comma list of x3d flags (denoise, ncp) to rerun disabled and report the accuracy delta',
        )

    def run(self, **options):
        config = self.load_config(options)
        run = None
        if options['record']:
            run = ExperimentRun.objects.create(
                name=options['name'], command='train', seed=config.training.seed, config=config.to_dict(),
            )
            run.start()
        try:
            if options.get('ablate'):
                flags = tuple(f.strip() for f in options['ablate'].split(',') if f.strip())
                params, report = ablation_study(config, flags, jobs=options.get('jobs'))
            else:
                params, report = run_experiment(config, jobs=options.get('jobs'))
        except Exception as exc:
            if run is not None:
                run.fail(str(exc))
            raise

        if options.get('checkpoint'):
            write_checkpoint(options['checkpoint'], params)
        if options.get('xlsx'):
            ReportWorkbook.save(report, options['xlsx'])
        if run is not None:
            run.complete(report.to_dict())
        self.emit(report.to_dict(), options.get('out'))
