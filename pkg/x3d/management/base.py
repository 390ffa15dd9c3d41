"""
Shared plumbing for the x3d management commands: common flags, config
loading, JSON output and translation of library errors to exit codes.
"""

import json
import logging

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from ..config import load_config
from ..exceptions import X3DError

logger = logging.getLogger(__name__)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


class X3DCommand(BaseCommand):
    """Subclasses implement run(**options); X3DError becomes CommandError with its exit code."""

    uses_config = True

    def add_arguments(self, parser):
        if self.uses_config:
            parser.add_argument('--config', help='experiment config file ([dataset]/[model]/[training]/[eval])')
            parser.add_argument('--seed', type=int, help='fills both the dataset and the training seed')
        parser.add_argument('--out', help='write the JSON result here instead of stdout')

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except X3DError as exc:
            logger.error("%s failed: %s", self.__class__.__module__.rsplit('.', 1)[-1], exc)
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

    def run(self, **options):
        raise NotImplementedError

    def load_config(self, options, overrides=None):
        return load_config(options.get('config'), seed=options.get('seed'), overrides=overrides)

    def emit(self, payload, out=None):
        text = json.dumps(payload, indent=2, default=_json_default, allow_nan=True)
        if out:
            with open(out, 'w', encoding='utf-8') as handle:
                handle.write(text + '\n')
            self.stdout.write(self.style.SUCCESS(f"Wrote {out}"))
        else:
            self.stdout.write(text)
