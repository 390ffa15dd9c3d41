import math

from django.db import models
from django.utils import timezone


def json_safe(value):
    """Replace NaN and infinities with None so reports fit strict JSON columns."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    return value


# ---------------------------------------------------------------------
# Base Model
# ---------------------------------------------------------------------
class BaseModel(models.Model):
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        abstract = True


# ---------------------------------------------------------------------
# ExperimentRun Model
# ---------------------------------------------------------------------
class ExperimentRun(BaseModel):
    STATUS_CHOICES = [
        ('queued', 'Queued'),
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]
    COMMAND_CHOICES = [
        ('train', 'Train'),
        ('eval', 'Evaluate'),
    ]

    name = models.CharField(max_length=150, blank=True, default='')
    command = models.CharField(max_length=20, choices=COMMAND_CHOICES, db_index=True)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='queued', db_index=True)
    seed = models.BigIntegerField(default=0)
    config = models.JSONField(default=dict)
    report = models.JSONField(null=True, blank=True)
    error_log = models.TextField(blank=True, null=True)
    started_at = models.DateTimeField(null=True, blank=True)
    completed_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=["command", "status"], name="idx_run_command_status"),
        ]

    def __str__(self):
        return f"Run {self.pk}: {self.command} seed={self.seed} - {self.status}"

    def start(self):
        self.status = 'running'
        self.started_at = timezone.now()
        self.save(update_fields=['status', 'started_at', 'updated_at'])

    def complete(self, report):
        self.status = 'completed'
        self.report = json_safe(report)
        self.completed_at = timezone.now()
        self.save(update_fields=['status', 'report', 'completed_at', 'updated_at'])

    def fail(self, message):
        self.status = 'failed'
        self.error_log = message
        self.completed_at = timezone.now()
        self.save(update_fields=['status', 'error_log', 'completed_at', 'updated_at'])
