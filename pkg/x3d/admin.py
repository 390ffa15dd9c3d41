from django.contrib import admin
from django.utils.html import format_html

from .models import ExperimentRun


# =====================================================
# EXPERIMENT RUNS
# =====================================================

@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('id', 'name', 'command', 'status_display', 'seed', 'accuracy_display', 'created_at')
    search_fields = ('name', 'error_log')
    list_filter = ('command', 'status', 'created_at')
    readonly_fields = ('created_at', 'updated_at', 'started_at', 'completed_at')
    date_hierarchy = 'created_at'

    fieldsets = (
        ('Run', {
            'fields': ('name', 'command', 'status', 'seed')
        }),
        ('Payload', {
            'fields': ('config', 'report', 'error_log')
        }),
        ('Timing', {
            'fields': ('started_at', 'completed_at', 'created_at', 'updated_at'),
            'classes': ('collapse',)
        }),
    )

    def status_display(self, obj):
        color = {'completed': 'green', 'failed': 'red', 'running': 'orange'}.get(obj.status, 'gray')
        return format_html('<span style="color: {};">{}</span>', color, obj.get_status_display())
    status_display.short_description = 'Status'

    def accuracy_display(self, obj):
        accuracy = (obj.report or {}).get('accuracy')
        return '-' if accuracy is None else f"{accuracy:.2%}"
    accuracy_display.short_description = 'Accuracy'
