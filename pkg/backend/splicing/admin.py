from django.contrib import admin
from .models import Run, RunArtifact


class RunArtifactInline(admin.TabularInline):
    model = RunArtifact
    extra = 0
    readonly_fields = ('path', 'kind', 'sha256')


@admin.register(Run)
class RunAdmin(admin.ModelAdmin):
    list_display = ('run_id', 'command', 'status', 'exit_code', 'started_at', 'finished_at')
    list_filter = ('command', 'status', 'started_at')
    search_fields = ('run_id', 'command', 'error_message')
    inlines = [RunArtifactInline]


@admin.register(RunArtifact)
class RunArtifactAdmin(admin.ModelAdmin):
    list_display = ('path', 'kind', 'run')
    list_filter = ('kind',)
    search_fields = ('path',)
