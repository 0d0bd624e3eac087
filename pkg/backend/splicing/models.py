from django.db import models
import uuid


class Run(models.Model):
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('succeeded', 'Succeeded'),
        ('failed', 'Failed'),
    ]

    run_id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    command = models.CharField(max_length=50)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='running')
    exit_code = models.IntegerField(null=True, blank=True)
    seed = models.IntegerField(default=0)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)
    error_message = models.TextField(blank=True, default='')
    manifest = models.JSONField(blank=True, null=True)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.command} {self.run_id} ({self.status})"


class RunArtifact(models.Model):
    KIND_CHOICES = [
        ('image', 'Image'),
        ('checkpoint', 'Checkpoint'),
        ('csv', 'CSV'),
        ('pairs', 'Pair file'),
        ('index', 'Descriptor index'),
        ('modes', 'Mode set'),
        ('manifest', 'Manifest'),
        ('other', 'Other'),
    ]

    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name='artifacts')
    path = models.CharField(max_length=1024)
    kind = models.CharField(max_length=20, choices=KIND_CHOICES, default='other')
    sha256 = models.CharField(max_length=64, blank=True, default='')

    class Meta:
        ordering = ['path']

    def __str__(self):
        return f"{self.kind}: {self.path}"
