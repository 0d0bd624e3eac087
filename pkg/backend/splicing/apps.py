from django.apps import AppConfig


class SplicingConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'splicing'
