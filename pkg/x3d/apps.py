from django.apps import AppConfig


class X3DConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'x3d'
    verbose_name = 'Explicit 3D structure modeling'
