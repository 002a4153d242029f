from django.apps import AppConfig


class StudioAppConfig(AppConfig):
    # Hosts the anchorcast management commands and the test-suite; no models.
    name = 'studio_app'
    verbose_name = 'Anchorcast studio'
