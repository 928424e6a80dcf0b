from django.apps import AppConfig


class KornConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'korn'
