from django.contrib import admin
from .models import ExperimentRun

admin.site.register(ExperimentRun)
