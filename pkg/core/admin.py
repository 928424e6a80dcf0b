from django.contrib import admin
from .models import OperatorAnalysis

admin.site.register(OperatorAnalysis)
