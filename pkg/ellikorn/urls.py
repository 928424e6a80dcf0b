"""
URL configuration for ellikorn project.

Только админка: кэш анализов операторов и журнал прогонов.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
