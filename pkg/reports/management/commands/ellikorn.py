import argparse
import sys

from django.core.management.base import BaseCommand

from reports.services.runner import run


class Command(BaseCommand):
    help = "Эксперименты ellikorn: analyze, project, decompose, maximal, trace, korn, domains, gallery"

    def add_arguments(self, parser):
        parser.add_argument("argv", nargs=argparse.REMAINDER, help="подкоманда и её флаги")

    def handle(self, *args, **options):
        code = run(options["argv"])
        if code:
            sys.exit(code)
