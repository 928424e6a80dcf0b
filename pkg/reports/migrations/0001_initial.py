import uuid

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                ("id", models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ("subcommand", models.CharField(max_length=20)),
                ("argv", models.JSONField(default=list)),
                ("seed", models.BigIntegerField(default=0)),
                ("total", models.PositiveIntegerField(default=0)),
                ("completed", models.PositiveIntegerField(default=0)),
                ("status", models.CharField(
                    choices=[("pending", "В ожидании"), ("in_progress", "В процессе"), ("done", "Готово"),
                             ("failed", "Ошибка")],
                    default="pending", max_length=20)),
                ("exit_code", models.SmallIntegerField(blank=True, null=True)),
                ("report", models.JSONField(blank=True, null=True)),
                ("error", models.TextField(blank=True, default="")),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("updated_at", models.DateTimeField(auto_now=True)),
            ],
        ),
    ]
