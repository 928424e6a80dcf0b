import uuid

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="OperatorAnalysis",
            fields=[
                ("id", models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ("spec_hash", models.CharField(max_length=64, unique=True)),
                ("name", models.CharField(blank=True, max_length=100)),
                ("spec", models.JSONField()),
                ("max_degree", models.PositiveIntegerField(default=20)),
                ("verdict", models.CharField(
                    choices=[("c_elliptic", "ℂ-эллиптический"), ("not_c_elliptic", "Не ℂ-эллиптический"),
                             ("undecided", "Не определено")],
                    default="undecided", max_length=20)),
                ("deg_p", models.PositiveIntegerField(blank=True, null=True)),
                ("kernel_dims", models.JSONField(default=list)),
                ("profile", models.JSONField(blank=True, null=True)),
                ("projection", models.JSONField(blank=True, null=True)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("updated_at", models.DateTimeField(auto_now=True)),
            ],
        ),
    ]
