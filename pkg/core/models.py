import uuid

from django.db import models


class EllipticVerdict(models.TextChoices):
    ELLIPTIC = "elliptic", "Эллиптический"
    NOT_ELLIPTIC = "not_elliptic", "Не эллиптический"


class CVerdict(models.TextChoices):
    C_ELLIPTIC = "c_elliptic", "ℂ-эллиптический"
    NOT_C_ELLIPTIC = "not_c_elliptic", "Не ℂ-эллиптический"
    UNDECIDED = "undecided", "Не определено"


class OperatorAnalysis(models.Model):
    """Сохранённый анализ оператора: вердикт, ядра и (опционально) проекция."""

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    spec_hash = models.CharField(max_length=64, unique=True)
    name = models.CharField(max_length=100, blank=True)
    spec = models.JSONField()
    max_degree = models.PositiveIntegerField(default=20)
    verdict = models.CharField(max_length=20, choices=CVerdict.choices, default=CVerdict.UNDECIDED)
    deg_p = models.PositiveIntegerField(blank=True, null=True)
    kernel_dims = models.JSONField(default=list)
    profile = models.JSONField(blank=True, null=True)
    projection = models.JSONField(blank=True, null=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    def kernel_dimension(self) -> int:
        return sum(self.kernel_dims or [])

    def __str__(self):
        return f"{self.name or self.spec_hash[:12]}: {self.get_verdict_display()} (deg_p={self.deg_p})"
