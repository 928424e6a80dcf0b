import logging

from celery import shared_task
from django.db import transaction

from core.exceptions import EllikornError
from core.models import CVerdict, OperatorAnalysis
from core.services.dispatch import fan_out
from core.services.ellipticity import NullspaceProfile, c_ellipticity, witness_restart
from core.services.poly import DiffOperator, make_operator
from core.services.projection import BallSpec, ProjectionOperator, build_projection
from ellikorn import config

logger = logging.getLogger(__name__)


@shared_task(name="core.tasks.witness_restart_task")
def witness_restart_task(spec: dict, seed: int, index: int) -> list:
    """Один рестарт поиска комплексного свидетеля. Результат JSON-сериализуем."""
    value, re, im = witness_restart(make_operator(spec), seed, index)
    return [value, re, im]


def celery_restarts(op: DiffOperator, restarts: int, seed: int) -> list:
    spec = op.to_spec()
    results = fan_out(witness_restart_task, [(spec, seed, index) for index in range(restarts)])
    return [tuple(item) for item in results]


def analyze(op: DiffOperator, max_degree: int = None, restarts: int = None, seed: int = 0) -> NullspaceProfile:
    """ℂ-эллиптичность; рестарты свидетеля рассылаются через Celery."""
    return c_ellipticity(op, max_degree=max_degree, restarts=restarts, seed=seed, runner=celery_restarts)


def cached_profile(op: DiffOperator, max_degree: int = None, seed: int = 0, record: bool = False) -> NullspaceProfile:
    """Профиль из OperatorAnalysis, если он уже посчитан с тем же max_degree; иначе пересчёт."""
    max_degree = config.MAX_DEGREE if max_degree is None else max_degree
    stored = OperatorAnalysis.objects.filter(spec_hash=op.spec_hash).first()
    if stored and stored.profile and stored.max_degree == max_degree and stored.verdict == CVerdict.C_ELLIPTIC:
        logger.info(f"🔍 {op}: профиль взят из базы ({stored.id})")
        return NullspaceProfile.from_json(stored.profile)

    profile = analyze(op, max_degree=max_degree, seed=seed)
    if record:
        save_analysis(op, profile, max_degree)
    return profile


def save_analysis(op: DiffOperator, profile: NullspaceProfile, max_degree: int,
                  projection: ProjectionOperator = None) -> OperatorAnalysis:
    with transaction.atomic():
        analysis, _ = OperatorAnalysis.objects.update_or_create(
            spec_hash=op.spec_hash,
            defaults={
                "name": op.name,
                "spec": op.to_spec(),
                "max_degree": max_degree,
                "verdict": profile.verdict,
                "deg_p": profile.deg_p,
                "kernel_dims": profile.kernel_dims,
                "profile": profile.to_json(),
                "projection": projection.to_json() if projection else None,
            },
        )
    logger.info(f"✅ Анализ {op} сохранён: {analysis}")
    return analysis


@shared_task(name="core.tasks.analyze_operator_task")
def analyze_operator_task(spec: dict, max_degree: int = None, seed: int = 0, ball: dict = None) -> str:
    """Полный анализ оператора с сохранением в OperatorAnalysis; возвращает id записи."""
    try:
        op = make_operator(spec)
        max_degree = config.MAX_DEGREE if max_degree is None else max_degree
        profile = analyze(op, max_degree=max_degree, seed=seed)
        projection = None
        if profile.verdict == CVerdict.C_ELLIPTIC and ball:
            projection = build_projection(op, BallSpec(tuple(ball["center"]), ball["radius"]), profile)
        return str(save_analysis(op, profile, max_degree, projection).id)
    except EllikornError as e:
        logger.error(f"❌ Анализ оператора не выполнен: {e}")
        raise
    except Exception as e:
        logger.exception(f"❌ Неожиданная ошибка анализа оператора: {e}")
        raise
