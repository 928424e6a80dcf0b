import logging
from fractions import Fraction

from celery import shared_task

from core.exceptions import EllikornError, MalformedSpec
from core.services.dispatch import fan_out
from core.services.poly import DiffOperator, make_operator
from korn.services.bench import korn_constant_p2

logger = logging.getLogger(__name__)


def parse_steps(text: str) -> list:
    """'1/16,1/32,1/64' → [0.0625, 0.03125, 0.015625]."""
    try:
        steps = [float(Fraction(item.strip())) for item in text.split(",") if item.strip()]
    except (ValueError, ZeroDivisionError) as e:
        raise MalformedSpec(f"Неверный список шагов «{text}»: {e}")
    if not steps or any(h <= 0 for h in steps):
        raise MalformedSpec(f"Шаги решётки должны быть положительными: «{text}»")
    return steps


@shared_task(name="korn.tasks.korn_point_task")
def korn_point_task(spec: dict, kind: str, params: dict, h: float, dirichlet: bool = False,
                    method: str = "auto") -> dict:
    """Одна точка (h, p = 2): строка отчёта с C(h) и нормами свидетеля."""
    op = make_operator(spec)
    try:
        return korn_constant_p2(op, kind, h=h, dirichlet=dirichlet, method=method, params=params).to_row(op)
    except EllikornError as e:
        logger.error(f"❌ C(h={h}) для {op} не посчитана: {e}")
        raise
    except Exception as e:
        logger.exception(f"❌ Неожиданная ошибка при h={h}: {e}")
        raise


def korn_sweep(op: DiffOperator, kind: str, steps: list, params: dict = None, dirichlet: bool = False,
               method: str = "auto") -> list:
    """C(h) по списку шагов; строки в порядке steps."""
    spec = op.to_spec()
    rows = fan_out(korn_point_task, [(spec, kind, params or {}, h, dirichlet, method) for h in steps])
    for previous, current in zip(rows, rows[1:]):
        growth = current["C"] / previous["C"] if previous["C"] > 0 else float("inf")
        current["growth"] = growth
    return rows
