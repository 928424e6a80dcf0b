import logging

import sympy as sp
from celery import shared_task

from analysis.services.trace import TestFunction, strip_domain, trace_ratio
from core.exceptions import EllikornError
from core.services.dispatch import fan_out
from core.services.poly import DiffOperator, make_operator

logger = logging.getLogger(__name__)


def function_to_json(u: TestFunction) -> dict:
    return {"ident": u.ident, "components": [sp.srepr(c) for c in u.components], "family": u.family,
            "degree": u.degree}


def function_from_json(data: dict) -> TestFunction:
    components = tuple(sp.sympify(c) for c in data["components"])
    return TestFunction(data["ident"], components, data["family"], int(data["degree"]))


@shared_task(name="analysis.tasks.trace_ratio_task")
def trace_ratio_task(spec: dict, function: dict, cells: int, depth: float = 1.0) -> dict:
    """Отношение следа для одной функции семейства."""
    op = make_operator(spec)
    u = function_from_json(function)
    try:
        ratio = trace_ratio(op, u, strip_domain(cells, depth=depth))
    except EllikornError as e:
        logger.error(f"❌ След {u.ident} для {op}: {e}")
        raise
    except Exception as e:
        logger.exception(f"❌ Неожиданная ошибка следа {u.ident}: {e}")
        raise
    row = ratio.to_row()
    row.update({"family": ratio.family, "exact": ratio.exact, "richardson": ratio.richardson, "cells": cells})
    return row


def trace_rows(op: DiffOperator, family: list, cells: int, depth: float = 1.0) -> list:
    spec = op.to_spec()
    return fan_out(trace_ratio_task, [(spec, function_to_json(u), cells, depth) for u in family])
