import logging

import numpy as np
from celery import shared_task

from analysis.services.maximal import Weight
from core.exceptions import EllikornError
from core.services.dispatch import fan_out
from core.services.grid import GridFunction
from core.services.poly import VPolynomial
from geometry.services.chains import emanating_chains, whitney_cover
from geometry.services.decomposition import MomentSubspace, decompose, remove_moments, verify_decomposition
from geometry.services.domains import make_domain

logger = logging.getLogger(__name__)

MIN_SIDE = 4


def subspace_from_json(data: dict) -> MomentSubspace:
    return MomentSubspace(n=int(data["n"]), dim=int(data["dim"]),
                          basis=tuple(VPolynomial.from_json(item) for item in data["basis"]), tag=data["tag"])


def moment_free_field(domain, subspace: MomentSubspace, where: np.ndarray, seed: int, trial: int) -> GridFunction:
    """Случайное поле на where с нулевыми 𝒩-моментами."""
    rng = np.random.default_rng([seed, trial])
    values = rng.normal(size=(subspace.dim,) + domain.shape) * where[None]
    return remove_moments(GridFunction(domain, values), subspace, where=where)


@shared_task(name="geometry.tasks.decomposition_trial_task")
def decomposition_trial_task(kind: str, params: dict, h: float, subspace: dict, seed: int, trial: int,
                             q: float = 2.0, weights: list = None, sigma1: float = 2.0) -> dict:
    """Одно испытание разложения: восстановление, ортогональность моментов, отношения норм."""
    try:
        domain = make_domain(kind, params, h)
        cc = emanating_chains(whitney_cover(domain, min_side=MIN_SIDE), domain, sigma1=sigma1)
        moments_space = subspace_from_json(subspace)
        f = moment_free_field(domain, moments_space, cc.cover.core_mask, seed, trial)
        d = decompose(f, cc, moments_space)
        row = {
            "trial": trial,
            "reconstruction": d.reconstruction_error(),
            "moment_error": max(d.moment_errors(), default=0.0),
            "support_violations": len(d.support_violations()),
            "order_spread": d.order_spread(seed=seed),
        }
        for text in weights or ["unit"]:
            verified = verify_decomposition(d, q=q, weight=Weight.parse(text, domain.n))
            row[f"lower[{text}]"] = verified["lower_ratio"]
            row[f"upper[{text}]"] = verified["upper_ratio"]
            row[f"majorant[{text}]"] = verified["majorant_constant"]
        return row
    except EllikornError as e:
        logger.error(f"❌ Испытание {trial} на {kind}: {e}")
        raise
    except Exception as e:
        logger.exception(f"❌ Неожиданная ошибка в испытании {trial}: {e}")
        raise


def decomposition_trials(kind: str, params: dict, h: float, subspace: MomentSubspace, trials: int, seed: int = 0,
                         q: float = 2.0, weights: list = None) -> list:
    """Испытания разложения параллельно; строки в порядке номеров."""
    data = subspace.to_json()
    arguments = [(kind, params or {}, h, data, seed, trial, q, weights or ["unit"]) for trial in range(trials)]
    rows = fan_out(decomposition_trial_task, arguments)
    logger.info(f"✅ {len(rows)} испытаний разложения на {kind}")
    return rows
