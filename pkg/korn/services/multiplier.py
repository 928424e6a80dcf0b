"""
Восстановление ∂^α u по 𝔸u через фурье-множитель однородной степени нуль:
m_α(ξ) = ξ^α (𝔸*[ξ]𝔸[ξ])⁻¹ 𝔸*[ξ], нулевая частота обнуляется.
"""
import logging
from typing import Sequence

import numpy as np

from core.exceptions import DimensionMismatch, MalformedSpec, NonPowerOfTwoGrid, NotElliptic
from core.services.grid import GridFunction, partial_values
from core.services.poly import DiffOperator, MultiIndex, sigma_min, symbol_batch
from ellikorn import config

logger = logging.getLogger(__name__)


def _frequencies(domain) -> np.ndarray:
    """Все частоты ДПФ: (*shape, n)."""
    for size, per in zip(domain.shape, domain.periodic):
        if size & (size - 1):
            raise NonPowerOfTwoGrid(f"Размер решётки {domain.shape} не степень двойки")
        if not per:
            raise MalformedSpec("Множители считаются только на периодическом кубе")
    axes = [2 * np.pi * np.fft.fftfreq(size, d=domain.h) for size in domain.shape]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _spectral_apply(matrices: np.ndarray, spectrum: np.ndarray) -> np.ndarray:
    """(F, a, b) × (b, F) → (a, F)."""
    return np.einsum("fab,bf->af", matrices, spectrum)


def spectral_operator(op: DiffOperator, u: GridFunction) -> np.ndarray:
    """𝔸u спектрально: F(𝔸u)(ξ) = i^k 𝔸[ξ] û(ξ)."""
    domain = u.domain
    xi = _frequencies(domain).reshape(-1, domain.n)
    axes = tuple(range(1, domain.n + 1))
    spectrum = np.fft.fftn(u.values, axes=axes).reshape(u.dim, -1)
    image = (1j ** op.k) * _spectral_apply(symbol_batch(op, xi), spectrum)
    return np.real(np.fft.ifftn(image.reshape((op.dim_w,) + domain.shape), axes=axes))


def spectral_partial(u: GridFunction, alpha: Sequence[int]) -> np.ndarray:
    domain = u.domain
    xi = _frequencies(domain)
    factor = np.prod((1j * xi) ** np.asarray(alpha), axis=-1)
    axes = tuple(range(1, domain.n + 1))
    return np.real(np.fft.ifftn(np.fft.fftn(u.values, axes=axes) * factor[None], axes=axes))


def fourier_multiplier(op: DiffOperator, domain, alpha: Sequence[int], tol: float = None) -> np.ndarray:
    """m_α(ξ) на всех частотах: (F, dim_v, dim_w); NotElliptic при вырожденном 𝔸*𝔸."""
    tol = config.ELLIPTIC_TOL if tol is None else tol
    xi = _frequencies(domain).reshape(-1, domain.n)
    radius = np.linalg.norm(xi, axis=1)
    nonzero = radius > 0
    symbols = np.real(symbol_batch(op, xi))
    normalized = sigma_min(symbols[nonzero] / (radius[nonzero] ** op.k)[:, None, None])
    if normalized.min() < tol:
        worst = xi[nonzero][int(np.argmin(normalized))]
        raise NotElliptic(f"{op}: 𝔸*[ξ]𝔸[ξ] вырождена при ξ = {worst.tolist()}")

    multiplier = np.zeros((xi.shape[0], op.dim_v, op.dim_w))
    adjoint = np.transpose(symbols[nonzero], (0, 2, 1))
    gram = adjoint @ symbols[nonzero]
    monomial = np.prod(xi[nonzero] ** np.asarray(alpha), axis=1)
    multiplier[nonzero] = monomial[:, None, None] * np.linalg.solve(gram, adjoint)
    return multiplier


def multiplier_reconstruction(op: DiffOperator, u: GridFunction, alpha: Sequence[int],
                              image: np.ndarray = None) -> dict:
    """Φ_α(𝔸u) через ДПФ против ∂^α u; по умолчанию 𝔸u и ∂^α u спектральные."""
    alpha = MultiIndex(alpha)
    if alpha.order != op.k or alpha.n != op.n:
        raise MalformedSpec(f"Нужен мультииндекс длины {op.n} порядка {op.k}, получен {tuple(alpha)}")
    if u.dim != op.dim_v or u.domain.n != op.n:
        raise DimensionMismatch(f"Функция размерности {u.dim} не подходит к {op}")
    domain = u.domain
    logger.info(f"🔄 Восстановление ∂^{tuple(alpha)}u по {op} на решётке {domain.shape}")
    multiplier = fourier_multiplier(op, domain, alpha)
    image = spectral_operator(op, u) if image is None else image
    axes = tuple(range(1, domain.n + 1))
    spectrum = np.fft.fftn(image, axes=axes).reshape(op.dim_w, -1)
    rebuilt = np.real(np.fft.ifftn(_spectral_apply(multiplier, spectrum).reshape((op.dim_v,) + domain.shape),
                                   axes=axes))

    target = spectral_partial(u, alpha)
    scale = float(np.sqrt((target ** 2).sum()))
    error = float(np.sqrt(((rebuilt - target) ** 2).sum()))
    finite, valid = partial_values(domain, u.values, alpha)
    fd_error = float(np.sqrt(((rebuilt - finite)[:, valid] ** 2).sum()))
    result = {
        "alpha": list(alpha),
        "error": error,
        "relative": error / scale if scale > 0 else 0.0,
        "fd_relative": fd_error / scale if scale > 0 else 0.0,
    }
    logger.info(f"✅ Относительная ошибка восстановления {result['relative']:.3e}")
    return result
