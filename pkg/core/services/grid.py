"""
Решётки ячеек и сеточные функции.

Ячейка с индексом i занимает [origin + i·h, origin + (i+1)·h]; значения
сеточной функции берутся в центрах ячеек. Производные: центральные
разности второго порядка, действительные там, где весь шаблон лежит в маске.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from core.exceptions import DimensionMismatch, EmptyMask
from core.services.poly import DiffOperator, VPolynomial, homogeneous_indices

logger = logging.getLogger(__name__)

# Центральные шаблоны для d^a/dx^a (корреляционные веса, смещения −r..r)
STENCILS = {
    0: np.array([1.0]),
    1: np.array([-0.5, 0.0, 0.5]),
    2: np.array([1.0, -2.0, 1.0]),
    3: np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
    4: np.array([1.0, -4.0, 6.0, -4.0, 1.0]),
}


@dataclass(frozen=True, eq=False)
class GridDomain:
    n: int
    h: float
    mask: np.ndarray
    origin: tuple
    kind: str = "custom"
    params: Mapping = field(default_factory=dict)
    periodic: tuple = ()

    def __post_init__(self):
        if not self.mask.any():
            raise EmptyMask(f"Пустая маска области {self.kind}")
        if not self.periodic:
            object.__setattr__(self, "periodic", (False,) * self.n)

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    @property
    def measure(self) -> float:
        return float(self.mask.sum()) * self.cell_volume

    @cached_property
    def centers(self) -> np.ndarray:
        """Координаты центров всех ячеек прямоугольника: (*shape, n)."""
        axes = [self.origin[d] + (np.arange(self.shape[d]) + 0.5) * self.h for d in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @cached_property
    def points(self) -> np.ndarray:
        """Центры ячеек маски (N, n) в порядке C."""
        return self.centers[self.mask]

    @cached_property
    def bbox(self) -> tuple:
        idx = np.argwhere(self.mask)
        return tuple(idx.min(axis=0)), tuple(idx.max(axis=0) + 1)

    @cached_property
    def diam(self) -> float:
        """Диаметр объединения замкнутых ячеек маски."""
        edge = self.mask & ~ndimage.binary_erosion(self.mask, border_value=0)
        idx = np.argwhere(edge)
        corners = []
        for offset in np.ndindex(*(2,) * self.n):
            corners.append(np.asarray(self.origin) + (idx + np.array(offset)) * self.h)
        corners = np.unique(np.vstack(corners), axis=0)
        try:
            corners = corners[ConvexHull(corners).vertices]
        except (QhullError, ValueError):
            pass
        diffs = corners[:, None, :] - corners[None, :, :]
        return float(np.sqrt((diffs ** 2).sum(axis=-1)).max())

    def cell_of(self, point: Sequence[float]) -> tuple:
        return tuple(int(np.floor((p - o) / self.h)) for p, o in zip(point, self.origin))

    def inside(self, cell: Sequence[int]) -> bool:
        cell = list(cell)
        for d in range(self.n):
            if self.periodic[d]:
                cell[d] %= self.shape[d]
            elif not 0 <= cell[d] < self.shape[d]:
                return False
        return bool(self.mask[tuple(cell)])

    def with_mask(self, mask: np.ndarray, kind: str = None) -> "GridDomain":
        return GridDomain(n=self.n, h=self.h, mask=mask, origin=self.origin, kind=kind or self.kind,
                          params=dict(self.params), periodic=self.periodic)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "h": self.h,
            "shape": list(self.shape),
            "cells": int(self.mask.sum()),
            "params": {key: value for key, value in sorted(self.params.items())},
        }


@dataclass(frozen=True, eq=False)
class GridFunction:
    domain: GridDomain
    values: np.ndarray  # (dim, *shape), нули вне маски

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_callable(cls, domain: GridDomain, func: Callable) -> "GridFunction":
        """func: (N, n) → (N, dim) на центрах ячеек маски."""
        samples = np.atleast_2d(np.asarray(func(domain.points), dtype=float))
        if samples.shape[0] != domain.points.shape[0]:
            samples = samples.T
        values = np.zeros((samples.shape[1],) + domain.shape)
        values[:, domain.mask] = samples.T
        return cls(domain=domain, values=values)

    @classmethod
    def from_polynomial(cls, domain: GridDomain, poly: VPolynomial) -> "GridFunction":
        return cls.from_callable(domain, poly.evaluate)

    @classmethod
    def zeros(cls, domain: GridDomain, dim: int) -> "GridFunction":
        return cls(domain=domain, values=np.zeros((dim,) + domain.shape))

    def masked(self) -> np.ndarray:
        """Значения на ячейках маски: (N, dim)."""
        return self.values[:, self.domain.mask].T

    def pointwise_norm(self) -> np.ndarray:
        return np.sqrt((self.values ** 2).sum(axis=0))

    def lp_norm(self, p: float = 2.0, weight: np.ndarray = None, where: np.ndarray = None) -> float:
        where = self.domain.mask if where is None else where & self.domain.mask
        density = self.pointwise_norm()[where]
        w = 1.0 if weight is None else weight[where]
        if np.isinf(p):
            return float(density.max(initial=0.0))
        return float((np.sum(w * density ** p) * self.domain.cell_volume) ** (1.0 / p))

    def integral(self) -> np.ndarray:
        return self.values[:, self.domain.mask].sum(axis=1) * self.domain.cell_volume

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.domain, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.domain, self.values - other.values)

    def scale(self, factor: float) -> "GridFunction":
        return GridFunction(self.domain, factor * self.values)

    def restrict(self, mask: np.ndarray) -> "GridFunction":
        return GridFunction(self.domain, np.where(mask[None], self.values, 0.0))


# --- производные ---

def _erode(mask: np.ndarray, radii: Sequence[int], periodic: Sequence[bool]) -> np.ndarray:
    """Ячейки, у которых весь прямоугольник шаблона ±radii лежит в маске."""
    pad = [(r, r) if per else (0, 0) for r, per in zip(radii, periodic)]
    padded = np.pad(mask, pad, mode="wrap") if any(per for per in periodic) else mask
    structure = np.ones([2 * r + 1 for r in radii], dtype=bool)
    eroded = ndimage.binary_erosion(padded, structure=structure, border_value=0)
    crop = tuple(slice(lo, eroded.shape[d] - hi) for d, (lo, hi) in enumerate(pad))
    return eroded[crop] & mask


def stencil_radii(alpha: Sequence[int]) -> list:
    return [(len(STENCILS[a]) - 1) // 2 for a in alpha]


def partial_values(domain: GridDomain, values: np.ndarray, alpha: Sequence[int]) -> tuple:
    """∂^α по компонентам: (dim, *shape) → ((dim, *shape), valid)."""
    result = np.array(values, dtype=float)
    for axis, a in enumerate(alpha):
        if a == 0:
            continue
        if a not in STENCILS:
            raise DimensionMismatch(f"Нет шаблона для производной порядка {a}")
        mode = "wrap" if domain.periodic[axis] else "constant"
        result = ndimage.correlate1d(result, STENCILS[a] / domain.h ** a, axis=axis + 1, mode=mode, cval=0.0)
    valid = _erode(domain.mask, stencil_radii(alpha), domain.periodic)
    result[:, ~valid] = 0.0
    return result, valid


def gradient_tensor(gf: GridFunction, order: int) -> tuple:
    """D^ℓu с весами √(ℓ!/α!): евклидова норма равна норме Фробениуса тензора."""
    from math import factorial

    pieces, valid = [], gf.domain.mask.copy()
    for alpha in homogeneous_indices(gf.domain.n, order):
        part, ok = partial_values(gf.domain, gf.values, alpha)
        pieces.append(np.sqrt(factorial(order) / alpha.factorial()) * part)
        valid &= ok
    stacked = np.concatenate(pieces, axis=0)
    stacked[:, ~valid] = 0.0
    return stacked, valid


def apply_operator(op: DiffOperator, gf: GridFunction) -> tuple:
    """𝔸u разностями: ((dim_w, *shape), valid)."""
    if gf.dim != op.dim_v or gf.domain.n != op.n:
        raise DimensionMismatch(f"Сеточная функция размерности {gf.dim} не подходит к {op}")
    alphas, mats = op.numeric
    result = np.zeros((op.dim_w,) + gf.domain.shape)
    valid = gf.domain.mask.copy()
    for alpha, mat in zip(alphas, mats):
        part, ok = partial_values(gf.domain, gf.values, alpha)
        result += np.tensordot(mat, part, axes=(1, 0))
        valid &= ok
    result[:, ~valid] = 0.0
    return result, valid
