"""
Сеточные области: квадрат (куб), круг, L-образная область, квадрат с разрезом,
снежинка Коха и полоса полупространства, периодическая по касательной.
"""
import logging
from typing import Mapping

import numpy as np
from scipy import ndimage

from core.exceptions import DisconnectedMask, EmptyMask, MalformedSpec
from core.services.grid import GridDomain

logger = logging.getLogger(__name__)

KINDS = ("square", "disk", "lshape", "slit", "snowflake", "halfspace_strip")


def _cells(length: float, h: float) -> int:
    count = int(round(length / h))
    if count < 1:
        raise EmptyMask(f"Шаг h={h} больше размера области {length}")
    return count


def _centers(shape: tuple, h: float) -> list:
    axes = [(np.arange(size) + 0.5) * h for size in shape]
    return np.meshgrid(*axes, indexing="ij")


def _koch_polygon(iterations: int) -> np.ndarray:
    """Вершины снежинки Коха, вписанной в [0, 1]²."""
    angles = np.pi / 2 - np.arange(3) * 2 * np.pi / 3
    points = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    # обход по часовой стрелке: поворот шага на +60° выводит зубец наружу
    rotation = np.array([[0.5, -np.sqrt(3) / 2], [np.sqrt(3) / 2, 0.5]])
    for _ in range(iterations):
        refined = []
        for a, b in zip(points, np.roll(points, -1, axis=0)):
            step = (b - a) / 3
            refined.extend([a, a + step, a + step + rotation @ step, a + 2 * step])
        points = np.array(refined)
    lo, hi = points.min(axis=0), points.max(axis=0)
    scale = 0.96 / (hi - lo).max()
    return (points - (lo + hi) / 2) * scale + 0.5


def _inside_polygon(x: np.ndarray, y: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Правило чётности пересечений для точек (x, y)."""
    inside = np.zeros(x.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(polygon, np.roll(polygon, -1, axis=0)):
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < x_cross)
    return inside


def _main_component(mask: np.ndarray, kind: str) -> np.ndarray:
    """Крупнейшая компонента маски; зубцы мельче ячейки дают оторванные ячейки."""
    labels, count = ndimage.label(mask)
    if count <= 1:
        return mask
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    main = labels == sizes.argmax()
    logger.warning(f"⚠️ Область {kind}: отброшено {int(mask.sum() - main.sum())} оторванных ячеек ({count - 1} компонент)")
    return main


def _check_connected(mask: np.ndarray, periodic: tuple, kind: str):
    if not mask.any():
        raise EmptyMask(f"Пустая маска области {kind}")
    labels, count = ndimage.label(mask)
    for axis, per in enumerate(periodic):
        if not per or count <= 1:
            continue
        # склейка компонент через периодическую границу
        first = np.take(labels, 0, axis=axis)
        last = np.take(labels, -1, axis=axis)
        for a, b in zip(first.ravel(), last.ravel()):
            if a and b and a != b:
                labels[labels == b] = a
        count = len(np.unique(labels[labels > 0]))
    if count != 1:
        raise DisconnectedMask(f"Маска {kind} состоит из {count} компонент")


def make_domain(kind: str, params: Mapping = None, h: float = 1 / 32) -> GridDomain:
    """Построить сеточную область по типу и параметрам."""
    params = dict(params or {})
    if not h > 0:
        raise MalformedSpec(f"Шаг решётки должен быть положительным: {h}")
    if kind not in KINDS:
        raise MalformedSpec(f"Неизвестный тип области: {kind}. Доступны: {', '.join(KINDS)}")
    periodic = ()

    if kind == "square":
        n = int(params.get("n", 2))
        side = float(params.get("side", 1.0))
        mask = np.ones((_cells(side, h),) * n, dtype=bool)
        if int(params.get("periodic", 0)):
            periodic = (True,) * n
    elif kind == "disk":
        radius = float(params.get("radius", 0.5))
        cells = _cells(2 * radius, h)
        x, y = _centers((cells, cells), h)
        mask = (x - radius) ** 2 + (y - radius) ** 2 < radius ** 2
    elif kind == "lshape":
        side = float(params.get("side", 1.0))
        cells = _cells(side, h)
        x, y = _centers((cells, cells), h)
        mask = ~((x > side / 2) & (y > side / 2))
    elif kind == "slit":
        side = float(params.get("side", 1.0))
        length = float(params.get("length", 0.5))
        cells = _cells(side, h)
        x, y = _centers((cells, cells), h)
        mask = np.ones((cells, cells), dtype=bool)
        mask[cells // 2, :] = ~(y[cells // 2, :] < length)
    elif kind == "snowflake":
        iterations = int(params.get("iter", 3))
        cells = _cells(1.0, h)
        x, y = _centers((cells, cells), h)
        mask = _main_component(_inside_polygon(x, y, _koch_polygon(iterations)), kind)
        params["iter"] = iterations
    else:
        depth = float(params.get("depth", 1.0))
        width = float(params.get("width", 1.0))
        mask = np.ones((_cells(width, h), _cells(depth, h)), dtype=bool)
        periodic = (True, False)

    n = mask.ndim
    periodic = periodic or (False,) * n
    _check_connected(mask, periodic, kind)
    domain = GridDomain(n=n, h=h, mask=mask, origin=(0.0,) * n, kind=kind,
                        params={key: params[key] for key in sorted(params)}, periodic=periodic)
    logger.info(f"✅ Область {kind}: {int(mask.sum())} ячеек, h={h}")
    return domain


def periodic_box(n: int, cells: int, length: float = 1.0) -> GridDomain:
    """Периодический куб [0, length)ⁿ с cells ячейками по оси (для ДПФ)."""
    return GridDomain(n=n, h=length / cells, mask=np.ones((cells,) * n, dtype=bool), origin=(0.0,) * n,
                      kind="box", params={"cells": cells, "length": length}, periodic=(True,) * n)
